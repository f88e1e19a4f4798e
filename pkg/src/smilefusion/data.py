"""Landmark file IO, manifests, and the synthetic smile generator.

On-disk format (one JSON file per video):

    {"schema": "smilefusion-landmarks-v1",
     "fps": 30.0, "subject_id": "s001", "label": 1,
     "frames": [[[x, y, z] * P] * T]}

A corpus is a CSV manifest with header ``path,subject_id,label,fps``;
relative paths resolve against the manifest's own directory. Next to each
generated video sits a ``*.phases.json`` sidecar recording the half-open
onset/apex/offset frame ranges that produced it, which gives segmentation
tests ground truth that was never derived from the code under test.

The generator poses an 11-point face template through a trapezoidal smile
envelope. Genuine and posed clips share the mouth trajectory; they differ
in the eye region (posed smiles move the lids far less and asymmetrically),
which is exactly the cue the handcrafted descriptors are built to expose.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .dmarker import N_FEATURES, extract_dmarker
from .errors import (
    InvalidConfigError,
    LandmarkParseError,
    SchemaVersionError,
)
from .geometry import (
    LandmarkSequence,
    apply_rigid,
    euler_rotation,
    normalize_sequence,
)

SCHEMA_NAME = "smilefusion-landmarks-v1"

MANIFEST_FIELDS = ("path", "subject_id", "label", "fps")


# -- landmark files ------------------------------------------------------------


def save_landmark_file(path, points, fps: float, subject_id: str, label: int) -> None:
    points = np.asarray(points, dtype=np.float64)
    payload = {
        "schema": SCHEMA_NAME,
        "fps": float(fps),
        "subject_id": str(subject_id),
        "label": int(label),
        "frames": points.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_landmark_file(path) -> LandmarkSequence:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise LandmarkParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise LandmarkParseError(f"{path}: top level must be an object")
    schema = payload.get("schema")
    if schema != SCHEMA_NAME:
        raise SchemaVersionError(
            f"{path}: schema {schema!r}, this reader supports {SCHEMA_NAME!r}"
        )
    for key in ("fps", "subject_id", "label", "frames"):
        if key not in payload:
            raise LandmarkParseError(f"{path}: missing field {key!r}")
    frames = payload["frames"]
    if not isinstance(frames, list) or not frames:
        raise LandmarkParseError(f"{path}: frames must be a non-empty list")
    n_points = None
    for i, frame in enumerate(frames):
        if not isinstance(frame, list):
            raise LandmarkParseError(f"{path}: frame {i} is not a list")
        if n_points is None:
            n_points = len(frame)
        elif len(frame) != n_points:
            raise LandmarkParseError(
                f"{path}: frame {i} has {len(frame)} points, frame 0 has {n_points}"
            )
        for j, point in enumerate(frame):
            if not isinstance(point, list) or len(point) != 3:
                raise LandmarkParseError(
                    f"{path}: frame {i} point {j} must be [x, y, z]"
                )
    try:
        arr = np.asarray(frames, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise LandmarkParseError(f"{path}: non-numeric coordinates ({exc})") from exc
    try:
        return LandmarkSequence(
            points=arr,
            fps=float(payload["fps"]),
            subject_id=str(payload["subject_id"]),
            label=payload["label"],
        )
    except (TypeError, ValueError) as exc:
        raise LandmarkParseError(f"{path}: {exc}") from exc


def save_phase_sidecar(path, onset, apex, offset) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"onset": list(onset), "apex": list(apex), "offset": list(offset)}, fh
        )


def load_phase_sidecar(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    return {k: tuple(payload[k]) for k in ("onset", "apex", "offset")}


def sidecar_path(video_path) -> str:
    base, _ = os.path.splitext(str(video_path))
    return base + ".phases.json"


# -- manifests ------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    path: str  # resolved, absolute or manifest-relative at read time
    subject_id: str
    label: int
    fps: float


def write_manifest(path, rows) -> None:
    """rows: iterables of (relative_path, subject_id, label, fps)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for rel, subject, label, fps in rows:
            writer.writerow([rel, subject, int(label), repr(float(fps))])


def read_manifest(path) -> list[ManifestRow]:
    base = os.path.dirname(os.path.abspath(str(path)))
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(MANIFEST_FIELDS):
            raise LandmarkParseError(
                f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}, "
                f"got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise LandmarkParseError(
                    f"{path}:{lineno}: expected 4 fields, got {len(row)}"
                )
            rel, subject, label_s, fps_s = row
            try:
                label = int(label_s)
                fps = float(fps_s)
            except ValueError as exc:
                raise LandmarkParseError(f"{path}:{lineno}: {exc}") from exc
            if label not in (0, 1):
                raise LandmarkParseError(
                    f"{path}:{lineno}: label must be 0 or 1, got {label}"
                )
            resolved = rel if os.path.isabs(rel) else os.path.join(base, rel)
            rows.append(ManifestRow(resolved, subject, label, fps))
    if not rows:
        raise LandmarkParseError(f"{path}: manifest lists no videos")
    return rows


# -- clip shaping ------------------------------------------------------------------


def pad_truncate(points: np.ndarray, length: int) -> np.ndarray:
    """Fix a clip to `length` frames: keep the first `length` when longer,
    zero-pad at the end when shorter. Always returns a fresh array."""
    points = np.asarray(points, dtype=np.float64)
    t = points.shape[0]
    if t >= length:
        return points[:length].copy()
    out = np.zeros((length,) + points.shape[1:], dtype=np.float64)
    out[:t] = points
    return out


# -- datasets -----------------------------------------------------------------------


@dataclass
class VideoSample:
    sequence: LandmarkSequence
    path: str


@dataclass
class Dataset:
    """Model-ready corpus: canonicalized fixed-length clips plus raw
    (unstandardized) descriptor vectors."""

    clips: np.ndarray  # [N, T, 11, 3]
    markers: np.ndarray  # [N, 225]
    labels: np.ndarray  # [N] ints
    subjects: np.ndarray  # [N] strings

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(
            clips=self.clips[mask],
            markers=self.markers[mask],
            labels=self.labels[mask],
            subjects=self.subjects[mask],
        )


def load_corpus(manifest_path) -> list[VideoSample]:
    samples = []
    for row in read_manifest(manifest_path):
        seq = load_landmark_file(row.path)
        if seq.subject_id != row.subject_id or seq.label != row.label:
            raise LandmarkParseError(
                f"{row.path}: manifest says subject {row.subject_id!r} label "
                f"{row.label}, file says {seq.subject_id!r} label {seq.label}"
            )
        samples.append(VideoSample(sequence=seq, path=row.path))
    return samples


def build_dataset(manifest_path, seq_len: int, smooth: bool = False) -> Dataset:
    """Load every video, extract descriptors on the full-length sequence,
    and shape canonicalized clips to `seq_len` frames.

    Descriptors never see padding: they are computed before pad_truncate,
    on however many frames the video really has."""
    samples = load_corpus(manifest_path)
    n = len(samples)
    clips = np.empty((n, seq_len, 11, 3), dtype=np.float64)
    markers = np.empty((n, N_FEATURES), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    subjects = np.empty(n, dtype=object)
    for i, sample in enumerate(samples):
        seq = sample.sequence
        markers[i] = extract_dmarker(seq, smooth=smooth)
        canonical = normalize_sequence(seq)
        clips[i] = pad_truncate(canonical.points, seq_len)
        labels[i] = seq.label
        subjects[i] = seq.subject_id
    return Dataset(clips=clips, markers=markers, labels=labels, subjects=subjects)


# -- synthetic corpus ------------------------------------------------------------------

# Neutral face in canonical coordinates: x left-positive across the eyes,
# y growing downward (eye line toward mouth), z out of the face plane.
# Eye-corner span is exactly 1 so the canonical scale is 1.
_TEMPLATE = np.array(
    [
        [-0.50, -0.30, 0.00],  # right eye outer corner
        [-0.35, -0.36, 0.00],  # right lid center (above the chord)
        [-0.20, -0.30, 0.00],  # right eye inner corner
        [0.20, -0.30, 0.00],  # left eye inner corner
        [0.35, -0.36, 0.00],  # left lid center
        [0.50, -0.30, 0.00],  # left eye outer corner
        [-0.40, 0.10, 0.05],  # right cheek
        [0.40, 0.10, 0.05],  # left cheek
        [0.00, 0.00, 0.00],  # nose tip
        [-0.25, 0.35, 0.02],  # right lip corner
        [0.25, 0.35, 0.02],  # left lip corner
    ],
    dtype=np.float64,
)

_LID_OFFSET = 0.06  # resting lid height above the corner chord


@dataclass
class SyntheticConfig:
    n_subjects: int = 10
    clips_per_subject: int = 20
    fps: float = 30.0
    seed: int = 0
    # trapezoid phase lengths, inclusive bounds drawn per clip
    onset_frames: tuple[int, int] = (3, 6)
    apex_frames: tuple[int, int] = (2, 5)
    offset_frames: tuple[int, int] = (3, 6)
    # smile cues (fractions of canonical units at full envelope)
    lip_widen: float = 0.08
    lip_raise: float = 0.06
    cheek_raise: float = 0.05
    eye_closure: float = 0.6  # genuine lid travel, fraction of _LID_OFFSET
    posed_residual: float = 0.3  # posed lid travel relative to genuine
    posed_asymmetry: float = 0.35  # right/left imbalance of posed lids
    amplitude_jitter: float = 0.2  # per-clip scale ~ U[1-j, 1+j]
    subject_sigma: float = 0.02  # per-subject template perturbation
    # camera placement, one rigid transform per clip
    pose_jitter: bool = True
    rotation_deg: float = 20.0
    scale_range: tuple[float, float] = (0.7, 1.3)
    translation: float = 0.5
    # per-coordinate gaussian tracker noise, applied in camera space
    noise_std: float = 0.0

    def validate(self) -> "SyntheticConfig":
        if self.n_subjects < 1 or self.clips_per_subject < 1:
            raise InvalidConfigError("n_subjects and clips_per_subject must be >= 1")
        if self.fps <= 0:
            raise InvalidConfigError("fps must be positive")
        for name in ("onset_frames", "apex_frames", "offset_frames"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise InvalidConfigError(f"{name} bounds must satisfy 1 <= lo <= hi")
        if not 0 <= self.posed_residual <= 1 or not 0 <= self.posed_asymmetry < 1:
            raise InvalidConfigError("posed cue factors out of range")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise InvalidConfigError("scale_range must satisfy 0 < lo <= hi")
        if self.rotation_deg < 0 or self.translation < 0:
            raise InvalidConfigError("pose jitter magnitudes must be >= 0")
        if self.noise_std < 0:
            raise InvalidConfigError("noise_std must be >= 0")
        return self


def trapezoid_envelope(rise: int, hold: int, fall: int) -> np.ndarray:
    """Smile intensity over rise+hold+fall+1 frames: 0 up to 1, flat, back
    to 0. Differences are strictly +, exactly 0, strictly - per segment."""
    up = np.arange(rise + 1) / rise
    flat = np.ones(hold)
    down = np.arange(fall - 1, -1, -1) / fall
    return np.concatenate([up, flat, down])


def _subject_template(rng: np.random.Generator, sigma: float) -> np.ndarray:
    """Perturb the neutral template per subject, rebuilding lid centers from
    the perturbed chords so resting aperture stays controlled."""
    face = _TEMPLATE + rng.normal(0.0, sigma, _TEMPLATE.shape)
    for lid, outer, inner in ((1, 0, 2), (4, 5, 3)):
        chord_mid = 0.5 * (face[outer] + face[inner])
        face[lid] = chord_mid + np.array([0.0, -_LID_OFFSET, 0.0])
        face[lid, 1] += rng.normal(0.0, sigma / 2)
    return face


def synth_clip(
    face: np.ndarray,
    label: int,
    envelope: np.ndarray,
    amplitude: float,
    cfg: SyntheticConfig,
) -> np.ndarray:
    """Animate one face through the envelope. Returns [T, 11, 3] in
    canonical coordinates (no camera pose, no noise)."""
    t = len(envelope)
    frames = np.tile(face, (t, 1, 1))
    phi = envelope[:, None] * amplitude

    widen = cfg.lip_widen * phi
    raise_y = cfg.lip_raise * phi
    frames[:, 9, 0] -= widen[:, 0]
    frames[:, 10, 0] += widen[:, 0]
    frames[:, 9, 1] -= raise_y[:, 0]
    frames[:, 10, 1] -= raise_y[:, 0]

    frames[:, 6, 1] -= cfg.cheek_raise * phi[:, 0]
    frames[:, 7, 1] -= cfg.cheek_raise * phi[:, 0]

    if label == 1:
        lid_right = lid_left = cfg.eye_closure
    else:
        base = cfg.eye_closure * cfg.posed_residual
        lid_right = base * (1.0 + cfg.posed_asymmetry)
        lid_left = base * (1.0 - cfg.posed_asymmetry)
    # lids travel down toward the chord (aperture narrows as the smile peaks)
    frames[:, 1, 1] += _LID_OFFSET * lid_right * phi[:, 0]
    frames[:, 4, 1] += _LID_OFFSET * lid_left * phi[:, 0]
    return frames


def synth_generate(cfg: SyntheticConfig, out_dir) -> str:
    """Write a full corpus under out_dir and return the manifest path.

    Layout: out_dir/manifest.csv plus out_dir/videos/<subject>_<clip>.json
    with a phase sidecar next to each video. Deterministic in cfg.seed, and
    each subject draws from its own child stream, so the same subject index
    always produces the same faces no matter how many subjects exist."""
    cfg.validate()
    out_dir = str(out_dir)
    video_dir = os.path.join(out_dir, "videos")
    os.makedirs(video_dir, exist_ok=True)

    manifest_rows = []
    for s in range(cfg.n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, s)))
        subject = f"s{s:03d}"
        face = _subject_template(rng, cfg.subject_sigma)
        for c in range(cfg.clips_per_subject):
            label = 1 if c % 2 == 0 else 0
            rise = int(rng.integers(cfg.onset_frames[0], cfg.onset_frames[1] + 1))
            hold = int(rng.integers(cfg.apex_frames[0], cfg.apex_frames[1] + 1))
            fall = int(rng.integers(cfg.offset_frames[0], cfg.offset_frames[1] + 1))
            amplitude = 1.0 + cfg.amplitude_jitter * (2.0 * rng.random() - 1.0)
            envelope = trapezoid_envelope(rise, hold, fall)
            frames = synth_clip(face, label, envelope, amplitude, cfg)

            if cfg.pose_jitter:
                max_rad = np.deg2rad(cfg.rotation_deg)
                angles = rng.uniform(-max_rad, max_rad, size=3)
                rotation = euler_rotation(*angles)
                scale = rng.uniform(*cfg.scale_range)
                translation = rng.uniform(-cfg.translation, cfg.translation, size=3)
                frames = apply_rigid(frames, rotation, scale, translation)
            if cfg.noise_std > 0:
                frames = frames + rng.normal(0.0, cfg.noise_std, frames.shape)

            name = f"{subject}_clip{c:03d}.json"
            path = os.path.join(video_dir, name)
            save_landmark_file(path, frames, cfg.fps, subject, label)
            save_phase_sidecar(
                sidecar_path(path),
                onset=(0, rise),
                apex=(rise, rise + hold),
                offset=(rise + hold, rise + hold + fall),
            )
            manifest_rows.append((f"videos/{name}", subject, label, cfg.fps))

    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest_path, manifest_rows)
    return manifest_path
