"""Smile-dynamics signals, phase segmentation, and the 225-value descriptor.

Three per-frame signals are computed on pose-normalized keypoints:

* lip: mean distance of the lip corners from the first frame's lip-corner
  midpoint, over twice the first frame's lip width (exactly 0.5 at frame 1).
* eye: signed distance of each upper-lid center from its corner-chord
  midpoint (negative when the center sits above the chord, i.e. smaller y),
  both-eye sum over twice the current right-eye chord length.
* cheek: same construction as lip, with the cheek points.

The smile is segmented on the lip signal into onset (longest strictly
increasing run of first differences), apex (the gap until release), and
offset (longest strictly decreasing run at or after onset end). All ranges
are half-open frame intervals aligned with first-difference indices, so a
rise of r steps is an onset of width r. Per (region, phase), 25 dynamics
features are aggregated; regions x phases x features = 225.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry, kernels
from .errors import DegenerateGeometryError, NoPhaseStructureError
from .geometry import (
    LEFT_CHEEK,
    LEFT_EYE_INNER,
    LEFT_EYE_LID,
    LEFT_EYE_OUTER,
    LEFT_LIP_CORNER,
    RIGHT_CHEEK,
    RIGHT_EYE_INNER,
    RIGHT_EYE_LID,
    RIGHT_EYE_OUTER,
    RIGHT_LIP_CORNER,
    LandmarkSequence,
    vertical_relation,
)

REGIONS = ("lip", "eye", "cheek")
PHASES = ("onset", "apex", "offset")
SIDES = ("both", "left", "right")

# The 25 per-phase features, in their canonical (fixed) order.
PHASE_FEATURE_NAMES = (
    "duration_increase",
    "duration_decrease",
    "duration_total",
    "duration_ratio_increase",
    "duration_ratio_decrease",
    "max_amplitude",
    "mean_amplitude",
    "mean_amplitude_increase",
    "mean_amplitude_decrease",
    "std_amplitude",
    "total_amplitude_increase",
    "total_amplitude_decrease",
    "net_amplitude",
    "amplitude_ratio_increase",
    "amplitude_ratio_decrease",
    "max_speed_increase",
    "max_speed_decrease",
    "mean_speed_increase",
    "mean_speed_decrease",
    "max_acceleration_increase",
    "max_acceleration_decrease",
    "mean_acceleration_increase",
    "mean_acceleration_decrease",
    "amplitude_duration_ratio",
    "amplitude_difference",
)

DMARKER_FEATURE_NAMES = tuple(
    f"{region}_{phase}_{feature}"
    for region in REGIONS
    for phase in PHASES
    for feature in PHASE_FEATURE_NAMES
)

N_FEATURES = len(DMARKER_FEATURE_NAMES)

_CHORD_EPS = 1e-12


@dataclass(frozen=True)
class RegionSignal:
    """One smile-dynamics trace: a value per frame."""

    values: np.ndarray
    region: str
    side: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValueError(f"signal must be 1-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("signal values must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class SmilePhases:
    """Half-open [start, end) frame ranges for the three smile phases."""

    onset: tuple[int, int]
    apex: tuple[int, int]
    offset: tuple[int, int]

    def as_dict(self) -> dict:
        return {"onset": list(self.onset), "apex": list(self.apex), "offset": list(self.offset)}


def lip_signal(seq: LandmarkSequence, side: str = "both") -> RegionSignal:
    """Lip-corner spread relative to the first frame (exactly 0.5 there)."""
    return _corner_signal(seq, side, RIGHT_LIP_CORNER, LEFT_LIP_CORNER, "lip")


def cheek_signal(seq: LandmarkSequence, side: str = "both") -> RegionSignal:
    """Cheek displacement relative to the first frame, same form as lip."""
    return _corner_signal(seq, side, RIGHT_CHEEK, LEFT_CHEEK, "cheek")


def _corner_signal(
    seq: LandmarkSequence, side: str, right_idx: int, left_idx: int, region: str
) -> RegionSignal:
    _check_side(side)
    pts = seq.points
    right0 = pts[0, right_idx]
    left0 = pts[0, left_idx]
    width = np.linalg.norm(right0 - left0)
    if width < _CHORD_EPS:
        raise DegenerateGeometryError(f"frame-1 {region} width is below {_CHORD_EPS}")
    mid = 0.5 * (right0 + left0)
    d_right = np.linalg.norm(pts[:, right_idx] - mid, axis=1)
    d_left = np.linalg.norm(pts[:, left_idx] - mid, axis=1)
    if side == "both":
        values = (d_right + d_left) / (2.0 * width)
    elif side == "right":
        values = d_right / width
    else:
        values = d_left / width
    return RegionSignal(values=values, region=region, side=side)


def eye_signal(seq: LandmarkSequence, side: str = "both") -> RegionSignal:
    """Signed eyelid aperture. The per-eye term is the distance from the
    corner-chord midpoint to the upper-lid center, negated when the center
    is above the chord; 'both' sums the eyes over twice the right-eye chord
    length (the right chord alone normalizes both terms, by construction)."""
    _check_side(side)
    pts = seq.points
    n = pts.shape[0]

    def eye_term(outer: int, lid: int, inner: int):
        mid = 0.5 * (pts[:, outer] + pts[:, inner])
        gamma = np.linalg.norm(mid - pts[:, lid], axis=1)
        below = pts[:, lid, 1] < mid[:, 1]
        sign = np.where(below, -1.0, 1.0)
        chord = np.linalg.norm(pts[:, outer] - pts[:, inner], axis=1)
        return sign * gamma, chord

    right_term, right_chord = eye_term(RIGHT_EYE_OUTER, RIGHT_EYE_LID, RIGHT_EYE_INNER)
    left_term, left_chord = eye_term(LEFT_EYE_INNER, LEFT_EYE_LID, LEFT_EYE_OUTER)

    if side == "both":
        denom = 2.0 * right_chord
        numer = right_term + left_term
        chord_used = right_chord
    elif side == "right":
        denom = right_chord
        numer = right_term
        chord_used = right_chord
    else:
        denom = left_chord
        numer = left_term
        chord_used = left_chord

    bad = np.flatnonzero(chord_used < _CHORD_EPS)
    if bad.size:
        raise DegenerateGeometryError(
            f"frame {bad[0]}: eye chord length below {_CHORD_EPS}"
        )
    return RegionSignal(values=numer / denom, region="eye", side=side)


def _check_side(side: str) -> None:
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")


def smooth_signal(values: np.ndarray) -> np.ndarray:
    """Centered moving average, window 3, shrinking at the edges."""
    v = np.asarray(values, dtype=np.float64)
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        lo = max(0, i - 1)
        out[i] = v[lo : i + 2].mean()
    return out


def segment_phases(signal, smooth: bool = False) -> SmilePhases:
    """Locate onset/apex/offset on a region signal.

    Ranges are half-open and aligned with first-difference indices: the
    onset [s, e) covers the frames whose following step rises, so a clip
    rising over r steps yields an onset of width r. Selection policy
    (longest run, earliest on ties) and the fallbacks for absent runs are
    fixed here and mirrored by the brute-force oracle in the tests:

    * no increasing run: onset = [0, 1)
    * no decreasing run starting at or after onset end: offset = [T-1, T)
    * empty gap between them: apex = the single frame at onset end
    """
    values = signal.values if isinstance(signal, RegionSignal) else np.asarray(signal, float)
    n = values.shape[0]
    if n < 3:
        raise ValueError(f"segmentation needs at least 3 frames, got {n}")
    if smooth:
        values = smooth_signal(values)
    diffs = np.diff(values)
    starts, ends, signs = kernels.sign_runs(np.ascontiguousarray(diffs))
    if starts.size == 0:
        raise NoPhaseStructureError("signal is constant; no smile phases exist")

    def pick_longest(mask) -> tuple[int, int] | None:
        best = None
        best_len = 0
        for s, e in zip(starts[mask], ends[mask]):
            if e - s > best_len:
                best = (int(s), int(e))
                best_len = e - s
        return best

    onset = pick_longest(signs > 0)
    if onset is None:
        onset = (0, 1)
    offset = pick_longest((signs < 0) & (starts >= onset[1]))
    if offset is None:
        offset = (n - 1, n)
    apex = (onset[1], offset[0]) if offset[0] > onset[1] else (onset[1], onset[1] + 1)
    return SmilePhases(onset=onset, apex=apex, offset=offset)


def split_monotone(segment) -> tuple[np.ndarray, np.ndarray]:
    """First differences of a segment, split by sign (zeros dropped)."""
    seg = np.asarray(segment, dtype=np.float64)
    if seg.size == 0:
        raise ValueError("segment must be non-empty")
    d = np.diff(seg)
    return d[d > 0], d[d < 0]


def _safe_ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


def _max_or_zero(arr: np.ndarray) -> float:
    return float(arr.max()) if arr.size else 0.0


def phase_features(segment, left_segment, right_segment, fps: float) -> np.ndarray:
    """The 25 dynamics features of one phase slice (Table order is fixed
    by PHASE_FEATURE_NAMES). Magnitude sets come from first differences,
    speeds are differences times fps, accelerations second differences
    times fps squared; any statistic over an empty set is 0."""
    seg = np.asarray(segment, dtype=np.float64)
    left = np.asarray(left_segment, dtype=np.float64)
    right = np.asarray(right_segment, dtype=np.float64)
    if seg.size == 0:
        raise ValueError("segment must be non-empty")
    if left.shape != seg.shape or right.shape != seg.shape:
        raise ValueError("left/right segments must match the segment length")
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")

    d_plus, d_minus = split_monotone(seg)
    sum_plus = float(d_plus.sum())
    sum_minus_abs = float(-d_minus.sum())
    n = seg.size

    vel = np.diff(seg) * fps
    v_plus, v_minus = vel[vel > 0], vel[vel < 0]
    acc = np.diff(seg, n=2) * fps * fps if n >= 3 else np.empty(0)
    a_plus, a_minus = acc[acc > 0], acc[acc < 0]

    total_swing = sum_plus + sum_minus_abs

    out = np.array(
        [
            d_plus.size / fps,
            d_minus.size / fps,
            n / fps,
            d_plus.size / n,
            d_minus.size / n,
            seg.max(),
            seg.mean(),
            _safe_ratio(sum_plus, d_plus.size),
            _safe_ratio(sum_minus_abs, d_minus.size),
            seg.std(),
            sum_plus,
            sum_minus_abs,
            sum_plus - sum_minus_abs,
            _safe_ratio(sum_plus, total_swing),
            _safe_ratio(sum_minus_abs, total_swing),
            _max_or_zero(v_plus),
            _max_or_zero(-v_minus),
            _safe_ratio(float(v_plus.sum()), v_plus.size),
            _safe_ratio(float(-v_minus.sum()), v_minus.size),
            _max_or_zero(a_plus),
            _max_or_zero(-a_minus),
            _safe_ratio(float(a_plus.sum()), a_plus.size),
            _safe_ratio(float(-a_minus.sum()), a_minus.size),
            (sum_plus - sum_minus_abs) * fps / n,
            abs(float(left.sum()) - float(right.sum())) / n,
        ],
        dtype=np.float64,
    )
    return out


def extract_dmarker(seq: LandmarkSequence, smooth: bool = False) -> np.ndarray:
    """Full descriptor of one sequence: 225 values, regions x phases x 25.

    Normalizes the sequence, builds both/left/right signals for the three
    regions, segments phases once on the lip (both sides) signal, and
    aggregates every (region, phase) slice.
    """
    norm = geometry.normalize_sequence(seq)
    signals = {}
    for region, fn in (("lip", lip_signal), ("eye", eye_signal), ("cheek", cheek_signal)):
        for side in SIDES:
            signals[region, side] = fn(norm, side).values

    phases = segment_phases(signals["lip", "both"], smooth=smooth)
    blocks = []
    for region in REGIONS:
        both = signals[region, "both"]
        left = signals[region, "left"]
        right = signals[region, "right"]
        for start, end in (phases.onset, phases.apex, phases.offset):
            blocks.append(
                phase_features(both[start:end], left[start:end], right[start:end], norm.fps)
            )
    return np.concatenate(blocks)


def write_dmarker_csv(rows, path) -> None:
    """Write one descriptor per line: subject_id,label,<225 features>."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label", *DMARKER_FEATURE_NAMES])
        for subject_id, label, vector in rows:
            vec = np.asarray(vector, dtype=np.float64)
            if vec.shape != (N_FEATURES,):
                raise ValueError(f"descriptor must have {N_FEATURES} values, got {vec.shape}")
            writer.writerow([subject_id, int(label), *(repr(v) for v in vec.tolist())])


def read_dmarker_csv(path):
    """Read rows written by write_dmarker_csv.

    Returns (subject_ids, labels, matrix) where matrix is (n, 225).
    """
    import csv

    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["subject_id", "label", *DMARKER_FEATURE_NAMES]
        if header != expected:
            raise ValueError("unexpected descriptor CSV header")
        subjects, labels, vectors = [], [], []
        for row in reader:
            subjects.append(row[0])
            labels.append(int(row[1]))
            vectors.append([float(v) for v in row[2:]])
    matrix = np.array(vectors, dtype=np.float64).reshape(len(vectors), N_FEATURES)
    return subjects, np.array(labels, dtype=np.int64), matrix
