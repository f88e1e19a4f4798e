"""Landmark selection and per-frame pose canonicalization.

Input sequences carry dense 3-D facial landmarks (raw tracker output, any
landmark count that covers the required indices). Eleven keypoints around
the eyes, cheeks, nose, and lip corners drive everything downstream:

    index  0  right eye, outer corner      (raw landmark 33)
    index  1  right eye, upper-lid center  (raw landmark 159)
    index  2  right eye, inner corner      (raw landmark 133)
    index  3  left eye, inner corner       (raw landmark 362)
    index  4  left eye, upper-lid center   (raw landmark 386)
    index  5  left eye, outer corner       (raw landmark 263)
    index  6  right cheek                  (raw landmark 50)
    index  7  left cheek                   (raw landmark 280)
    index  8  nose tip                     (raw landmark 1)
    index  9  right lip corner             (raw landmark 62)
    index 10  left lip corner              (raw landmark 308)

Pose canonicalization removes head rotation, translation, and camera
distance per frame: a least-squares plane is fit to the four eye corners
plus the nose tip, oriented consistently, and each frame is expressed in
that face-fixed axis system, scaled by the index-0-to-index-5 corner
distance. In canonical coordinates +y points from the eye line toward the
mouth, so lowering of a point shows up as increasing y.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, KeypointIndexError

RAW_KEYPOINT_INDICES = (33, 159, 133, 362, 386, 263, 50, 280, 1, 62, 308)
N_KEYPOINTS = len(RAW_KEYPOINT_INDICES)

RIGHT_EYE_OUTER = 0
RIGHT_EYE_LID = 1
RIGHT_EYE_INNER = 2
LEFT_EYE_INNER = 3
LEFT_EYE_LID = 4
LEFT_EYE_OUTER = 5
RIGHT_CHEEK = 6
LEFT_CHEEK = 7
NOSE_TIP = 8
RIGHT_LIP_CORNER = 9
LEFT_LIP_CORNER = 10

# Plane-fit reference set: both eye-corner pairs and the nose tip. These
# points are rigid under expression change, so the recovered pose does not
# leak smile motion.
_PLANE_POINTS = (
    RIGHT_EYE_OUTER,
    RIGHT_EYE_INNER,
    LEFT_EYE_INNER,
    LEFT_EYE_OUTER,
    NOSE_TIP,
)

# Relative threshold deciding when the reference points are too close to a
# line (or a point) for the plane fit to mean anything.
_DEGENERACY_RATIO = 1e-12


@dataclass(frozen=True)
class LandmarkSequence:
    """A tracked landmark video: points[frame, landmark, xyz]."""

    points: np.ndarray
    fps: float
    subject_id: str
    label: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise ValueError(f"points must be (frames, landmarks, 3), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError(f"need at least 2 frames, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ValueError(f"fps must be positive and finite, got {self.fps}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "points", pts)

    @property
    def n_frames(self) -> int:
        return self.points.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class RigidPose:
    """Rotation (proper, det +1), isotropic scale, translation."""

    rotation: np.ndarray
    scale: float
    translation: np.ndarray


def select_keypoints(frame: np.ndarray) -> np.ndarray:
    """Pick the 11 working keypoints out of a dense (P, 3) frame.

    Frames that already carry exactly 11 points are taken as-is (already
    selected); otherwise the raw tracker indices above are used.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[1] != 3:
        raise ValueError(f"frame must be (landmarks, 3), got {frame.shape}")
    if frame.shape[0] == N_KEYPOINTS:
        return frame
    needed = max(RAW_KEYPOINT_INDICES)
    if frame.shape[0] <= needed:
        raise KeypointIndexError(
            f"frame has {frame.shape[0]} landmarks, need index {needed}"
        )
    return frame[list(RAW_KEYPOINT_INDICES)]


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two points."""
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


def vertical_relation(anchor: np.ndarray, point: np.ndarray) -> int:
    """-1 when `point` sits above `anchor` (smaller y), +1 otherwise.

    Canonical y grows downward (eye line toward mouth), so for an eye this
    reports whether the lid center is above the corner chord. Ties count
    as +1.
    """
    return -1 if point[1] < anchor[1] else 1


def estimate_pose(frame: np.ndarray) -> RigidPose:
    """Recover the face-fixed pose of one 11-keypoint frame.

    The rotation columns are the canonical axes expressed in input
    coordinates: x along the eye line (right eye outer corner toward left
    eye outer corner), z the oriented plane normal, y their cross product.
    Scale is the eye-corner distance; translation is the nose tip.
    """
    pts = np.asarray(frame, dtype=np.float64)
    if pts.shape != (N_KEYPOINTS, 3):
        raise ValueError(f"expected ({N_KEYPOINTS}, 3) keypoints, got {pts.shape}")

    ref = pts[list(_PLANE_POINTS)]
    centroid = ref.mean(axis=0)
    centered = ref - centroid
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 0.0)
    if evals[2] <= 0.0 or evals[1] < _DEGENERACY_RATIO * evals[2]:
        raise DegenerateGeometryError(
            "plane-fit reference points are collinear or coincident"
        )
    normal = evecs[:, 0]

    p_right = pts[RIGHT_EYE_OUTER]
    p_left = pts[LEFT_EYE_OUTER]
    nose = pts[NOSE_TIP]
    eye_line = p_left - p_right
    down_hint = np.cross(eye_line, nose - 0.5 * (p_right + p_left))
    hint_norm = np.linalg.norm(down_hint)
    if hint_norm < _DEGENERACY_RATIO * max(
        np.linalg.norm(eye_line) ** 2, 1e-300
    ):
        raise DegenerateGeometryError(
            "eye corners and nose tip are collinear; normal orientation undefined"
        )
    if float(down_hint @ normal) < 0.0:
        normal = -normal

    in_plane = eye_line - float(eye_line @ normal) * normal
    in_plane_norm = np.linalg.norm(in_plane)
    if in_plane_norm < _DEGENERACY_RATIO:
        raise DegenerateGeometryError("eye line is perpendicular to the face plane")
    x_axis = in_plane / in_plane_norm
    y_axis = np.cross(normal, x_axis)
    rotation = np.column_stack([x_axis, y_axis, normal])

    scale = distance(p_right, p_left)
    if scale <= 0.0:
        raise DegenerateGeometryError("eye-corner distance is zero")
    return RigidPose(rotation=rotation, scale=scale, translation=nose.copy())


def normalize_frame(frame: np.ndarray, pose: RigidPose) -> np.ndarray:
    """Express one keypoint frame in its canonical face-fixed system."""
    pts = np.asarray(frame, dtype=np.float64)
    return (pts - pose.translation) @ pose.rotation / pose.scale


def normalize_sequence(seq: LandmarkSequence) -> LandmarkSequence:
    """Canonicalize every frame of a sequence independently.

    Accepts dense or pre-selected frames; the result always carries the 11
    keypoints. Degeneracies propagate with the frame index attached.
    """
    frames = seq.points
    out = np.empty((frames.shape[0], N_KEYPOINTS, 3), dtype=np.float64)
    for i in range(frames.shape[0]):
        try:
            keypoints = select_keypoints(frames[i])
            pose = estimate_pose(keypoints)
            out[i] = normalize_frame(keypoints, pose)
        except DegenerateGeometryError as exc:
            raise DegenerateGeometryError(f"frame {i}: {exc}") from exc
    return LandmarkSequence(
        points=out, fps=seq.fps, subject_id=seq.subject_id, label=seq.label
    )


# -- rigid-motion helpers (used by the synthetic generator and tests) ----------


def euler_rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix from extrinsic x, y, z rotations (applied in that
    order: R = Rz @ Ry @ Rx), angles in radians."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=np.float64)
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=np.float64)
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=np.float64)
    return rot_z @ rot_y @ rot_x


def apply_rigid(
    points: np.ndarray, rotation: np.ndarray, scale: float, translation: np.ndarray
) -> np.ndarray:
    """Map points through p -> scale * R p + t. Works on (..., 3) arrays.

    This is the inverse of normalize_frame for the same pose, so for a
    canonical frame F: normalize_frame(apply_rigid(F, R, s, t), pose) == F
    once pose is re-estimated from the transformed frame.
    """
    pts = np.asarray(points, dtype=np.float64)
    return scale * pts @ np.asarray(rotation, float).T + np.asarray(translation, float)
