"""Monte Carlo field-of-view overlap between camera poses.

Overlap between a target view and a set of reference views is estimated by
sampling points uniformly in a ball around the target camera, checking which
points fall inside each view's frustum, and counting coincidences. The raw
ratio is the fraction of all samples visible in both views; the normalized
ratio divides by the fraction visible in the target view, so a reference
pose identical to the target scores exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import HALF_PI, Pose

DEFAULT_SAMPLES = 10_000
DEFAULT_RANGE = 30.0


@dataclass(frozen=True)
class FovSpec:
    """Symmetric frustum: half-angles in radians plus a sampling radius."""

    horizontal_half_angle: float
    vertical_half_angle: float
    max_range: float = DEFAULT_RANGE

    def validate(self) -> "FovSpec":
        for angle in (self.horizontal_half_angle, self.vertical_half_angle):
            if not (0.0 < angle < HALF_PI):
                raise InvalidInputError(f"half-angle {angle} outside (0, pi/2)")
        if self.max_range <= 0:
            raise InvalidInputError("max_range must be positive")
        return self

    @staticmethod
    def square(half_angle: float = math.pi / 4, max_range: float = DEFAULT_RANGE) -> "FovSpec":
        return FovSpec(half_angle, half_angle, max_range)


@dataclass(frozen=True)
class SampleCloud:
    """Uniform ball samples used by one overlap estimate."""

    points: np.ndarray  # (M, 3) world positions
    center: np.ndarray  # (3,) ball center
    radius: float
    seed: int

    @property
    def m(self) -> int:
        return len(self.points)


def sample_sphere(m: int, radius: float, center, seed: int) -> SampleCloud:
    """Draw m points uniformly from the solid ball of ``radius`` at ``center``.

    Bit-reproducible for a fixed seed.
    """
    if m < 1:
        raise InvalidInputError(f"sample count must be >= 1, got {m}")
    if radius <= 0:
        raise InvalidInputError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((m, 3))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0  # degenerate draws land at the center
    dirs /= norms
    radii = radius * np.cbrt(rng.random(m))
    return SampleCloud(center + dirs * radii[:, None], center, radius, seed)


def _pose_rows(poses) -> np.ndarray:
    if isinstance(poses, Pose):
        return poses.as_array()[None, :]
    rows = np.asarray(
        [p.as_array() if isinstance(p, Pose) else np.asarray(p, dtype=np.float64) for p in poses]
    )
    return rows.reshape(-1, 5)


def fov_masks(points: np.ndarray, poses, fov: FovSpec) -> np.ndarray:
    """Frustum-containment masks, shape (F, M), for F poses over M points.

    A point is inside when, expressed in the camera frame, it lies strictly
    in front of the camera (the view axis is -z) and both its horizontal and
    vertical angles are <= the half-angles; boundary points count as inside.
    """
    fov.validate()
    rows = _pose_rows(poses)
    pitch, yaw = rows[:, 3], rows[:, 4]
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rot = np.empty((len(rows), 3, 3))
    rot[:, 0, 0], rot[:, 0, 1], rot[:, 0, 2] = cy, sy * sp, sy * cp
    rot[:, 1, 0], rot[:, 1, 1], rot[:, 1, 2] = 0.0, cp, -sp
    rot[:, 2, 0], rot[:, 2, 1], rot[:, 2, 2] = -sy, cy * sp, cy * cp
    centers = rows[:, [0, 2, 1]]

    # camera-frame coordinates: R^T (q - c), batched over poses
    diff = points[None, :, :] - centers[:, None, :]
    cam = np.einsum("fji,fmj->fmi", rot, diff)
    forward = -cam[:, :, 2]  # distance along the view axis
    tan_h = math.tan(fov.horizontal_half_angle)
    tan_v = math.tan(fov.vertical_half_angle)
    return (
        (forward > 0.0)
        & (np.abs(cam[:, :, 0]) <= tan_h * forward)
        & (np.abs(cam[:, :, 1]) <= tan_v * forward)
    )


def is_inside_fov(cloud: SampleCloud, pose: Pose, fov: FovSpec) -> np.ndarray:
    """Boolean mask over the cloud's points for a single pose."""
    pose.validate()
    return fov_masks(cloud.points, pose, fov)[0]


def overlap_from_masks(ref_masks: np.ndarray, tgt_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw and normalized overlap ratios from precomputed masks."""
    m = float(len(tgt_mask))
    tgt = tgt_mask.astype(np.float64)
    raw = ref_masks.astype(np.float64) @ tgt / m
    denom = tgt.sum() / m
    normalized = raw / denom if denom > 0 else np.zeros_like(raw)
    return raw, normalized


def overlap_ratios(
    ref_poses,
    target: Pose,
    fov: FovSpec,
    m: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo FOV overlap between each reference pose and the target.

    Samples one shared cloud centered on the target camera, then counts
    joint visibility. Returns ``(raw, normalized)`` vectors of length F;
    the normalized ratio is the one used for retrieval confidence.
    """
    target.validate()
    cloud = sample_sphere(m, fov.max_range, target.position(), seed)
    ref_masks = fov_masks(cloud.points, ref_poses, fov)
    tgt_mask = fov_masks(cloud.points, target, fov)[0]
    return overlap_from_masks(ref_masks, tgt_mask)
