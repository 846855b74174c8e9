"""Camera pose math: extrinsics, Plucker ray maps, sinusoidal time embeddings.

Conventions (fixed once, used everywhere):

* A pose is 5-DoF: ``(x, y, z, pitch, yaw)``. ``(x, y)`` span the ground
  plane and ``z`` is altitude. Angles are radians; pitch rotates about the
  camera x-axis (positive looks up), yaw about the world up-axis.
* The camera world frame is right-handed y-up. Pose coordinates pack into
  a world translation as ``c = (x, z, y)``: the pose's altitude lands in
  the world frame's "up" slot.
* Camera rotation is ``R = R_y(yaw) @ R_x(pitch)``. At identity the camera
  looks down world -Z (pose-space -y); image +u is world +x, image +v is
  down (world -y).
* Pixel ``(u, v)`` maps to the camera-frame ray
  ``((u - cx)/fx, (cy - v)/fy, -1)``; the v flip puts small v (top of the
  image) above the horizon.

All functions are pure and operate on float64 numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

HALF_PI = math.pi / 2.0


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose:
    """5-DoF camera state: ground-plane position, altitude, pitch, yaw."""

    x: float
    y: float
    z: float
    pitch: float
    yaw: float

    def validate(self, strict_pitch: bool = True) -> "Pose":
        """Check the pose invariants; returns self for chaining.

        ``strict_pitch=False`` admits relative poses whose pitch offset may
        exceed the absolute-pose range of [-pi/2, pi/2].
        """
        values = (self.x, self.y, self.z, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in values):
            raise InvalidInputError(f"non-finite pose component: {values}")
        if strict_pitch and abs(self.pitch) > HALF_PI + 1e-6:  # f32 storage headroom
            raise InvalidInputError(f"pitch {self.pitch} outside [-pi/2, pi/2]")
        return self

    def normalized(self) -> "Pose":
        """Return a copy with yaw wrapped to (-pi, pi]."""
        return Pose(self.x, self.y, self.z, self.pitch, normalize_yaw(self.yaw))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.pitch, self.yaw], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "Pose":
        a = np.asarray(a, dtype=np.float64)
        return Pose(float(a[0]), float(a[1]), float(a[2]), float(a[3]), float(a[4]))

    def position(self) -> np.ndarray:
        """World-frame translation, packed as (x, z, y)."""
        return np.array([self.x, self.z, self.y], dtype=np.float64)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float
    width: int
    height: int

    def validate(self) -> "Intrinsics":
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if not (0 <= self.principal_x <= self.width and 0 <= self.principal_y <= self.height):
            raise InvalidInputError("principal point outside image bounds")
        return self

    @staticmethod
    def square(size: int, focal: float) -> "Intrinsics":
        return Intrinsics(focal, focal, size / 2.0, size / 2.0, size, size)

    def half_angles(self) -> tuple[float, float]:
        """Horizontal/vertical half field-of-view implied by the frustum."""
        return (
            math.atan((self.width / 2.0) / self.focal_x),
            math.atan((self.height / 2.0) / self.focal_y),
        )


@dataclass(frozen=True)
class Extrinsic:
    """World-from-camera rotation and translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Extrinsic":
        rt = self.rotation.T
        return Extrinsic(rt, -rt @ self.translation)

    def compose(self, other: "Extrinsic") -> "Extrinsic":
        return Extrinsic(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def build_extrinsic(pose: Pose) -> Extrinsic:
    """Camera-to-world transform: R = R_y(yaw) R_x(pitch), t = (x, z, y)."""
    pose.validate(strict_pitch=False)
    return Extrinsic(rotation_y(pose.yaw) @ rotation_x(pose.pitch), pose.position())


def relative_extrinsic(query: Pose, key: Pose) -> Extrinsic:
    """Key camera expressed in the query camera frame: T_q^-1 @ T_k."""
    return build_extrinsic(query).inverse().compose(build_extrinsic(key))


def camera_forward(pose: Pose) -> np.ndarray:
    """Unit view direction in the world frame (camera looks down -z)."""
    return build_extrinsic(pose).rotation @ np.array([0.0, 0.0, -1.0])


def pixel_directions(intr: Intrinsics) -> np.ndarray:
    """Camera-frame ray direction per pixel center, shape (H, W, 3).

    Unnormalized: ((u - cx)/fx, (cy - v)/fy, -1) at pixel centers
    (u = col + 0.5, v = row + 0.5).
    """
    intr.validate()
    u = np.arange(intr.width, dtype=np.float64) + 0.5
    v = np.arange(intr.height, dtype=np.float64) + 0.5
    xs = (u - intr.principal_x) / intr.focal_x
    ys = (intr.principal_y - v) / intr.focal_y
    dirs = np.empty((intr.height, intr.width, 3))
    dirs[:, :, 0] = xs[None, :]
    dirs[:, :, 1] = ys[:, None]
    dirs[:, :, 2] = -1.0
    return dirs


def plucker_embed(pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Per-pixel Plucker 6-vector map, shape (H, W, 6).

    Channels 0..2 hold the moment ``c x d`` and channels 3..5 the unit ray
    direction ``d`` in the world frame, so moment . direction == 0 and
    |direction| == 1 for every pixel.
    """
    return plucker_embed_batch(pose.as_array()[None, :], intr)[0]


def plucker_embed_batch(poses: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """Vectorized ``plucker_embed`` over P poses, shape (P, H, W, 6)."""
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 2 or poses.shape[1] != 5:
        raise InvalidInputError(f"expected (P, 5) pose array, got {poses.shape}")
    if not np.all(np.isfinite(poses)):
        raise InvalidInputError("non-finite pose component in batch")

    pitch, yaw = poses[:, 3], poses[:, 4]
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    # R_y(yaw) @ R_x(pitch), written out per pose.
    rot = np.empty((len(poses), 3, 3))
    rot[:, 0, 0], rot[:, 0, 1], rot[:, 0, 2] = cy, sy * sp, sy * cp
    rot[:, 1, 0], rot[:, 1, 1], rot[:, 1, 2] = 0.0, cp, -sp
    rot[:, 2, 0], rot[:, 2, 1], rot[:, 2, 2] = -sy, cy * sp, cy * cp
    centers = poses[:, [0, 2, 1]]  # (x, z, y) packing

    cam_dirs = pixel_directions(intr)  # (H, W, 3)
    world = np.einsum("pij,hwj->phwi", rot, cam_dirs)
    world /= np.linalg.norm(world, axis=-1, keepdims=True)
    moment = np.cross(np.broadcast_to(centers[:, None, None, :], world.shape), world)
    return np.concatenate([moment, world], axis=-1)


def sinusoidal_time_embed(t: float, dim: int, base: float = 10000.0) -> np.ndarray:
    """Interleaved (sin, cos) embedding over geometrically spaced frequencies.

    Frequency i is ``base ** (-i / (dim/2))`` so the first pair oscillates at
    unit frequency. Negative t is allowed (relative timestamps).
    """
    if dim <= 0 or dim % 2 != 0:
        raise InvalidInputError(f"embedding dim must be positive and even, got {dim}")
    half = dim // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) / half)
    phases = t * freqs
    out = np.empty(dim)
    out[0::2] = np.sin(phases)
    out[1::2] = np.cos(phases)
    return out
