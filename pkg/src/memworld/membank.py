"""Append-only memory bank of frame tokens plus retrieval.

Each unit stores token-level frame content together with the camera pose and
frame timestamp. Retrieval scores every unit by FOV overlap with the query
view minus a time-distance penalty, then greedily selects up to L_M units
while filtering out near-duplicate views.

One Monte Carlo sample cloud (centered on the query camera) is shared by the
confidence pass and the pairwise similarity filter of a single retrieve call,
so a call costs one RNG draw and O((N + L_M * N) * M) mask work.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidInputError, VersionError
from .geometry import Pose
from .visibility import FovSpec, fov_masks, overlap_from_masks, sample_sphere

BANK_MAGIC = b"MWB1"
BANK_VERSION = 1


@dataclass(frozen=True)
class MemoryUnit:
    """One stored frame: tokens (token_count, channel_dim) + pose + timestamp."""

    tokens: np.ndarray
    pose: Pose
    timestamp: int


@dataclass(frozen=True)
class RetrievalConfig:
    """Knobs for the greedy overlap-based retrieval."""

    memory_length: int  # L_M
    fov: FovSpec
    similarity_threshold: float = 0.9  # tr
    overlap_weight: float = 1.0  # w_o
    time_weight_numerator: float = 0.2  # w_t = numerator / t_c
    time_weighting: bool = True  # ablation switch: False forces w_t = 0
    mc_samples: int = 10_000
    seed: int = 0

    def validate(self) -> "RetrievalConfig":
        if self.memory_length < 1:
            raise InvalidInputError("memory_length must be >= 1")
        if not (0.0 < self.similarity_threshold <= 1.0):
            raise InvalidInputError("similarity_threshold must be in (0, 1]")
        self.fov.validate()
        return self

    def time_weight(self, current_time: int) -> float:
        """w_t at the query timestamp; 0 at t=0 (no history to discount)."""
        if not self.time_weighting or current_time <= 0:
            return 0.0
        return self.time_weight_numerator / float(current_time)


def select_memory_indices(
    poses: np.ndarray,
    timestamps: np.ndarray,
    current_pose: Pose,
    current_time: int,
    cfg: RetrievalConfig,
) -> list[int]:
    """Greedy confidence-ranked selection with similarity filtering.

    ``poses`` is (N, 5) and ``timestamps`` (N,); returns at most
    ``cfg.memory_length`` indices into those arrays. Ties in confidence are
    broken toward the temporally closer unit, then the lower index.
    """
    cfg.validate()
    n = len(poses)
    if n == 0:
        return []

    cloud = sample_sphere(cfg.mc_samples, cfg.fov.max_range, current_pose.position(), cfg.seed)
    masks = fov_masks(cloud.points, poses, cfg.fov)
    tgt_mask = fov_masks(cloud.points, current_pose, cfg.fov)[0]
    _, overlap = overlap_from_masks(masks, tgt_mask)

    time_dist = np.abs(np.asarray(timestamps, dtype=np.float64) - float(current_time))
    alpha = overlap * cfg.overlap_weight - time_dist * cfg.time_weight(current_time)

    # static preference order: highest alpha, then nearest in time, then index
    order = sorted(range(n), key=lambda i: (-alpha[i], time_dist[i], i))
    floats = masks.astype(np.float64)
    counts = floats.sum(axis=1)
    alive = np.ones(n, dtype=bool)
    selected: list[int] = []
    for _ in range(cfg.memory_length):
        pick = next((i for i in order if alive[i]), None)
        if pick is None:
            break
        selected.append(pick)
        # similarity(pick, j): fraction of j's visible samples that the
        # picked view also sees, on the shared cloud
        joint = floats @ floats[pick]
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(counts > 0, joint / counts, 0.0)
        alive &= ~(sim > cfg.similarity_threshold)
        alive[pick] = False
    return selected


def pad_to_length(selected: list[int], memory_length: int) -> tuple[list[int], bool]:
    """Repeat-pad a selection to the fixed window size.

    Returns ``(indices, use_null)``; an empty selection stays empty and the
    caller substitutes the learned null-memory tokens instead.
    """
    if not selected:
        return [], True
    padded = list(selected[:memory_length])
    while len(padded) < memory_length:
        padded.append(padded[-1])
    return padded, False


class MemoryBank:
    """Ordered, append-only store of memory units with fixed token geometry."""

    def __init__(self, token_count: int, channel_dim: int):
        if token_count < 1 or channel_dim < 1:
            raise InvalidInputError("token geometry must be positive")
        self.token_count = token_count
        self.channel_dim = channel_dim
        self.units: list[MemoryUnit] = []
        self._pose_rows: list[np.ndarray] = []
        self._timestamps: list[int] = []

    def __len__(self) -> int:
        return len(self.units)

    def append(self, unit: MemoryUnit) -> None:
        tokens = np.asarray(unit.tokens, dtype=np.float32)
        if tokens.shape != (self.token_count, self.channel_dim):
            raise InvalidInputError(
                f"token geometry {tokens.shape} != bank geometry "
                f"({self.token_count}, {self.channel_dim})"
            )
        if self.units and unit.timestamp <= self.units[-1].timestamp:
            raise InvalidInputError(
                f"timestamp {unit.timestamp} not greater than last "
                f"{self.units[-1].timestamp}"
            )
        unit.pose.validate()
        self.units.append(MemoryUnit(tokens, unit.pose, int(unit.timestamp)))
        self._pose_rows.append(unit.pose.as_array())
        self._timestamps.append(int(unit.timestamp))

    def poses_array(self) -> np.ndarray:
        if not self._pose_rows:
            return np.zeros((0, 5))
        return np.stack(self._pose_rows)

    def timestamps_array(self) -> np.ndarray:
        return np.asarray(self._timestamps, dtype=np.int64)

    def confidence_scores(
        self, current_pose: Pose, current_time: int, cfg: RetrievalConfig
    ) -> np.ndarray:
        """Per-unit confidence: normalized overlap * w_o - |dt| * w_t."""
        if not self.units:
            raise InvalidInputError("confidence_scores on an empty bank")
        cfg.validate()
        cloud = sample_sphere(
            cfg.mc_samples, cfg.fov.max_range, current_pose.position(), cfg.seed
        )
        masks = fov_masks(cloud.points, self.poses_array(), cfg.fov)
        tgt_mask = fov_masks(cloud.points, current_pose, cfg.fov)[0]
        _, overlap = overlap_from_masks(masks, tgt_mask)
        dt = np.abs(self.timestamps_array().astype(np.float64) - float(current_time))
        return overlap * cfg.overlap_weight - dt * cfg.time_weight(current_time)

    def retrieve(self, current_pose: Pose, current_time: int, cfg: RetrievalConfig) -> list[int]:
        """Indices of the selected memory units (possibly fewer than L_M)."""
        if not self.units:
            return []
        return select_memory_indices(
            self.poses_array(), self.timestamps_array(), current_pose, current_time, cfg
        )


_HEADER = struct.Struct("<IQII")  # version, unit_count, token_count, channel_dim
_UNIT_HEAD = struct.Struct("<Q5f")  # timestamp, pose


def save_bank(bank: MemoryBank, sink) -> None:
    """Write the versioned binary container (magic ``MWB1``, little-endian)."""
    own = isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__")
    f = open(sink, "wb") if own else sink
    try:
        f.write(BANK_MAGIC)
        f.write(_HEADER.pack(BANK_VERSION, len(bank.units), bank.token_count, bank.channel_dim))
        for unit in bank.units:
            p = unit.pose
            f.write(_UNIT_HEAD.pack(unit.timestamp, p.x, p.y, p.z, p.pitch, p.yaw))
            f.write(np.ascontiguousarray(unit.tokens, dtype="<f4").tobytes())
    finally:
        if own:
            f.close()


def load_bank(source) -> MemoryBank:
    """Read a container written by :func:`save_bank`; round-trip is bit-exact."""
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    f = open(source, "rb") if own else source
    try:
        data = f.read()
    finally:
        if own:
            f.close()

    if len(data) < 4 or data[:4] != BANK_MAGIC:
        raise FormatError("bad magic; not a memory bank container", offset=0)
    if len(data) < 4 + _HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    version, unit_count, token_count, channel_dim = _HEADER.unpack_from(data, 4)
    if version != BANK_VERSION:
        raise VersionError(f"unsupported bank version {version}", offset=4)

    bank = MemoryBank(token_count, channel_dim)
    offset = 4 + _HEADER.size
    token_bytes = token_count * channel_dim * 4
    for _ in range(unit_count):
        end = offset + _UNIT_HEAD.size + token_bytes
        if end > len(data):
            raise FormatError("truncated unit record", offset=len(data))
        ts, x, y, z, pitch, yaw = _UNIT_HEAD.unpack_from(data, offset)
        tokens = np.frombuffer(
            data, dtype="<f4", count=token_count * channel_dim, offset=offset + _UNIT_HEAD.size
        ).reshape(token_count, channel_dim)
        bank.append(MemoryUnit(tokens.copy(), Pose(x, y, z, pitch, yaw), ts))
        offset = end
    if offset != len(data):
        raise FormatError("trailing bytes after last unit", offset=offset)
    return bank


def bank_from_arrays(tokens, poses, timestamps) -> MemoryBank:
    """Convenience constructor from stacked arrays (T, tc, cd) / (T, 5) / (T,)."""
    tokens = np.asarray(tokens, dtype=np.float32)
    bank = MemoryBank(tokens.shape[1], tokens.shape[2])
    for i in range(len(tokens)):
        bank.append(MemoryUnit(tokens[i], Pose.from_array(poses[i]), int(timestamps[i])))
    return bank
