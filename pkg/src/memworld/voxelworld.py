"""Deterministic procedural voxel world used for data generation and oracles.

The world is a bounded grid of flat-topped terrain columns (quantized
heights) with three block kinds plus placeable objects. The agent walks on
the terrain; its altitude is always terrain height + eye height. Movement is
blocked when the height difference to the target column exceeds the step
limit in either direction, which makes every executed move reversible - the
random-walk policy exploits this to build exact revisit loops.

Rendering is a vectorized fixed-step raycast, bit-deterministic in the world
state. The only clock dependence is the growth stage of growth objects, so
revisiting a pose with unchanged surroundings reproduces the earlier frame
exactly; that property is the loop-closure oracle for all model evaluation.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, InvalidInputError, VersionError
from .geometry import Intrinsics, Pose, build_extrinsic, normalize_yaw, pixel_directions

ACTION_NAMES = (
    "forward",
    "back",
    "strafe_left",
    "strafe_right",
    "turn_left",
    "turn_right",
    "look_up",
    "look_down",
    "place_block",
    "place_growth",
    "place_light",
    "noop",
)
ACTION_IDS = {name: i for i, name in enumerate(ACTION_NAMES)}
A_FORWARD, A_BACK, A_STRAFE_L, A_STRAFE_R = 0, 1, 2, 3
A_TURN_L, A_TURN_R, A_LOOK_UP, A_LOOK_DOWN = 4, 5, 6, 7
A_PLACE_BLOCK, A_PLACE_GROWTH, A_PLACE_LIGHT, A_NOOP = 8, 9, 10, 11

INVERSE_ACTION = {
    A_FORWARD: A_BACK,
    A_BACK: A_FORWARD,
    A_STRAFE_L: A_STRAFE_R,
    A_STRAFE_R: A_STRAFE_L,
    A_TURN_L: A_TURN_R,
    A_TURN_R: A_TURN_L,
    A_LOOK_UP: A_LOOK_DOWN,
    A_LOOK_DOWN: A_LOOK_UP,
    A_PLACE_BLOCK: A_NOOP,
    A_PLACE_GROWTH: A_NOOP,
    A_PLACE_LIGHT: A_NOOP,
    A_NOOP: A_NOOP,
}

MOVE_DELTA = 0.5
TURN_DELTA = math.radians(15.0)
PITCH_STEP = math.radians(15.0)
PITCH_LIMIT = math.radians(60.0)
STEP_UP_LIMIT = 0.75  # max climbable/droppable height difference
EYE_HEIGHT = 1.5
PLACE_DISTANCE = 2.0
GROWTH_PERIOD = 25
GROWTH_STAGES = 4

KIND_GROUND, KIND_ROCK, KIND_SNOW = 0, 1, 2
OBJ_BLOCK, OBJ_LIGHT, OBJ_GROWTH = 0, 1, 2
OBJ_NAMES = ("block", "light", "growth")

SKY_COLOR = np.array([0.53, 0.78, 0.92], dtype=np.float32)
TERRAIN_COLORS = np.array(
    [[0.33, 0.55, 0.27], [0.50, 0.50, 0.52], [0.91, 0.93, 0.96]], dtype=np.float32
)
OBJECT_COLORS = np.array(
    [[0.55, 0.36, 0.22], [1.00, 0.85, 0.25]], dtype=np.float32
)  # block, light
GROWTH_PALETTE = np.array(
    [
        [0.16, 0.42, 0.13],
        [0.32, 0.58, 0.18],
        [0.55, 0.71, 0.22],
        [0.82, 0.76, 0.28],
    ],
    dtype=np.float32,
)


@dataclass(frozen=True)
class WorldConfig:
    grid_size: int = 48
    frame_size: int = 32
    max_ray_dist: float = 40.0
    ray_step: float = 0.1
    bounds_margin: float = 1.5

    def intrinsics(self) -> Intrinsics:
        # focal = size/2 gives a 90 degree square frustum, matching the
        # default FovSpec half-angle of pi/4 used in retrieval
        return Intrinsics.square(self.frame_size, self.frame_size / 2.0)


@dataclass(frozen=True)
class Terrain:
    heights: np.ndarray  # (G, G) f64, multiples of 0.5
    kinds: np.ndarray  # (G, G) u8
    shade: np.ndarray  # (G, G) f32 brightness field, episode-unique


@dataclass(frozen=True)
class PlacedObject:
    cell: tuple[int, int]
    kind: int
    birth_time: int


@dataclass(frozen=True)
class WorldState:
    terrain: Terrain
    objects: tuple[PlacedObject, ...]
    agent: Pose
    clock: int
    config: WorldConfig = field(default=WorldConfig())


def _noise_field(rng: np.random.Generator, size: int, waves: int, freq_range) -> np.ndarray:
    """Smooth seeded field as a sum of random plane cosines, roughly [-1, 1]."""
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    out = np.zeros((size, size))
    for _ in range(waves):
        fx, fy = rng.uniform(*freq_range, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.5, 1.0)
        out += amp * np.cos(fx * ii + fy * jj + phase)
    return out / math.sqrt(waves)


def create_world(seed: int, config: WorldConfig = WorldConfig()) -> WorldState:
    """Deterministic world from a seed: terrain, block kinds, agent spawn."""
    rng = np.random.default_rng(seed)
    g = config.grid_size

    rough = _noise_field(rng, g, waves=6, freq_range=(0.08, 0.35))
    heights = np.clip(np.round(rough * 2.2) * 0.5, 0.0, 3.0)
    kind_noise = _noise_field(rng, g, waves=5, freq_range=(0.15, 0.5))
    kinds = np.full((g, g), KIND_GROUND, dtype=np.uint8)
    kinds[kind_noise > 0.55] = KIND_ROCK
    kinds[heights >= 2.0] = KIND_SNOW
    shade = (1.0 + 0.22 * _noise_field(rng, g, waves=5, freq_range=(0.2, 0.7))).astype(
        np.float32
    )
    terrain = Terrain(heights, kinds, shade)

    span = g / 2.0 - config.bounds_margin - 4.0
    x = g / 2.0 + rng.uniform(-span, span)
    y = g / 2.0 + rng.uniform(-span, span)
    yaw = normalize_yaw(rng.uniform(-math.pi, math.pi))
    z = terrain_height(terrain, x, y) + EYE_HEIGHT
    agent = Pose(float(x), float(y), float(z), 0.0, float(yaw))
    return WorldState(terrain, (), agent, 0, config)


def terrain_height(terrain: Terrain, x: float, y: float) -> float:
    g = terrain.heights.shape[0]
    ci = min(max(int(math.floor(x)), 0), g - 1)
    cj = min(max(int(math.floor(y)), 0), g - 1)
    return float(terrain.heights[ci, cj])


def heading(yaw: float) -> tuple[float, float]:
    """Ground-plane unit vector the camera faces (pose-space x, y)."""
    return (-math.sin(yaw), -math.cos(yaw))


def growth_stage(obj: PlacedObject, clock: int) -> int:
    return min(GROWTH_STAGES - 1, max(0, (clock - obj.birth_time) // GROWTH_PERIOD))


def _object_height(obj: PlacedObject, clock: int) -> float:
    if obj.kind == OBJ_GROWTH:
        return (growth_stage(obj, clock) + 1) / GROWTH_STAGES
    return 1.0


def step(state: WorldState, action: int) -> WorldState:
    """Apply one action; deterministic, collisions clamp movement."""
    if not 0 <= action < len(ACTION_NAMES):
        raise InvalidInputError(f"unknown action id {action}")
    cfg = state.config
    agent = state.agent
    x, y, pitch, yaw = agent.x, agent.y, agent.pitch, agent.yaw
    objects = state.objects

    if action in (A_FORWARD, A_BACK, A_STRAFE_L, A_STRAFE_R):
        fx, fy = heading(yaw)
        if action == A_FORWARD:
            dx, dy = fx, fy
        elif action == A_BACK:
            dx, dy = -fx, -fy
        elif action == A_STRAFE_R:
            dx, dy = -fy, fx  # camera-right on the ground plane
        else:
            dx, dy = fy, -fx
        nx, ny = x + MOVE_DELTA * dx, y + MOVE_DELTA * dy
        lo = cfg.bounds_margin
        hi = cfg.grid_size - cfg.bounds_margin
        if lo <= nx <= hi and lo <= ny <= hi:
            rise = terrain_height(state.terrain, nx, ny) - terrain_height(state.terrain, x, y)
            if abs(rise) <= STEP_UP_LIMIT:
                x, y = nx, ny
    elif action == A_TURN_L:
        yaw = normalize_yaw(yaw - TURN_DELTA)
    elif action == A_TURN_R:
        yaw = normalize_yaw(yaw + TURN_DELTA)
    elif action == A_LOOK_UP:
        pitch = min(pitch + PITCH_STEP, PITCH_LIMIT)
    elif action == A_LOOK_DOWN:
        pitch = max(pitch - PITCH_STEP, -PITCH_LIMIT)
    elif action in (A_PLACE_BLOCK, A_PLACE_GROWTH, A_PLACE_LIGHT):
        fx, fy = heading(yaw)
        ci = int(math.floor(x + PLACE_DISTANCE * fx))
        cj = int(math.floor(y + PLACE_DISTANCE * fy))
        g = cfg.grid_size
        occupied = any(o.cell == (ci, cj) for o in objects)
        if 0 <= ci < g and 0 <= cj < g and not occupied:
            kind = {A_PLACE_BLOCK: OBJ_BLOCK, A_PLACE_GROWTH: OBJ_GROWTH, A_PLACE_LIGHT: OBJ_LIGHT}[
                action
            ]
            objects = objects + (PlacedObject((ci, cj), kind, state.clock),)

    z = terrain_height(state.terrain, x, y) + EYE_HEIGHT
    agent = Pose(x, y, z, pitch, yaw)
    return replace(state, objects=objects, agent=agent, clock=state.clock + 1)


_DIR_CACHE: dict[int, np.ndarray] = {}


def _unit_pixel_dirs(cfg: WorldConfig) -> np.ndarray:
    dirs = _DIR_CACHE.get(cfg.frame_size)
    if dirs is None:
        raw = pixel_directions(cfg.intrinsics()).reshape(-1, 3)
        dirs = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        _DIR_CACHE[cfg.frame_size] = dirs
    return dirs


def render(state: WorldState) -> np.ndarray:
    """Raycast the world into an (H, W, 3) float32 frame in [0, 1]."""
    cfg = state.config
    terrain = state.terrain
    g = cfg.grid_size
    ext = build_extrinsic(state.agent)
    dirs = _unit_pixel_dirs(cfg) @ ext.rotation.T  # (R, 3) world-frame unit rays
    origin = ext.translation

    ts = np.arange(cfg.ray_step / 2.0, cfg.max_ray_dist, cfg.ray_step)
    pts = origin[None, None, :] + dirs[:, None, :] * ts[None, :, None]  # (R, K, 3)
    px, pz, py = pts[:, :, 0], pts[:, :, 1], pts[:, :, 2]  # pose-space x, altitude, y

    ci = np.floor(px).astype(np.int64)
    cj = np.floor(py).astype(np.int64)
    inb = (ci >= 0) & (ci < g) & (cj >= 0) & (cj < g)
    cic = np.clip(ci, 0, g - 1)
    cjc = np.clip(cj, 0, g - 1)
    ground = terrain.heights[cic, cjc]
    hit = inb & (pz <= ground)

    # object hits overwrite terrain hits at the same sample index
    obj_hit = np.full(hit.shape, -1, dtype=np.int16)
    for oi, obj in enumerate(state.objects):
        oc_i, oc_j = obj.cell
        base = terrain.heights[oc_i, oc_j]
        top = base + _object_height(obj, state.clock)
        inside = (ci == oc_i) & (cj == oc_j) & (pz > base) & (pz <= top)
        obj_hit[inside & (obj_hit < 0)] = oi
        hit |= inside

    any_hit = hit.any(axis=1)
    first = np.argmax(hit, axis=1)
    rows = np.arange(hit.shape[0])

    rgb = np.tile(SKY_COLOR, (hit.shape[0], 1)).astype(np.float32)
    if any_hit.any():
        sel = rows[any_hit]
        k = first[any_hit]
        cell_i, cell_j = cic[sel, k], cjc[sel, k]
        colors = TERRAIN_COLORS[terrain.kinds[cell_i, cell_j]] * terrain.shade[
            cell_i, cell_j, None
        ]
        oid = obj_hit[sel, k]
        has_obj = oid >= 0
        if has_obj.any():
            kinds = np.array([o.kind for o in state.objects], dtype=np.int64)
            births = np.array([o.birth_time for o in state.objects], dtype=np.int64)
            ok = kinds[oid[has_obj]]
            ocol = np.empty((ok.size, 3), dtype=np.float32)
            plain = ok != OBJ_GROWTH
            ocol[plain] = OBJECT_COLORS[np.minimum(ok[plain], 1)]
            grow = ~plain
            if grow.any():
                ages = state.clock - births[oid[has_obj]][grow]
                stages = np.minimum(GROWTH_STAGES - 1, np.maximum(0, ages // GROWTH_PERIOD))
                ocol[grow] = GROWTH_PALETTE[stages]
            colors[has_obj] = ocol
        dist = ts[k].astype(np.float32)
        fog = np.clip(dist / cfg.max_ray_dist, 0.0, 1.0)[:, None].astype(np.float32) ** 2
        colors = colors * (1.0 - 0.85 * fog) + SKY_COLOR[None, :] * (0.85 * fog)
        rgb[sel] = colors

    frame = rgb.reshape(cfg.frame_size, cfg.frame_size, 3)
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


@dataclass
class Episode:
    """One recorded trajectory: frames, poses, timestamps, actions."""

    frames: np.ndarray  # (T, H, W, 3) f32 in [0, 1]
    poses: np.ndarray  # (T, 5) f64
    timestamps: np.ndarray  # (T,) i64 == arange(T)
    actions: np.ndarray  # (T-1,) u8

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class RandomWalkPolicy:
    """Excursion-and-return random walk forcing exact revisit loops."""

    excursion_range: tuple[int, int] = (20, 45)
    drift_range: tuple[int, int] = (6, 16)
    revisit_min_gap: int = 24
    max_attempts: int = 20
    action_weights: tuple[float, ...] = (
        0.40,  # forward
        0.02,  # back
        0.03,  # strafe_left
        0.03,  # strafe_right
        0.13,  # turn_left
        0.13,  # turn_right
        0.05,  # look_up
        0.05,  # look_down
        0.04,  # place_block
        0.06,  # place_growth
        0.03,  # place_light
        0.03,  # noop
    )


def _would_noop(state: WorldState, action: int) -> bool:
    """True when the action would be clamped into doing nothing positional."""
    if action in (A_LOOK_UP, A_LOOK_DOWN):
        after = step(state, action)
        return after.agent.pitch == state.agent.pitch
    if action in (A_FORWARD, A_BACK, A_STRAFE_L, A_STRAFE_R):
        after = step(state, action)
        return after.agent.x == state.agent.x and after.agent.y == state.agent.y
    return False


def rollout_policy_actions(
    state: WorldState, length: int, policy: RandomWalkPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Action sequence of ``length`` with palindromic excursions.

    Clamped moves/looks are recorded as noop so that the mirrored return
    segment retraces the outbound poses exactly.
    """
    weights = np.asarray(policy.action_weights, dtype=np.float64)
    weights = weights / weights.sum()
    actions: list[int] = []
    cur = state
    while len(actions) < length:
        out_len = int(rng.integers(*policy.excursion_range))
        outbound: list[int] = []
        for _ in range(out_len):
            a = int(rng.choice(len(ACTION_NAMES), p=weights))
            if _would_noop(cur, a):
                a = A_NOOP
            outbound.append(a)
            cur = step(cur, a)
        actions.extend(outbound)
        for a in reversed(outbound):
            inv = INVERSE_ACTION[a]
            actions.append(inv)
            cur = step(cur, inv)
        for _ in range(int(rng.integers(*policy.drift_range))):
            a = int(rng.choice(len(ACTION_NAMES), p=weights))
            if _would_noop(cur, a):
                a = A_NOOP
            actions.append(a)
            cur = step(cur, a)
    return np.asarray(actions[:length], dtype=np.uint8)


def has_revisit(poses: np.ndarray, min_gap: int, dist: float = 1.0, angle: float = math.radians(30)) -> bool:
    """Any pose pair at least ``min_gap`` frames apart and nearly identical."""
    n = len(poses)
    pos = poses[:, :3]
    for i in range(n - min_gap):
        later = poses[i + min_gap :]
        close = np.linalg.norm(later[:, :3] - pos[i], axis=1) <= dist
        if not close.any():
            continue
        dyaw = np.abs(np.arctan2(np.sin(later[:, 4] - poses[i, 4]), np.cos(later[:, 4] - poses[i, 4])))
        dpitch = np.abs(later[:, 3] - poses[i, 3])
        if np.any(close & (dyaw <= angle) & (dpitch <= angle)):
            return True
    return False


def run_episode(state: WorldState, actions: np.ndarray) -> Episode:
    """Render an episode by replaying actions from an initial state."""
    frames = [render(state)]
    poses = [state.agent.as_array()]
    cur = state
    for a in actions:
        cur = step(cur, int(a))
        frames.append(render(cur))
        poses.append(cur.agent.as_array())
    t = len(frames)
    return Episode(
        np.stack(frames),
        np.stack(poses),
        np.arange(t, dtype=np.int64),
        np.asarray(actions, dtype=np.uint8),
    )


def generate_dataset(
    seed: int,
    episode_count: int,
    episode_length: int,
    policy: RandomWalkPolicy = RandomWalkPolicy(),
    config: WorldConfig = WorldConfig(),
) -> list[Episode]:
    """Seeded dataset of revisit-rich episodes; byte-identical per seed."""
    if episode_length < 2:
        raise InvalidInputError("episode_length must be >= 2")
    episodes = []
    root = np.random.SeedSequence(seed)
    for ep_seq in root.spawn(episode_count):
        child = ep_seq.spawn(policy.max_attempts)
        episode = None
        for attempt_seq in child:
            rng = np.random.default_rng(attempt_seq)
            world = create_world(int(rng.integers(2**31)), config)
            acts = rollout_policy_actions(world, episode_length - 1, policy, rng)
            ep = run_episode(world, acts)
            if has_revisit(ep.poses, policy.revisit_min_gap):
                episode = ep
                break
        if episode is None:
            raise InvalidInputError("policy failed to produce a revisit loop")
        episodes.append(episode)
    return episodes


DATASET_MAGIC = b"MWD1"
DATASET_VERSION = 1
_DS_HEADER = struct.Struct("<IIIII")  # version, episode_count, frame_w, frame_h, action_dim


def save_dataset(episodes: list[Episode], sink) -> None:
    own = isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__")
    f = open(sink, "wb") if own else sink
    try:
        h, w = episodes[0].frames.shape[1:3]
        f.write(DATASET_MAGIC)
        f.write(_DS_HEADER.pack(DATASET_VERSION, len(episodes), w, h, len(ACTION_NAMES)))
        for ep in episodes:
            f.write(struct.pack("<I", len(ep)))
            f.write(np.round(ep.frames * 255.0).astype("<u1").tobytes())
            f.write(ep.poses.astype("<f4").tobytes())
            f.write(ep.actions.astype("<u1").tobytes())
    finally:
        if own:
            f.close()


def load_dataset(source) -> list[Episode]:
    own = isinstance(source, (str, bytes)) or hasattr(source, "__fspath__")
    f = open(source, "rb") if own else source
    try:
        data = f.read()
    finally:
        if own:
            f.close()
    if data[:4] != DATASET_MAGIC:
        raise FormatError("bad magic; not a dataset container", offset=0)
    if len(data) < 4 + _DS_HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    version, count, w, h, action_dim = _DS_HEADER.unpack_from(data, 4)
    if version != DATASET_VERSION:
        raise VersionError(f"unsupported dataset version {version}", offset=4)
    if action_dim != len(ACTION_NAMES):
        raise FormatError(f"action_dim {action_dim} != {len(ACTION_NAMES)}", offset=8)

    episodes = []
    offset = 4 + _DS_HEADER.size
    for _ in range(count):
        if offset + 4 > len(data):
            raise FormatError("truncated episode length", offset=len(data))
        (t,) = struct.unpack_from("<I", data, offset)
        offset += 4
        fr_bytes, pose_bytes, act_bytes = t * h * w * 3, t * 5 * 4, t - 1
        end = offset + fr_bytes + pose_bytes + act_bytes
        if end > len(data):
            raise FormatError("truncated episode payload", offset=len(data))
        frames = (
            np.frombuffer(data, "<u1", count=fr_bytes, offset=offset)
            .reshape(t, h, w, 3)
            .astype(np.float32)
            / 255.0
        )
        poses = (
            np.frombuffer(data, "<f4", count=t * 5, offset=offset + fr_bytes)
            .reshape(t, 5)
            .astype(np.float64)
        )
        actions = np.frombuffer(
            data, "<u1", count=act_bytes, offset=offset + fr_bytes + pose_bytes
        ).copy()
        episodes.append(Episode(frames, poses, np.arange(t, dtype=np.int64), actions))
        offset = end
    if offset != len(data):
        raise FormatError("trailing bytes after last episode", offset=offset)
    return episodes
