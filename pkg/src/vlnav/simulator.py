"""Deterministic synthetic world with ray-cast depth, sampled lidar, and playback.

Obstacles are axis-aligned boxes and spheres.  The depth camera stores the
camera-frame z of the nearest hit (not ray length), so back-projecting a
rendered pixel with its stored depth reconstructs the hit point exactly.
Lidar returns points in the sensor frame with Euclidean range gating.

Everything here is pure: worlds are immutable after construction and all
sampling is a deterministic function of the inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bspline import BSplineTrajectory
from .geometry import LIDAR, CameraIntrinsics, Pose
from .mapping import PointCloud

DEPTH_INVALID = np.inf

DEFAULT_CAMERA = CameraIntrinsics(fx=320.0, fy=320.0, cx=320.0, cy=240.0, width=640, height=480)
DEFAULT_MAX_RANGE = 20.0
SIM_TICK = 0.02  # 50 Hz control loop

# Camera mounted looking along body +x: camera z -> body x, camera x -> body -y,
# camera y -> body -z, lens 0.1 m ahead of the body origin.
CAMERA_TO_BODY = Pose(
    np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
    np.array([0.1, 0.0, 0.0]),
)
LIDAR_TO_BODY = Pose.identity()


class UnsatisfiableError(RuntimeError):
    """Random scenario generation exhausted its rejection-sampling budget."""


class TrajectoryDomainEmptyError(ValueError):
    """Playback asked to advance along a missing or zero-length trajectory."""


@dataclass(frozen=True)
class Box:
    center: np.ndarray  # (3,) meters
    size: np.ndarray  # (3,) full extents, meters

    def __post_init__(self):
        c = np.asarray(self.center, float).reshape(3)
        s = np.asarray(self.size, float).reshape(3)
        if not (np.isfinite(c).all() and np.isfinite(s).all() and (s > 0).all()):
            raise ValueError("box center/size must be finite with positive size")
        c.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        q = np.abs(np.atleast_2d(p) - self.center) - self.size / 2.0
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, float).reshape(3)
        if not (np.isfinite(c).all() and np.isfinite(self.radius) and self.radius > 0):
            raise ValueError("sphere center/radius must be finite with positive radius")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    def signed_distance(self, p: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(p) - self.center, axis=1) - self.radius


@dataclass(frozen=True)
class World:
    obstacles: tuple
    bounds: np.ndarray  # (2, 3): low corner, high corner

    def __post_init__(self):
        b = np.asarray(self.bounds, float).reshape(2, 3)
        if not (np.isfinite(b).all() and (b[1] > b[0]).all()):
            raise ValueError("bounds must be finite with high > low")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for ob in self.obstacles:
            lo, hi = _primitive_aabb(ob)
            if (lo < b[0] - 1e-9).any() or (hi > b[1] + 1e-9).any():
                raise ValueError("obstacle extends outside world bounds")

    def signed_distance(self, p) -> np.ndarray:
        """Distance from points to the nearest obstacle surface (negative inside)."""
        pts = np.atleast_2d(np.asarray(p, float))
        if not self.obstacles:
            return np.full(pts.shape[0], np.inf)
        return np.min([ob.signed_distance(pts) for ob in self.obstacles], axis=0)


def _primitive_aabb(ob):
    if isinstance(ob, Box):
        return ob.center - ob.size / 2.0, ob.center + ob.size / 2.0
    return ob.center - ob.radius, ob.center + ob.radius


@dataclass(frozen=True)
class UavState:
    pose: Pose  # body-to-world
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m/s, world
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.velocity, float).reshape(3)
        v.setflags(write=False)
        object.__setattr__(self, "velocity", v)

    @property
    def position(self) -> np.ndarray:
        return self.pose.translation


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray  # (height, width), meters; DEPTH_INVALID for no return
    max_range: float

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def is_valid(self, row: int, col: int) -> bool:
        return bool(np.isfinite(self.depth[row, col]))


@dataclass(frozen=True)
class Scenario:
    """One navigation episode: world, start state, hidden goal, instruction."""

    world: World
    start: UavState
    goal: np.ndarray  # (3,) world, ground truth
    instruction: str
    delta: float  # success threshold, meters
    camera: CameraIntrinsics = DEFAULT_CAMERA
    camera_extrinsics: Pose = CAMERA_TO_BODY
    lidar_extrinsics: Pose = LIDAR_TO_BODY
    max_range: float = DEFAULT_MAX_RANGE
    seed: int = 0

    def __post_init__(self):
        g = np.asarray(self.goal, float).reshape(3)
        g.setflags(write=False)
        object.__setattr__(self, "goal", g)
        if not self.delta > 0:
            raise ValueError("delta must be positive")


# -- ray casting --------------------------------------------------------------


def _ray_hits(origin: np.ndarray, dirs: np.ndarray, world: World) -> np.ndarray:
    """Smallest positive ray parameter per direction (inf for misses).

    `dirs` need not be normalized; the returned t is in units of `dirs`.
    """
    n = dirs.shape[0]
    t_best = np.full(n, np.inf)
    for ob in world.obstacles:
        if isinstance(ob, Sphere):
            oc = origin - ob.center
            a = (dirs * dirs).sum(axis=1)
            b = 2.0 * dirs @ oc
            c = oc @ oc - ob.radius**2
            disc = b * b - 4.0 * a * c
            hit = disc >= 0.0
            sq = np.sqrt(np.where(hit, disc, 0.0))
            t0 = (-b - sq) / (2.0 * a)
            t1 = (-b + sq) / (2.0 * a)
            t = np.where(t0 > 1e-12, t0, np.where(t1 > 1e-12, t1, np.inf))
            t = np.where(hit, t, np.inf)
        else:
            lo = ob.center - ob.size / 2.0
            hi = ob.center + ob.size / 2.0
            zero = dirs == 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / dirs
                ta = (lo - origin) * inv
                tb = (hi - origin) * inv
            # Axis-parallel rays impose no slab constraint along that axis;
            # they only hit if the origin lies within the slab.
            t1 = np.where(zero, -np.inf, np.fmin(ta, tb))
            t2 = np.where(zero, np.inf, np.fmax(ta, tb))
            par_ok = (~zero | ((origin >= lo) & (origin <= hi))).all(axis=1)
            tmin = t1.max(axis=1)
            tmax = t2.min(axis=1)
            hit = (tmax >= tmin) & (tmax > 1e-12) & par_ok
            t = np.where(hit, np.where(tmin > 1e-12, tmin, tmax), np.inf)
        np.minimum(t_best, t, out=t_best)
    return t_best


def line_of_sight(world: World, a, b, fraction: float = 1.0) -> bool:
    """True if the segment a -> b is unobstructed up to `fraction` of its length."""
    a = np.asarray(a, float)
    d = np.asarray(b, float) - a
    t = _ray_hits(a, d[None, :], world)[0]
    return t >= fraction


@lru_cache(maxsize=8)
def _pixel_dirs(fx: float, fy: float, cx: float, cy: float, width: int, height: int):
    us, vs = np.meshgrid(np.arange(width), np.arange(height))
    dirs = np.stack(
        [(us - cx) / fx, (vs - cy) / fy, np.ones_like(us, dtype=float)], axis=-1
    )
    dirs = dirs.reshape(-1, 3)
    dirs.setflags(write=False)
    return dirs


def render_depth(
    world: World,
    camera_pose: Pose,
    intrinsics: CameraIntrinsics,
    max_range: float = DEFAULT_MAX_RANGE,
) -> DepthMap:
    """Ray-cast a depth image; each pixel stores camera-frame z of the hit."""
    dirs_cam = _pixel_dirs(
        intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
        intrinsics.width, intrinsics.height,
    )
    dirs_world = dirs_cam @ camera_pose.rotation.T
    t = _ray_hits(camera_pose.translation, dirs_world, world)
    # dirs have unit camera z, so t equals the hit's camera-frame depth.
    depth = np.where(t <= max_range, t, DEPTH_INVALID)
    return DepthMap(depth.reshape(intrinsics.height, intrinsics.width), max_range)


def render_depth_pixels(
    world: World,
    camera_pose: Pose,
    intrinsics: CameraIntrinsics,
    pixels: np.ndarray,
    max_range: float = DEFAULT_MAX_RANGE,
) -> np.ndarray:
    """Depth for selected (u, v) pixels only; same rays as render_depth."""
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    dirs_cam = np.stack(
        [
            (px[:, 0] - intrinsics.cx) / intrinsics.fx,
            (px[:, 1] - intrinsics.cy) / intrinsics.fy,
            np.ones(px.shape[0]),
        ],
        axis=-1,
    )
    dirs_world = dirs_cam @ camera_pose.rotation.T
    t = _ray_hits(camera_pose.translation, dirs_world, world)
    return np.where(t <= max_range, t, DEPTH_INVALID)


@lru_cache(maxsize=8)
def _lidar_dirs(n_azimuth: int, n_elevation: int) -> np.ndarray:
    az = np.arange(n_azimuth) * (2.0 * math.pi / n_azimuth)
    el = np.linspace(-math.pi / 2.0, math.pi / 2.0, n_elevation)
    azg, elg = np.meshgrid(az, el)
    dirs = np.stack(
        [np.cos(elg) * np.cos(azg), np.cos(elg) * np.sin(azg), np.sin(elg)], axis=-1
    ).reshape(-1, 3)
    dirs.setflags(write=False)
    return dirs


def sample_lidar(
    world: World,
    body_pose: Pose,
    n_azimuth: int = 64,
    n_elevation: int = 16,
    max_range: float = DEFAULT_MAX_RANGE,
    extrinsics: Pose = LIDAR_TO_BODY,
) -> PointCloud:
    """Omnidirectional spinning-lidar sample on an azimuth x elevation grid."""
    if n_azimuth < 1 or n_elevation < 1:
        raise ValueError("ray counts must be >= 1")
    dirs_sensor = _lidar_dirs(n_azimuth, n_elevation)
    sensor_pose = body_pose.compose(extrinsics)
    dirs_world = dirs_sensor @ sensor_pose.rotation.T
    t = _ray_hits(sensor_pose.translation, dirs_world, world)
    hit = np.isfinite(t) & (t <= max_range)
    pts_sensor = dirs_sensor[hit] * t[hit][:, None]
    return PointCloud(pts_sensor, LIDAR)


# -- playback and collision ----------------------------------------------------


def advance(
    state: UavState,
    traj: BSplineTrajectory,
    dt: float,
    v_max: float = 4.0,
    yaw_align_speed: float = 0.1,
) -> UavState:
    """Kinematic playback: follow the spline exactly, holding at its endpoint."""
    if traj is None or traj.duration <= 0:
        raise TrajectoryDomainEmptyError("no trajectory to follow")
    if dt <= 0:
        raise ValueError("dt must be positive")
    t_new = state.time + dt
    t_eval = min(t_new, traj.end_time)
    pos = traj.evaluate(t_eval)
    if t_new >= traj.end_time:
        vel = np.zeros(3)
    else:
        vel = traj.derivative_spline(1).evaluate(t_eval)
        speed = float(np.linalg.norm(vel))
        if speed > v_max:
            vel = vel * (v_max / speed)
    if np.linalg.norm(vel) > yaw_align_speed:
        yaw = math.atan2(vel[1], vel[0])
        pose = Pose.from_yaw(yaw, pos)
    else:
        pose = Pose(state.pose.rotation, pos)
    return UavState(pose, vel, t_new)


def check_collision(world: World, p, radius: float) -> bool:
    """True iff the point is within `radius` of any obstacle surface (boundary hits)."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if not world.obstacles:
        return False
    return bool(world.signed_distance(p)[0] <= radius)


# -- random scenarios -----------------------------------------------------------


@dataclass(frozen=True)
class ScenarioParams:
    world_size: float = 20.0  # cube edge, meters
    n_obstacles: tuple[int, int] = (5, 15)  # inclusive range
    min_clearance: float = 1.0  # start/goal clearance from obstacles
    min_separation: float = 8.0  # start-to-goal distance
    max_elevation_deg: float = 25.0  # goal elevation from the start camera
    delta: float = 5.0
    instruction: str = "fly to the target marker"


def gen_random_scenario(seed: int, params: ScenarioParams = ScenarioParams()) -> Scenario:
    """Seeded cluttered scenario with a visible, reachable goal.

    Obstacles are unconstrained relative to the start-goal segment (planning
    stays necessary); only the zero-width sight line from the start camera to
    the goal is required to be free so the first grounding can succeed.
    """
    rng = np.random.default_rng(seed)
    half = params.world_size / 2.0
    bounds = np.array([[-half] * 3, [half] * 3])
    clearance = max(params.min_clearance, 1.0)

    for _attempt in range(200):
        n_obs = int(rng.integers(params.n_obstacles[0], params.n_obstacles[1] + 1))
        obstacles = []
        for _ in range(n_obs):
            if rng.random() < 0.5:
                size = rng.uniform(0.6, 2.4, size=3)
                center = rng.uniform(-half + size / 2.0, half - size / 2.0)
                obstacles.append(Box(center, size))
            else:
                radius = float(rng.uniform(0.3, 1.2))
                center = rng.uniform(-half + radius, half - radius, size=3)
                obstacles.append(Sphere(center, radius))
        world = World(tuple(obstacles), bounds)

        for _try in range(60):
            margin = clearance * 0.75
            start_pos = rng.uniform(-half + margin, half - margin, size=3)
            goal = rng.uniform(-half + margin, half - margin, size=3)
            offset = goal - start_pos
            dist = float(np.linalg.norm(offset))
            if dist < params.min_separation:
                continue
            elev = math.degrees(math.asin(abs(offset[2]) / dist))
            if elev > params.max_elevation_deg:
                continue
            if world.signed_distance(start_pos)[0] <= clearance:
                continue
            if world.signed_distance(goal)[0] <= clearance:
                continue
            yaw = math.atan2(offset[1], offset[0])
            start_pose = Pose.from_yaw(yaw, start_pos)
            cam_pos = start_pose.compose(CAMERA_TO_BODY).translation
            if not line_of_sight(world, cam_pos, goal, fraction=1.0):
                continue
            start = UavState(start_pose, np.zeros(3), 0.0)
            return Scenario(
                world=world,
                start=start,
                goal=goal,
                instruction=params.instruction,
                delta=params.delta,
                seed=seed,
            )
    raise UnsatisfiableError(f"could not place start/goal after 200 worlds (seed={seed})")


# -- JSON round trip -------------------------------------------------------------


def scenario_to_dict(s: Scenario) -> dict:
    obstacles = []
    for ob in s.world.obstacles:
        if isinstance(ob, Box):
            obstacles.append(
                {"type": "box", "center": list(ob.center), "size": list(ob.size)}
            )
        else:
            obstacles.append(
                {"type": "sphere", "center": list(ob.center), "radius": ob.radius}
            )
    yaw = math.atan2(s.start.pose.rotation[1, 0], s.start.pose.rotation[0, 0])
    return {
        "world": {
            "bounds": [list(s.world.bounds[0]), list(s.world.bounds[1])],
            "obstacles": obstacles,
        },
        "start": {"position": list(s.start.position), "yaw": yaw},
        "goal": list(s.goal),
        "instruction": s.instruction,
        "delta": s.delta,
        "camera": {
            "width": s.camera.width,
            "height": s.camera.height,
            "fx": s.camera.fx,
            "fy": s.camera.fy,
            "cx": s.camera.cx,
            "cy": s.camera.cy,
            "max_range": s.max_range,
        },
        "seed": s.seed,
    }
