"""The navigation control loop: ground, lift, map, replan, advance, score.

Each 50 Hz tick:

1. query the grounder when the re-grounding period elapsed (or no goal is
   known yet); lift a Found pixel through depth + extrinsics to a world
   point and overwrite the persistent goal estimate,
2. sample lidar, insert it into the sliding-window map,
3. replan (warm-started from the active trajectory) iff the map gained
   occupancy or the goal estimate moved,
4. advance the vehicle kinematically along the active trajectory,
5. resolve status: collision, arrival, grounding timeout, episode timeout.

The goal estimate persists across Absent groundings (object permanence):
once set, only a new Found overwrites it.  Success requires the vehicle to
finish its approach (trajectory exhausted) within the arrival radius of its
own estimate; scoring always measures against the hidden true goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bspline import BSplineTrajectory
from .geometry import (
    CameraIntrinsics,
    PixelTarget,
    Point3,
    Pose,
    back_project,
    sensor_to_world,
)
from .grounding import GroundingConfig, Image, MockGrounder
from .mapping import OccupancyMap
from .optimizer import CostWeights, OptimizeOptions, optimize, total_cost
from .simulator import (
    DEPTH_INVALID,
    DepthMap,
    Scenario,
    UavState,
    advance,
    check_collision,
    render_depth,
    render_depth_pixels,
    sample_lidar,
)

STATUS_RUNNING = "running"
STATUS_SUCCEEDED = "succeeded"
STATUS_COLLISION = "collision"
STATUS_GROUNDING_FAILED = "grounding_failed"
STATUS_TIMEOUT = "timeout"


class DepthUnavailableError(RuntimeError):
    """No valid depth in the 3x3 patch around the grounded pixel."""


@dataclass(frozen=True)
class NavigatorConfig:
    weights: CostWeights = CostWeights()
    grounding: GroundingConfig = GroundingConfig()
    tick_dt: float = 0.02
    time_limit: float = 120.0
    grounding_timeout: float = 10.0
    arrival_radius: float = 1.0
    vehicle_radius: float = 0.2
    map_resolution: float = 0.2
    map_window: float = 26.0  # meters; covers a desk-scale world without sliding
    truncation_radius: float = 2.0
    depth_noise_eta: float = 0.02
    # Planning geometry: clearance equilibrium of the cubic barrier against
    # jerk stiffness picks ~0.5 m control spacing at a 0.6 s knot interval.
    knot_dt: float = 0.6
    ctrl_spacing: float = 0.5
    brake_clearance: float = 0.28  # map distance that triggers a braking maneuver
    brake_lookahead: float = 3.0  # seconds of the active plan checked per tick
    marker_radius: float = 0.75
    use_depth: bool = True
    fixed_range_guess: float = 10.0
    use_optimizer: bool = True
    regrounding: bool = True
    goal_update_epsilon: float = 0.01
    lidar_azimuth: int = 64
    lidar_elevation: int = 16
    replan_options: OptimizeOptions = OptimizeOptions(
        max_iterations=80, gradient_tolerance=1e-3
    )
    cold_options: OptimizeOptions = OptimizeOptions(
        max_iterations=400, gradient_tolerance=1e-3
    )


@dataclass
class NavigatorState:
    uav: UavState
    grid: OccupancyMap
    goal_estimate: np.ndarray | None = None
    trajectory: BSplineTrajectory | None = None
    last_grounding: float = -math.inf
    sim_time: float = 0.0
    status: str = STATUS_RUNNING
    groundings: int = 0
    replans: int = 0
    collided: bool = False


@dataclass(frozen=True)
class EpisodeResult:
    success: bool
    ne: float  # final Euclidean error to the hidden goal, meters
    time: float  # simulated seconds + modeled grounding latency
    collided: bool
    groundings: int
    replans: int
    status: str


@dataclass
class EpisodeAudit:
    """Optional per-episode evidence collected for the acceptance suite."""

    max_speed: float = 0.0  # dense max over accepted trajectories
    max_accel: float = 0.0
    monotone: bool = True  # every optimize trace non-increasing
    min_path_clearance: float = math.inf  # true clearance along flown path
    final_trajectory: BSplineTrajectory | None = None
    positions: list = field(default_factory=list)


def lift_target(
    pixel: PixelTarget,
    depth_map: DepthMap,
    intrinsics: CameraIntrinsics,
    camera_extrinsics: Pose,
    body_pose: Pose,
) -> Point3:
    """Pixel + depth -> world point through the camera and body chain.

    Reads depth at the rounded pixel, falling back to the median of valid
    depths in the 3x3 neighborhood.
    """
    col = int(np.clip(round(pixel.x), 0, depth_map.width - 1))
    row = int(np.clip(round(pixel.y), 0, depth_map.height - 1))
    d = depth_map.depth[row, col]
    if not np.isfinite(d):
        patch = depth_map.depth[
            max(row - 1, 0) : row + 2, max(col - 1, 0) : col + 2
        ]
        valid = patch[np.isfinite(patch)]
        if valid.size == 0:
            raise DepthUnavailableError(
                f"no valid depth around pixel ({pixel.x:.1f}, {pixel.y:.1f})"
            )
        d = float(np.median(valid))
    p_cam = back_project(pixel, float(d), intrinsics)
    return sensor_to_world(p_cam, camera_extrinsics, body_pose)


def stamp_goal_marker(
    depth: np.ndarray,
    pixels: np.ndarray,
    camera_pose: Pose,
    intrinsics: CameraIntrinsics,
    goal: np.ndarray,
    marker_radius: float,
) -> None:
    """Write the target marker's depth into selected pixels, in place.

    The semantic target is rendered as a camera-facing disc at the goal's
    true range so the depth lookup has something physical to hit; it never
    enters the collision world or the lidar map.
    """
    g_cam = camera_pose.inverse().apply(np.asarray(goal, float))
    if g_cam[2] <= 0.0:
        return
    gu = intrinsics.fx * g_cam[0] / g_cam[2] + intrinsics.cx
    gv = intrinsics.fy * g_cam[1] / g_cam[2] + intrinsics.cy
    ru = intrinsics.fx * marker_radius / g_cam[2]
    rv = intrinsics.fy * marker_radius / g_cam[2]
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    on_disc = ((px[:, 0] - gu) / ru) ** 2 + ((px[:, 1] - gv) / rv) ** 2 <= 1.0
    rows = px[:, 1].astype(int)
    cols = px[:, 0].astype(int)
    visible = on_disc & (g_cam[2] < depth[rows, cols])
    depth[rows[visible], cols[visible]] = g_cam[2]


class Navigator:
    """Owns one episode's mutable control-loop state."""

    def __init__(
        self,
        scenario: Scenario,
        grounder,
        config: NavigatorConfig = NavigatorConfig(),
        seed: int = 0,
        audit: EpisodeAudit | None = None,
    ):
        self.scenario = scenario
        self.grounder = grounder
        self.cfg = config
        self.audit = audit
        world_center = scenario.world.bounds.mean(axis=0)
        n_vox = int(round(config.map_window / config.map_resolution))
        self.state = NavigatorState(
            uav=scenario.start,
            grid=OccupancyMap(
                resolution=config.map_resolution,
                window_size=(n_vox, n_vox, n_vox),
                center=world_center,
                truncation_radius=config.truncation_radius,
            ),
        )
        self._depth_rng = np.random.default_rng([seed, scenario.seed, 2])
        self._pending: list[tuple[float, np.ndarray]] = []
        self._trace_rows: list[tuple] = []
        self._last_total = math.nan
        self._braking = False

    # -- grounding ------------------------------------------------------------

    def _camera_pose(self) -> Pose:
        return self.state.uav.pose.compose(self.scenario.camera_extrinsics)

    def _grounder_image(self) -> Image | None:
        """Full RGB-equivalent render, only when the grounder wants imagery."""
        if not getattr(self.grounder, "needs_image", False):
            return None
        cam = self.scenario.camera
        dm = render_depth(
            self.scenario.world, self._camera_pose(), cam, self.scenario.max_range
        )
        gray = np.zeros((cam.height, cam.width), dtype=np.uint8)
        valid = np.isfinite(dm.depth)
        gray[valid] = (255 * (1.0 - dm.depth[valid] / dm.max_range)).astype(np.uint8)
        return Image(np.repeat(gray[:, :, None], 3, axis=2))

    def _measure_depth(self, pixel: PixelTarget, camera_pose: Pose) -> DepthMap:
        """Depth for the 3x3 patch around the pixel: ray cast, marker, noise."""
        cam = self.scenario.camera
        col = int(np.clip(round(pixel.x), 0, cam.width - 1))
        row = int(np.clip(round(pixel.y), 0, cam.height - 1))
        cols = np.clip(np.arange(col - 1, col + 2), 0, cam.width - 1)
        rows = np.clip(np.arange(row - 1, row + 2), 0, cam.height - 1)
        cg, rg = np.meshgrid(cols, rows)
        pixels = np.stack([cg.ravel(), rg.ravel()], axis=1)
        depths = render_depth_pixels(
            self.scenario.world, camera_pose, cam, pixels, self.scenario.max_range
        )
        full = np.full((cam.height, cam.width), DEPTH_INVALID)
        full[pixels[:, 1], pixels[:, 0]] = depths
        stamp_goal_marker(
            full, pixels, camera_pose, cam, self.scenario.goal, self.cfg.marker_radius
        )
        if self.cfg.depth_noise_eta > 0.0:
            noise = self._depth_rng.normal(0.0, 1.0, size=pixels.shape[0])
            vals = full[pixels[:, 1], pixels[:, 0]]
            ok = np.isfinite(vals)
            vals[ok] = np.clip(
                vals[ok] * (1.0 + self.cfg.depth_noise_eta * noise[ok]),
                1e-6,
                self.scenario.max_range,
            )
            full[pixels[:, 1], pixels[:, 0]] = vals
        return DepthMap(full, self.scenario.max_range)

    def _try_ground(self) -> bool:
        """Query the grounder and queue/apply any lifted goal. True if goal moved."""
        st = self.state
        camera_pose = self._camera_pose()
        result = self.grounder.ground(
            self._grounder_image(), self.scenario.instruction, camera_pose
        )
        st.groundings += 1
        st.last_grounding = st.sim_time
        if not result.found:
            return False
        if self.cfg.use_depth:
            dm = self._measure_depth(result.pixel, camera_pose)
            try:
                lifted = lift_target(
                    result.pixel,
                    dm,
                    self.scenario.camera,
                    self.scenario.camera_extrinsics,
                    st.uav.pose,
                )
            except DepthUnavailableError:
                return False
            goal = lifted.vec
        else:
            p_cam = back_project(
                result.pixel, self.cfg.fixed_range_guess, self.scenario.camera
            )
            goal = sensor_to_world(
                p_cam, self.scenario.camera_extrinsics, st.uav.pose
            ).vec
        latency = self.cfg.grounding.latency_model
        if latency > 0.0:
            self._pending.append((st.sim_time + latency, goal))
            return False
        return self._apply_goal(goal)

    def _apply_goal(self, goal: np.ndarray) -> bool:
        st = self.state
        if st.goal_estimate is None:
            st.goal_estimate = goal
            return True
        moved = float(np.linalg.norm(goal - st.goal_estimate))
        st.goal_estimate = goal
        if moved > self.cfg.goal_update_epsilon:
            return True
        # Sub-epsilon refinement: re-pin the trajectory tail so its endpoint
        # still equals the latest estimate, without forcing a replan.  A
        # braking maneuver must not be re-aimed; the post-brake replan picks
        # up the refined estimate instead.
        if st.trajectory is not None and not self._braking:
            pts = st.trajectory.control_points.copy()
            pts[-st.trajectory.degree :] = goal
            st.trajectory = replace(st.trajectory, control_points=pts)
        return False

    # -- planning ---------------------------------------------------------------

    def _head_triple(self) -> list[np.ndarray]:
        st = self.state
        p = st.uav.position.copy()
        traj = st.trajectory
        if traj is None or st.sim_time >= traj.end_time - 1e-9:
            return [p, p, p]
        t = min(max(st.sim_time, traj.start_time), traj.end_time)
        v = traj.derivative_spline(1).evaluate(t)
        a = traj.derivative_spline(2).evaluate(t)
        dt = self.cfg.knot_dt
        q1 = p - a * dt * dt / 6.0
        q0 = q1 + a * dt * dt / 2.0 - v * dt
        q2 = q1 + a * dt * dt / 2.0 + v * dt
        return [q0, q1, q2]

    def _build_plan(self, goal: np.ndarray) -> BSplineTrajectory:
        st = self.state
        dt = self.cfg.knot_dt
        spacing = self.cfg.ctrl_spacing
        head = self._head_triple()
        interior: list[np.ndarray] = []
        anchor = st.uav.position
        prev = st.trajectory
        if prev is not None:
            t = st.sim_time + 2.0 * dt
            while t < prev.end_time - 1e-9 and len(interior) < 200:
                pt = prev.evaluate(t)
                if np.linalg.norm(goal - pt) <= 0.75 * spacing:
                    break
                interior.append(pt)
                t += dt
            if interior:
                anchor = interior[-1]
        offset = goal - anchor
        dist = float(np.linalg.norm(offset))
        if dist > 0.75 * spacing:
            u = offset / dist
            s = 0.5 * spacing
            while s < dist - 0.5 * spacing and len(interior) < 260:
                interior.append(anchor + s * u)
                s += spacing
        pts = head + interior + [goal.copy()] * 3
        while len(pts) < 8:
            pts.insert(3, (pts[2] + goal) / 2.0)
        return BSplineTrajectory(np.array(pts), 3, dt, st.sim_time)

    def _dense_limits(self, traj: BSplineTrajectory) -> tuple[float, float]:
        ts = np.linspace(traj.start_time, traj.end_time, 240)
        v = np.linalg.norm(traj.derivative_spline(1).evaluate(ts), axis=1).max()
        a = np.linalg.norm(traj.derivative_spline(2).evaluate(ts), axis=1).max()
        return float(v), float(a)

    def _replan(self) -> None:
        st = self.state
        st.grid.refresh_distance_field()
        seed_traj = self._build_plan(st.goal_estimate)
        if not self.cfg.use_optimizer:
            self._accept(seed_traj)
            return
        options = (
            self.cfg.replan_options if st.trajectory is not None else self.cfg.cold_options
        )
        result = optimize(seed_traj, self.cfg.weights, st.grid, options, warm_start=True)
        if self.audit is not None and result.trace:
            costs = [row[1] for row in result.trace]
            if any(b > a + 1e-9 for a, b in zip(costs, costs[1:])):
                self.audit.monotone = False
        candidate = result.trajectory
        v, a = self._dense_limits(candidate)
        w = self.cfg.weights
        if v > w.v_max * (1 + 2e-4) or a > w.a_max * (1 + 2e-4):
            retry = optimize(
                candidate,
                w,
                st.grid,
                replace(options, max_iterations=400, gradient_tolerance=1e-6),
                warm_start=True,
            )
            v, a = self._dense_limits(retry.trajectory)
            if v > w.v_max * (1 + 2e-4) or a > w.a_max * (1 + 2e-4):
                return  # keep flying the previous feasible trajectory
            candidate = retry.trajectory
        self._last_total = total_cost(candidate, w, st.grid).total
        self._accept(candidate, v, a)

    def _accept(self, traj: BSplineTrajectory, v: float | None = None, a: float | None = None) -> None:
        st = self.state
        st.trajectory = traj
        st.replans += 1
        if self.audit is not None:
            if v is None:
                v, a = self._dense_limits(traj)
            self.audit.max_speed = max(self.audit.max_speed, v)
            self.audit.max_accel = max(self.audit.max_accel, a)
            self.audit.final_trajectory = traj

    # -- the tick --------------------------------------------------------------

    def step(self, dt: float | None = None) -> NavigatorState:
        st = self.state
        if st.status != STATUS_RUNNING:
            return st
        dt = self.cfg.tick_dt if dt is None else dt
        cfg = self.cfg

        goal_changed = False
        ready = [g for t, g in self._pending if t <= st.sim_time]
        if ready:
            self._pending = [(t, g) for t, g in self._pending if t > st.sim_time]
            for goal in ready:
                goal_changed |= self._apply_goal(goal)

        due = st.goal_estimate is None or (
            cfg.regrounding and st.sim_time - st.last_grounding >= cfg.grounding.period
        )
        if due:
            goal_changed |= self._try_ground()

        cloud = sample_lidar(
            self.scenario.world,
            st.uav.pose,
            cfg.lidar_azimuth,
            cfg.lidar_elevation,
            self.scenario.max_range,
            self.scenario.lidar_extrinsics,
        )
        lidar_pose = st.uav.pose.compose(self.scenario.lidar_extrinsics)
        pts_world = lidar_pose.apply(cloud.points)
        # Half-voxel jitter inflates surfaces by the quantization error, so
        # sparse scans of edges/corners read conservative distances.
        if pts_world.shape[0]:
            h = 0.5 * st.grid.resolution
            jitter = np.array(
                [[h, 0, 0], [-h, 0, 0], [0, h, 0], [0, -h, 0], [0, 0, h], [0, 0, -h]]
            )
            pts_world = np.vstack([pts_world, (pts_world[:, None, :] + jitter).reshape(-1, 3)])
        new_centers = st.grid.insert_cloud(pts_world)
        self._maybe_slide()
        # New occupancy beyond the truncation radius of every control point
        # cannot change any cost term, so such updates need no replan.
        map_changed = len(new_centers) > 0 and (
            st.trajectory is None or self._near_plan(new_centers)
        )

        brake_done = (
            self._braking
            and st.trajectory is not None
            and st.sim_time >= st.trajectory.end_time - 1e-9
        )
        if brake_done:
            self._braking = False

        if (
            st.goal_estimate is not None
            and not self._braking
            and (goal_changed or map_changed or st.trajectory is None or brake_done)
        ):
            self._replan()
        if not self._braking and cfg.use_optimizer:
            self._maybe_brake()

        if st.trajectory is not None:
            st.uav = advance(st.uav, st.trajectory, dt, cfg.weights.v_max)
        else:
            st.uav = UavState(st.uav.pose, np.zeros(3), st.uav.time + dt)
        st.sim_time = st.uav.time

        if self.audit is not None:
            self.audit.positions.append(st.uav.position.copy())
            clearance = float(
                self.scenario.world.signed_distance(st.uav.position)[0]
            )
            self.audit.min_path_clearance = min(
                self.audit.min_path_clearance, clearance
            )

        if check_collision(self.scenario.world, st.uav.position, cfg.vehicle_radius):
            st.collided = True
            st.status = STATUS_COLLISION
        elif (
            st.goal_estimate is not None
            and st.trajectory is not None
            and st.sim_time >= st.trajectory.end_time - 1e-9
            and np.linalg.norm(st.uav.position - st.goal_estimate) < cfg.arrival_radius
        ):
            st.status = STATUS_SUCCEEDED
        elif st.goal_estimate is None and st.sim_time >= cfg.grounding_timeout:
            st.status = STATUS_GROUNDING_FAILED
        elif st.sim_time >= cfg.time_limit:
            st.status = STATUS_TIMEOUT

        self._trace_rows.append(
            (
                st.sim_time,
                *st.uav.position,
                *(st.goal_estimate if st.goal_estimate is not None else (math.nan,) * 3),
                self._last_total,
                st.status,
            )
        )
        return st

    def _near_plan(self, new_centers: np.ndarray) -> bool:
        ctrl = self.state.trajectory.control_points
        diff = new_centers[:, None, :] - ctrl[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        reach = self.cfg.truncation_radius
        return bool((d2 <= reach * reach).any())

    def _maybe_brake(self) -> None:
        """Swap in a braking maneuver when the imminent path loses clearance.

        The collision cost only guards free control points; the pinned head
        (committed momentum) can still drift toward obstacles mapped late.
        """
        st = self.state
        traj = st.trajectory
        if traj is None or float(np.linalg.norm(st.uav.velocity)) < 0.05:
            return
        t_end = min(traj.end_time, st.sim_time + self.cfg.brake_lookahead)
        if t_end <= st.sim_time + 1e-9:
            return
        st.grid.refresh_distance_field()
        ts = np.linspace(max(st.sim_time, traj.start_time), t_end, 16)
        ahead = traj.evaluate(ts)
        d, _, _ = st.grid.query_distance_batch(ahead)
        if float(d.min()) >= self.cfg.brake_clearance:
            return
        dt = self.cfg.knot_dt
        head = self._head_triple()
        v = st.uav.velocity
        glide1 = head[2] + 0.5 * dt * v
        glide2 = head[2] + 0.625 * dt * v
        pts = np.array(head + [glide1, glide2, glide2, glide2, glide2])
        self._braking = True
        self._accept(BSplineTrajectory(pts, 3, dt, st.sim_time))

    def _maybe_slide(self) -> None:
        """Re-anchor the window only when the vehicle nears its boundary.

        Desk-scale windows cover the whole flight volume, so in practice this
        is a no-op; it exists so long flights in larger worlds stay mapped.
        """
        st = self.state
        grid = st.grid
        margin = grid.truncation_radius + 2.0
        lo = (grid.origin + margin / grid.resolution) * grid.resolution
        hi = (grid.origin + grid.window_size - margin / grid.resolution) * grid.resolution
        p = st.uav.position
        if (p < lo).any() or (p > hi).any():
            grid.slide_window(p)

    def write_trace_csv(self, path) -> int:
        with open(path, "w") as fh:
            fh.write("time,x,y,z,goal_x,goal_y,goal_z,J,status\n")
            for row in self._trace_rows:
                vals = ",".join(
                    f"{v:.9g}" if isinstance(v, float) else str(v) for v in row
                )
                fh.write(vals + "\n")
        return len(self._trace_rows)


def make_mock_grounder(
    scenario: Scenario, config: NavigatorConfig, seed: int
) -> MockGrounder:
    return MockGrounder(
        scenario.goal,
        scenario.world,
        scenario.camera,
        pixel_noise_sigma=config.grounding.pixel_noise_sigma,
        seed=int(np.random.SeedSequence([seed, scenario.seed, 1]).generate_state(1)[0]),
        latency=config.grounding.latency_model,
    )


def run_episode(
    scenario: Scenario,
    config: NavigatorConfig = NavigatorConfig(),
    seed: int = 0,
    grounder=None,
    audit: EpisodeAudit | None = None,
    trace_path=None,
) -> EpisodeResult:
    """Tick the navigator to a terminal status and score against the true goal."""
    if grounder is None:
        grounder = make_mock_grounder(scenario, config, seed)
    nav = Navigator(scenario, grounder, config, seed, audit)
    max_ticks = int(math.ceil(config.time_limit / config.tick_dt)) + 2
    for _ in range(max_ticks):
        if nav.step().status != STATUS_RUNNING:
            break
    st = nav.state
    if st.status == STATUS_RUNNING:
        st.status = STATUS_TIMEOUT
    ne = float(np.linalg.norm(st.uav.position - scenario.goal))
    success = ne < scenario.delta and not st.collided
    time_metric = st.sim_time + config.grounding.latency_model * st.groundings
    if trace_path is not None:
        nav.write_trace_csv(trace_path)
    return EpisodeResult(
        success=success,
        ne=ne,
        time=time_metric,
        collided=st.collided,
        groundings=st.groundings,
        replans=st.replans,
        status=st.status,
    )
