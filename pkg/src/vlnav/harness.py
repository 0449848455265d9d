"""Scenario ingestion, batch evaluation, and data export.

Scenario JSON schema (field names and units are normative):

    {
      "world": {"bounds": [[xl,yl,zl],[xh,yh,zh]],
                "obstacles": [{"type": "box", "center": [x,y,z], "size": [sx,sy,sz]},
                               {"type": "sphere", "center": [x,y,z], "radius": r}]},
      "start": {"position": [x,y,z], "yaw": radians},
      "goal": [x,y,z],
      "instruction": "text",
      "delta": meters,
      "camera": {"width": px, "height": px, "fx": px, "fy": px,
                 "cx": px, "cy": px, "max_range": meters},
      "seed": int
    }

Reports are deterministic: identical inputs produce byte-identical JSON
(no timestamps; keys sorted; the effective configuration is embedded with
a fingerprint for audit).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .bspline import BSplineTrajectory
from .geometry import CameraIntrinsics, Pose
from .pipeline import EpisodeResult, NavigatorConfig, run_episode
from .simulator import (
    DEFAULT_CAMERA,
    DEFAULT_MAX_RANGE,
    Box,
    Scenario,
    Sphere,
    UavState,
    World,
    scenario_to_dict,
)


class SchemaError(ValueError):
    """Scenario document failed validation; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class EmptyInputError(ValueError):
    """Batch evaluation requires at least one scenario."""


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise SchemaError(f"{path}{key}" if path.endswith(".") or not path else key, "missing field")
    return doc[key]


def _vec3(value, path: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float).reshape(3)
    except (TypeError, ValueError):
        raise SchemaError(path, "expected a 3-vector of numbers") from None
    if not np.isfinite(arr).all():
        raise SchemaError(path, "components must be finite")
    return arr


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, "expected a number")
    return float(value)


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise SchemaError("", "scenario document must be a JSON object")
    world_doc = _require(doc, "world", "")
    if not isinstance(world_doc, dict):
        raise SchemaError("world", "expected an object")
    bounds_raw = _require(world_doc, "bounds", "world.")
    bounds_arr = np.asarray(bounds_raw, dtype=float)
    if bounds_arr.size != 6:
        raise SchemaError("world.bounds", "expected 2x3 (or 6) numbers")
    bounds = bounds_arr.reshape(2, 3)

    obstacles = []
    obs_doc = _require(world_doc, "obstacles", "world.")
    if not isinstance(obs_doc, list):
        raise SchemaError("world.obstacles", "expected a list")
    for i, ob in enumerate(obs_doc):
        path = f"world.obstacles[{i}]"
        if not isinstance(ob, dict):
            raise SchemaError(path, "expected an object")
        kind = _require(ob, "type", path + ".")
        center = _vec3(_require(ob, "center", path + "."), path + ".center")
        try:
            if kind == "box":
                size = _vec3(_require(ob, "size", path + "."), path + ".size")
                obstacles.append(Box(center, size))
            elif kind == "sphere":
                radius = _number(_require(ob, "radius", path + "."), path + ".radius")
                obstacles.append(Sphere(center, radius))
            else:
                raise SchemaError(path + ".type", f"unknown obstacle type {kind!r}")
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(path, str(exc)) from None

    start_doc = _require(doc, "start", "")
    if not isinstance(start_doc, dict):
        raise SchemaError("start", "expected an object")
    position = _vec3(_require(start_doc, "position", "start."), "start.position")
    yaw = _number(_require(start_doc, "yaw", "start."), "start.yaw")

    goal = _vec3(_require(doc, "goal", ""), "goal")
    instruction = _require(doc, "instruction", "")
    if not isinstance(instruction, str) or not instruction.strip():
        raise SchemaError("instruction", "expected non-empty text")
    delta = _number(_require(doc, "delta", ""), "delta")
    if delta <= 0:
        raise SchemaError("delta", "must be positive")

    cam_doc = doc.get("camera")
    max_range = DEFAULT_MAX_RANGE
    camera = DEFAULT_CAMERA
    if cam_doc is not None:
        if not isinstance(cam_doc, dict):
            raise SchemaError("camera", "expected an object")
        try:
            camera = CameraIntrinsics(
                fx=_number(_require(cam_doc, "fx", "camera."), "camera.fx"),
                fy=_number(_require(cam_doc, "fy", "camera."), "camera.fy"),
                cx=_number(_require(cam_doc, "cx", "camera."), "camera.cx"),
                cy=_number(_require(cam_doc, "cy", "camera."), "camera.cy"),
                width=int(_number(_require(cam_doc, "width", "camera."), "camera.width")),
                height=int(_number(_require(cam_doc, "height", "camera."), "camera.height")),
            )
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError("camera", str(exc)) from None
        if "max_range" in cam_doc:
            max_range = _number(cam_doc["max_range"], "camera.max_range")

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise SchemaError("seed", "expected an integer")

    try:
        world = World(tuple(obstacles), bounds)
        start = UavState(Pose.from_yaw(yaw, position), np.zeros(3), 0.0)
        return Scenario(
            world=world,
            start=start,
            goal=goal,
            instruction=instruction,
            delta=delta,
            camera=camera,
            max_range=max_range,
            seed=seed,
        )
    except ValueError as exc:
        raise SchemaError("world", str(exc)) from None


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"invalid JSON: {exc}") from None
    return scenario_from_dict(doc)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- batch evaluation -----------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    sr: float  # percent of successful episodes
    ne_mean: float  # meters, over all episodes
    time_mean: float | None  # seconds, over successful episodes
    rows: tuple  # one dict per scenario
    trials_per_scenario: int
    config_fingerprint: str
    config: dict

    def to_dict(self) -> dict:
        return {
            "sr": self.sr,
            "ne_mean": self.ne_mean,
            "time_mean": self.time_mean,
            "rows": list(self.rows),
            "trials_per_scenario": self.trials_per_scenario,
            "config_fingerprint": self.config_fingerprint,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def config_to_dict(config: NavigatorConfig) -> dict:
    return dataclasses.asdict(config)


def config_fingerprint(config: NavigatorConfig) -> str:
    canon = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _episode_row(result: EpisodeResult, seed: int) -> dict:
    return {
        "seed": seed,
        "success": result.success,
        "ne": result.ne,
        "time": result.time,
        "collided": result.collided,
        "groundings": result.groundings,
        "replans": result.replans,
        "status": result.status,
    }


def batch_eval(
    scenarios,
    config: NavigatorConfig = NavigatorConfig(),
    trials: int = 20,
    base_seed: int = 0,
    grounder_factory=None,
) -> MetricsReport:
    """Run `trials` seeded episodes per scenario and aggregate SR / NE / Time.

    Episode k of every scenario uses seed base_seed + k; per-episode
    randomness also folds in the scenario's own seed, so the report is a
    pure function of (scenarios, config, trials, base_seed) with the default
    mock grounder.  `grounder_factory(scenario, seed)` swaps in another
    grounder (e.g. a remote endpoint client).
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise EmptyInputError("no scenarios to evaluate")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    rows = []
    all_results: list[EpisodeResult] = []
    for idx, scenario in enumerate(scenarios):
        episodes = []
        for trial in range(trials):
            seed = base_seed + trial
            grounder = grounder_factory(scenario, seed) if grounder_factory else None
            result = run_episode(scenario, config, seed=seed, grounder=grounder)
            episodes.append(_episode_row(result, seed))
            all_results.append(result)
        succ = [e for e in episodes if e["success"]]
        rows.append(
            {
                "scenario": idx,
                "scenario_seed": scenario.seed,
                "sr": 100.0 * len(succ) / len(episodes),
                "ne_mean": float(np.mean([e["ne"] for e in episodes])),
                "time_mean": float(np.mean([e["time"] for e in succ])) if succ else None,
                "episodes": episodes,
            }
        )

    successes = [r for r in all_results if r.success]
    return MetricsReport(
        sr=100.0 * len(successes) / len(all_results),
        ne_mean=float(np.mean([r.ne for r in all_results])),
        time_mean=float(np.mean([r.time for r in successes])) if successes else None,
        rows=tuple(rows),
        trials_per_scenario=trials,
        config_fingerprint=config_fingerprint(config),
        config=config_to_dict(config),
    )


def export_trajectory(traj: BSplineTrajectory, sample_rate: float, path) -> int:
    """CSV dump t,x,y,z,vx,vy,vz over the spline domain; returns the row count."""
    if sample_rate <= 0:
        raise ValueError("sample_rate must be positive")
    n = int(round(traj.duration * sample_rate)) + 1
    ts = traj.start_time + np.arange(n) / sample_rate
    ts = np.minimum(ts, traj.end_time)
    pos = traj.evaluate(ts)
    vel = traj.derivative_spline(1).evaluate(ts)
    with open(path, "w") as fh:
        fh.write("t,x,y,z,vx,vy,vz\n")
        for t, p, v in zip(ts, pos, vel):
            fh.write(
                f"{t:.9g},{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},"
                f"{v[0]:.9g},{v[1]:.9g},{v[2]:.9g}\n"
            )
    return n


# -- optimizer gradient audit -----------------------------------------------------


def gradient_audit(n_instances: int = 100, seed: int = 0, kink_margin: float = 0.02):
    """Compare analytic cost gradients with central finite differences.

    Returns a dict of max relative errors per term over randomized
    (trajectory, map) instances; samples whose clearance sits within
    `kink_margin` of the barrier threshold are excluded.
    """
    from .mapping import OccupancyMap
    from .optimizer import (
        CostWeights,
        cost_collision,
        cost_feasibility,
        cost_smoothness,
        total_cost,
    )

    rng = np.random.default_rng(seed)
    weights = CostWeights()
    errors = {"smoothness": 0.0, "collision": 0.0, "feasibility": 0.0, "total": 0.0}

    for _ in range(n_instances):
        grid = OccupancyMap(0.2, (32, 32, 32), center=(0.0, 0.0, 0.0), truncation_radius=2.0)
        n_occ = int(rng.integers(20, 200))
        grid.insert_cloud(rng.uniform(-2.9, 2.9, size=(n_occ, 3)))
        grid.recompute_distance_field()
        n_ctrl = int(rng.integers(10, 18))
        ctrl = rng.uniform(-2.5, 2.5, size=(n_ctrl, 3))
        traj = BSplineTrajectory(ctrl, 3, float(rng.uniform(0.3, 0.8)))
        nb = traj.degree

        free = traj.control_points[nb : n_ctrl - nb]
        d, _, _ = grid.query_distance_batch(free)
        keep = np.abs(d - weights.d_safe) > kink_margin  # per free point

        def full(t):
            return (
                ("smoothness", cost_smoothness(t)),
                ("collision", cost_collision(t, grid, weights.d_safe)),
                ("feasibility", cost_feasibility(t, weights.v_max, weights.a_max)),
            )

        analytic = {name: g[nb : n_ctrl - nb].ravel() for name, (_, g) in full(traj)}
        analytic["total"] = total_cost(traj, weights, grid).gradient

        fd = {name: np.zeros(3 * (n_ctrl - 2 * nb)) for name in analytic}
        for i in range(n_ctrl - 2 * nb):
            eps = 1e-6 * max(1.0, float(np.linalg.norm(free[i])))
            for c in range(3):
                vals = {}
                for sign in (1.0, -1.0):
                    pts = traj.control_points.copy()
                    pts[nb + i, c] += sign * eps
                    t2 = BSplineTrajectory(pts, traj.degree, traj.knot_interval)
                    for name, (v, _) in full(t2):
                        vals.setdefault(name, 0.0)
                        vals[name] += sign * v
                    vals.setdefault("total", 0.0)
                    vals["total"] += sign * total_cost(t2, weights, grid).total
                for name in fd:
                    fd[name][3 * i + c] = vals[name] / (2 * eps)

        mask = np.repeat(keep, 3)
        for name in errors:
            a, f = analytic[name], fd[name]
            if name in ("collision", "total"):
                a, f = a[mask], f[mask]
            denom = max(float(np.linalg.norm(f)), 1e-9)
            errors[name] = max(errors[name], float(np.linalg.norm(a - f)) / denom)

    return errors
