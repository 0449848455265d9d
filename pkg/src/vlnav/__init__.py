"""Desk-scale aerial vision-language navigation.

Semantic grounding produces 2D pixel goals (mock oracle or remote model
endpoint), a geometric chain lifts them to 3D world coordinates, and a
gradient-based B-spline planner produces collision-free, dynamically
feasible trajectories evaluated by success rate, navigation error, and
episode time.
"""

from .bspline import BSplineTrajectory, init_straight_line
from .geometry import (
    CameraIntrinsics,
    PixelTarget,
    Point3,
    Pose,
    back_project,
    project,
    sensor_to_world,
)
from .grounding import (
    GroundingConfig,
    GroundingResult,
    GroundingStatus,
    Mailbox,
    MockGrounder,
    RemoteGrounder,
    build_prompt,
    ground,
    parse_response,
)
from .harness import MetricsReport, batch_eval, export_trajectory, load_scenario, save_scenario
from .mapping import OccupancyMap, PointCloud
from .optimizer import (
    CostReport,
    CostWeights,
    OptimizeOptions,
    OptimizeResult,
    cost_collision,
    cost_feasibility,
    cost_smoothness,
    optimize,
    total_cost,
)
from .pipeline import (
    EpisodeResult,
    Navigator,
    NavigatorConfig,
    lift_target,
    run_episode,
)
from .simulator import (
    Box,
    DepthMap,
    Scenario,
    ScenarioParams,
    Sphere,
    UavState,
    World,
    advance,
    check_collision,
    gen_random_scenario,
    render_depth,
    sample_lidar,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
