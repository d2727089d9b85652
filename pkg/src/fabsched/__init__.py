"""fabsched: shift-based factory scheduling on a discrete tick clock.

A constraint-checked shop floor simulator, leader-follower PPO schedulers
with operation-wise rewards and per-shift goal vectors, a rule-based
conversion guard, dispatch-rule baselines, and paired evaluation tooling.
"""

__version__ = "0.1.0"

from .factory import (
    AssignmentEvent,
    MaintenanceWindow,
    SimulationRecord,
    ValidationReport,
    objective_value,
    validate_trace,
)
from .scenario import (
    EpisodeInstance,
    ScenarioConfig,
    ScenarioShape,
    generate_scenario,
    load_scenario,
    sample_episode,
)
from .simulator import ShopFloorSim
from .baselines import VARIANTS, VariantSpec, Team, build_variant
from .learner import TrainConfig, infer_rolling, team_from_checkpoint, train
from .metrics import (
    ComparisonTable,
    MetricsReport,
    compute_metrics,
    run_ablation,
    run_benchmark,
)

__all__ = [
    "AssignmentEvent",
    "ComparisonTable",
    "EpisodeInstance",
    "MaintenanceWindow",
    "MetricsReport",
    "ScenarioConfig",
    "ScenarioShape",
    "ShopFloorSim",
    "SimulationRecord",
    "Team",
    "TrainConfig",
    "VARIANTS",
    "ValidationReport",
    "VariantSpec",
    "__version__",
    "build_variant",
    "compute_metrics",
    "generate_scenario",
    "infer_rolling",
    "load_scenario",
    "objective_value",
    "run_ablation",
    "run_benchmark",
    "sample_episode",
    "team_from_checkpoint",
    "train",
    "validate_trace",
]
