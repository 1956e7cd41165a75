"""Goal-conditioned Gaussian-process crowd motion model.

Learns how pedestrians choose velocities from the occupancy of their
local neighborhood, separately per destination goal; infers goals from
partial observations; and predicts joint futures of all agents by Monte
Carlo rollout. Includes a displacement-error benchmark harness and the
``crowdgp`` command-line interface.
"""

from .data import (
    GoalSet,
    Scene,
    SynthConfig,
    Trajectory,
    TrainingSet,
    VelocitySeries,
    build_training_set,
    compute_velocities,
    default_goal_fan,
    label_goal,
    load_goals,
    load_scene,
    save_goals,
    save_scene,
    synth_scene,
)
from .errors import (
    CrowdGpError,
    NumericalError,
    ParseError,
    SchemaError,
    ValidationError,
)
from .evaluate import (
    BenchmarkConfig,
    BenchmarkReport,
    ade,
    constant_velocity_baseline,
    fde,
    run_benchmark,
)
from .goals import GoalPosterior, goal_log_likelihood, infer_goal_posterior, infer_scene_goals
from .gp import Gaussian1, GpFitConfig, Hyperparams, TrainedGp, condition, fit
from .grid import GridConfig, cell_index, flat_index, occupancy_grid, occupancy_grids
from .model import GoalModel, load_model, save_model, train_goal_models
from .predict import (
    PredictionRequest,
    TrajectoryFan,
    condition_agents,
    map_trajectory,
    multi_step,
    request_from_scene,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkConfig",
    "BenchmarkReport",
    "CrowdGpError",
    "Gaussian1",
    "GoalModel",
    "GoalPosterior",
    "GoalSet",
    "GpFitConfig",
    "GridConfig",
    "Hyperparams",
    "NumericalError",
    "ParseError",
    "PredictionRequest",
    "Scene",
    "SchemaError",
    "SynthConfig",
    "TrainedGp",
    "TrainingSet",
    "Trajectory",
    "TrajectoryFan",
    "ValidationError",
    "VelocitySeries",
    "ade",
    "build_training_set",
    "cell_index",
    "compute_velocities",
    "condition",
    "condition_agents",
    "constant_velocity_baseline",
    "default_goal_fan",
    "fde",
    "fit",
    "flat_index",
    "goal_log_likelihood",
    "infer_goal_posterior",
    "infer_scene_goals",
    "label_goal",
    "load_goals",
    "load_model",
    "load_scene",
    "map_trajectory",
    "multi_step",
    "occupancy_grid",
    "occupancy_grids",
    "request_from_scene",
    "run_benchmark",
    "save_goals",
    "save_model",
    "save_scene",
    "synth_scene",
    "train_goal_models",
]
