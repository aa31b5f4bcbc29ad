"""Training-accelerator design search over operator graphs.

Core-dimension and core-count search for one accelerator, and pipeline
composition of per-stage designs for multi-accelerator training.
"""

__version__ = "0.1.0"

from .arch import CoreDims, DesignPoint, make_design  # noqa: E402
from .config import MetricSpec, Objective, PipelineParams, Scheme, SearchSpace, SystemConfig  # noqa: E402
from .cost import annotate  # noqa: E402
from .errors import (  # noqa: E402
    AccelMineError,
    InfeasibleBudget,
    NoCoreForAffinity,
    UnpartitionableModel,
)
from .global_search import Mode, global_search  # noqa: E402
from .graph import Core, OperatorGraph, OpKind, Pass, TrainingGraph, apply_fusion, build_training_graph  # noqa: E402
from .pipeline import apply_tmp, partition_model, pipeline_iteration_time  # noqa: E402
from .pruner import Engine, exhaustive_sweep, local_search  # noqa: E402
from .schedule import compute_asap_alap, list_schedule  # noqa: E402

__all__ = [
    "AccelMineError", "Core", "CoreDims", "DesignPoint", "Engine", "InfeasibleBudget", "MetricSpec", "Mode",
    "NoCoreForAffinity", "Objective", "OpKind", "OperatorGraph", "Pass", "PipelineParams", "Scheme",
    "SearchSpace", "SystemConfig", "TrainingGraph", "UnpartitionableModel", "annotate", "apply_fusion",
    "apply_tmp", "build_training_graph", "compute_asap_alap", "exhaustive_sweep", "global_search",
    "list_schedule", "local_search", "make_design", "partition_model", "pipeline_iteration_time",
    "__version__",
]
