"""Parameter sensitivity analysis and auto-tuning for dataflow image-analysis workflows."""
from .autotune import TuneConfig, TuneResult, tune
from .graph import StageDecl, Workflow, build_compact, build_replica, replay_equivalence
from .kernels import BACKEND
from .runtime import CostModel, LevelConfig, StorageHierarchy, run
from .sa import ResultTable, correlations, moat, sobol
from .space import ParamSet, ParameterAxis, ParameterSpace, make_design
from .spatial import dice, extract_objects, jaccard, knn, overlap_ratio, pixel_diff, spatial_join

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CostModel",
    "LevelConfig",
    "ParamSet",
    "ParameterAxis",
    "ParameterSpace",
    "ResultTable",
    "StageDecl",
    "StorageHierarchy",
    "TuneConfig",
    "TuneResult",
    "Workflow",
    "build_compact",
    "build_replica",
    "correlations",
    "dice",
    "extract_objects",
    "jaccard",
    "knn",
    "make_design",
    "moat",
    "overlap_ratio",
    "pixel_diff",
    "replay_equivalence",
    "run",
    "sobol",
    "spatial_join",
    "tune",
]
