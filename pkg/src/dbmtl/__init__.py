"""Deep Bayesian multi-target learning on a small numpy autodiff core.

Targets are wired into a Bayesian network whose edges are hidden layers:
each target's tower sees the target embeddings of its parents.  The
package also holds single-target, hard-shared and product-form baselines,
structure search, a synthetic causal data generator and evaluation tools.
"""

from .data import Dataset, FeatureSchema, LabelSpec, apply_gating, load_csv, time_split
from .errors import (BudgetError, ComparisonError, ConfigurationError, ContractError,
                     DataError, DBMTLError, StructureError, TrainingError)
from .metrics import auc, bayes_optimal_metrics, build_report, evaluate_model, mse
from .models import ModelConfig, TargetSpec, build_model, compute_loss, forward, predict
from .search import (SearchBudget, enumerate_dags, greedy_search, heuristic_initial_structure,
                     local_variation_search)
from .structure import BayesianStructure, topological_order, validate_structure
from .synthetic import SyntheticSpec, SyntheticTarget, generate_synthetic, preset
from .training import TrainConfig, train

__all__ = [
    "BayesianStructure", "BudgetError", "ComparisonError", "ConfigurationError",
    "ContractError", "DBMTLError", "DataError", "Dataset", "FeatureSchema", "LabelSpec",
    "ModelConfig", "SearchBudget", "StructureError", "SyntheticSpec", "SyntheticTarget",
    "TargetSpec", "TrainConfig", "TrainingError", "apply_gating", "auc",
    "bayes_optimal_metrics", "build_model", "build_report", "compute_loss", "enumerate_dags",
    "evaluate_model", "forward", "generate_synthetic", "greedy_search",
    "heuristic_initial_structure", "load_csv", "local_variation_search", "mse", "predict",
    "preset", "time_split", "topological_order", "train", "validate_structure",
]
