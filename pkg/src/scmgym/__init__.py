"""Exact binary structural causal models and templated causal-inference question corpora."""
from .config import GymConfig
from .graph import Dag, LabeledDag, SemanticsMode, assign_semantics, generate_dag, topological_order
from .identify import backdoor_sets, is_d_separated, mediators
from .oracle import EstimandSpec, Task, counterfactual, estimand, interventional
from .questions import LACK_CONDITION, QuestionInstance, generate_instance
from .scm import Scm, exact_joint, instantiate_scm, query, sample

__version__ = "0.1.0"

__all__ = [
    "Dag", "EstimandSpec", "GymConfig", "LACK_CONDITION", "LabeledDag", "QuestionInstance", "Scm",
    "SemanticsMode", "Task", "assign_semantics", "backdoor_sets", "counterfactual", "estimand",
    "exact_joint", "generate_dag", "generate_instance", "instantiate_scm", "interventional",
    "is_d_separated", "mediators", "query", "sample", "topological_order",
]
