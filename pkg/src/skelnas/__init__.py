"""Architecture search for lightweight skeleton graph-convolution classifiers.

numpy/scipy only: signal pipeline, search space, controller, a small
reverse-mode autodiff engine, the training loop, statistics and the
search orchestrator.
"""
from .builder import build_architecture, complexity, count_macs, count_params, dump_architecture
from .controller import init_policy, policy_update, sample_batch
from .space import Candidate, SearchSpace, best_choice_candidate, builtin_cp_space, desk_space
from .stats import clopper_pearson, comparison_table, evaluate_videos, roc_auc

__version__ = "0.1.0"

__all__ = [
    "Candidate", "SearchSpace", "best_choice_candidate", "build_architecture", "builtin_cp_space",
    "clopper_pearson", "comparison_table", "complexity", "count_macs", "count_params", "desk_space",
    "dump_architecture", "evaluate_videos", "init_policy", "policy_update", "roc_auc", "sample_batch",
]
