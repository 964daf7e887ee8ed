"""Sequential neural posterior estimation with fewer simulator calls."""
from .density import Mdn, TruncationPolicy, fit_atomic, fit_mle, mdn_log_prob, mdn_sample
from .harness import ExperimentConfig, ResultRecord, aggregate, run_experiment
from .inference import (
    InferenceConfig,
    PosteriorResult,
    run_combined,
    run_method,
    run_regular,
    run_snle,
    run_snle_surrogate,
    run_sp,
    run_surrogate,
)
from .metrics import c2st, ed2, loc_disp, median_heuristic, mmd2
from .support_points import SpConfig, ccp_step, sp_objective, support_points
from .tasks import get_task, task_names

__version__ = "0.1.0"
