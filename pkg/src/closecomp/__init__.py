"""Close-comparison-group selection and ATT estimation for panel data."""

from .config import PipelineConfig
from .dgp import DgpSpec, counterexample_presets, generate, population_estimands, preset
from .distance import (
    DistanceReport,
    compute_distances,
    jackknife_distance_se,
    mean_distance,
    wasserstein_distance,
)
from .estimator import (
    AttEstimate,
    PlaceboReport,
    att_conditional,
    att_estimate,
    att_group_time,
    multiply_robust_att,
    oracle_att,
    placebo_test,
    run_selection,
)
from .montecarlo import McSummary, robustness_table, run_mc, run_preset_mc
from .panel import GroupProfile, PanelDataset, load_panel, profile_groups
from .selection import (
    KernelSpec,
    SelectionResult,
    default_bandwidth,
    kernel_eval,
    select_groups,
)
from .timehomog import (
    TimeHomogReport,
    detect_time_homogeneity,
    lou_parametric_transfer_check,
    tau_th,
)

__version__ = "0.1.0"

__all__ = [
    "AttEstimate", "DgpSpec", "DistanceReport", "GroupProfile", "KernelSpec",
    "McSummary", "PanelDataset", "PipelineConfig", "PlaceboReport",
    "SelectionResult", "TimeHomogReport", "att_conditional", "att_estimate",
    "att_group_time", "compute_distances", "counterexample_presets",
    "default_bandwidth", "detect_time_homogeneity", "generate",
    "jackknife_distance_se", "kernel_eval", "load_panel",
    "lou_parametric_transfer_check", "mean_distance", "multiply_robust_att",
    "oracle_att", "placebo_test", "population_estimands", "preset",
    "profile_groups", "robustness_table", "run_mc", "run_preset_mc",
    "run_selection", "select_groups", "tau_th", "wasserstein_distance",
]
