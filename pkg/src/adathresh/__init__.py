"""Adaptive exposure-threshold estimation of average treatment effects on networks."""

__version__ = "0.1.0"

from .design import Assignment, Design, enumerate_assignments, sample_assignment
from .errors import AdaThreshError
from .estimators import (
    EstimatorReport,
    MseProfile,
    OlsFit,
    dim_bias_signal,
    dim_estimate,
    dim_variance_estimate,
    estimate_with_rule,
    ht_bandwidth_form,
    ht_bias_signal,
    ht_estimate,
    ht_variance_estimate,
    lepski_select,
    mse_profile,
    ols_fit,
)
from .exposure import (
    ExposureProbabilities,
    ExposureProfile,
    ThresholdGrid,
    dependent_pairs,
    exact_probabilities,
    exact_unit_marginals,
    exposure_fractions,
    mc_probabilities,
)
from .graph import (
    Clustering,
    Graph,
    contiguous_clusters,
    from_edge_list,
    kth_power_cycle,
    load_clusters,
    non_isolated_subset,
    sbm,
)
from .oracle import OracleProfile, exact_mse, mc_mse, prop1_bias, prop2_var_scale, prop3_bias, prop4_var_scale
from .outcomes import OutcomeModel, evaluate, true_ate
