"""Network reconstruction from spatiotemporal event data via Hawkes processes."""

from .core import (
    BackgroundField,
    BinnedKernel,
    DegenerateModelError,
    Event,
    EventCatalog,
    NonparamModel,
    ParametricParams,
    Region,
    ResponsibilityMatrix,
    TriggeringMatrix,
    background_parametric,
    evaluate_tau,
    intensity_nonparam,
    intensity_parametric,
    loglik_parametric,
)
from .decluster import branching_ratio, decluster, decluster_report, precision_recall
from .eventnet import (
    EventGraph,
    build_event_network,
    degree_preserving_randomize,
    motif_census_3,
    motif_zscores,
)
from .fit_nonparametric import NonparamFit, adaptive_bandwidths, fit_nonparam
from .fit_parametric import (
    FitTrace,
    ParametricFit,
    TemporalFit,
    TemporalParams,
    fit_parametric,
    fit_temporal,
)
from .metrics import (
    kernel_l1,
    nmi,
    reciprocity_node,
    reciprocity_r1,
    roc_auc,
    symmetry_correlation,
    threshold_matrix,
)
from .simulate import parametric_samplers, simulate
from .synth import (
    StabilityError,
    WsbmSpec,
    generate_stable,
    generate_wsbm,
    load_matrix_csv,
    save_matrix_csv,
    spectral_radius,
)

__version__ = "0.1.0"
