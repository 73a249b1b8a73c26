"""Sequential Gaussian-mixture scoring of neural-network inference traces.

Fit one Gaussian mixture per hidden-layer representation space, estimate
cluster-to-cluster transitions between adjacent layers, and score an input by
the log joint probability of its whole per-layer feature trace. Inputs the
network never internalized land in low-probability traces, which makes the
score a detector for out-of-distribution data without ever seeing any.
"""

from .baselines import (
    LayerClassStats,
    MahalanobisParams,
    fit_mahalanobis,
    lsgm_maha_restricted_score,
    mahalanobis_ensemble_score,
    mahalanobis_layer_score,
    max_softmax_score,
)
from .chain import (
    LsgmModel,
    TransitionMatrix,
    brute_force_log_prob,
    estimate_transitions,
    forward_log_prob,
    score_batch,
    score_features,
    transition_statistics,
)
from .errors import (
    CorruptFileError,
    FormatError,
    InvalidArgumentError,
    LsgmError,
    NotNpyError,
    NotPositiveDefiniteError,
    TooLargeError,
    UnsupportedFormatError,
    ZeroRowError,
)
from .io_formats import (
    DatasetManifest,
    FeatureBundle,
    StoredModel,
    load_bundle,
    load_manifest,
    load_model,
    read_npy,
    save_model,
    write_npy,
)
from .linalg import (
    SpdFactor,
    cholesky,
    empirical_mean_cov,
    gaussian_log_pdf,
    log_sum_exp,
)
from .metrics import (
    MetricsReport,
    ScoredDataset,
    aupr,
    auroc,
    evaluate,
    from_split,
    tnr_at_tpr,
)
from .mixture import (
    DpConfig,
    FitDiagnostics,
    LayerMixture,
    component_log_pdfs,
    fit_dpgmm,
    fit_gmm_em,
    marginal_log_pdf,
    responsibilities,
)

__version__ = "0.1.0"
