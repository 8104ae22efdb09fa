"""pivuq: uncertainty quantification for correlation-based particle image
velocimetry.

Three uncertainty estimators over a windowed cross-correlation flow
estimator: a trainable uncertainty network (unn), a multi-model ensemble
(uqensemble.mm_estimate) and a multi-transform ensemble
(uqensemble.mt_estimate), evaluated with coverage, Spearman rank
correlation, and sparsification AUC (metrics).
"""

from .flowdata import (
    ErrorField,
    FlowField,
    ImagePair,
    UncertaintyField,
    error_field,
    read_flo,
    read_pgm,
    read_unc,
    write_flo,
    write_pgm,
    write_unc,
)
from .pivcc import CorrelationMap, EstimatorConfig, estimate, subpixel_peak
from .synthgen import (
    AnalyticFlow,
    DegradationSpec,
    SceneSpec,
    add_blur,
    add_noise,
    generate_pair,
    sample_flow,
)
from .uqensemble import (
    DEFAULT_MM_CONFIGS,
    RIGHT_ANGLES,
    EnsembleResult,
    mm_estimate,
    mt_estimate,
    rotate_flow,
    rotate_flow_back,
    rotate_pair,
)
from .metrics import (
    MetricsReport,
    SparsificationCurve,
    auc,
    coverage,
    evaluate_fields,
    sparsification,
    spearman_cc,
)
from .unn import TrainConfig, UnnModel, forward, init_model, nll_loss, train

__version__ = "0.1.0"

__all__ = [
    "AnalyticFlow",
    "CorrelationMap",
    "DEFAULT_MM_CONFIGS",
    "DegradationSpec",
    "EnsembleResult",
    "ErrorField",
    "EstimatorConfig",
    "FlowField",
    "ImagePair",
    "MetricsReport",
    "RIGHT_ANGLES",
    "SceneSpec",
    "SparsificationCurve",
    "TrainConfig",
    "UncertaintyField",
    "UnnModel",
    "add_blur",
    "add_noise",
    "auc",
    "coverage",
    "error_field",
    "estimate",
    "evaluate_fields",
    "forward",
    "generate_pair",
    "init_model",
    "mm_estimate",
    "mt_estimate",
    "nll_loss",
    "read_flo",
    "read_pgm",
    "read_unc",
    "rotate_flow",
    "rotate_flow_back",
    "rotate_pair",
    "sample_flow",
    "sparsification",
    "spearman_cc",
    "subpixel_peak",
    "train",
    "write_flo",
    "write_pgm",
    "write_unc",
]
