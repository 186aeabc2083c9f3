"""FDR-controlled feature selection in GLMs via mirror statistics."""

from .baselines import benjamini_hochberg, debiased_lasso_pvalues, wald_pvalues_mle
from .core import (
    Dataset,
    DomainError,
    GlmFamily,
    InsufficientSamplesError,
    MirrorConfig,
    MirrorFdrError,
    MirrorResult,
    MleNonexistentError,
    fdp_power,
)
from .datagen import CovarianceSpec, SignalSpec
from .mirror import (
    HighDimRules,
    ds_high_glm,
    ds_high_linear,
    ds_moderate,
    fdp_cutoff,
    gm_moderate,
    mds,
    mirror_statistics,
    select,
)

__version__ = "0.1.0"

__all__ = [
    "CovarianceSpec",
    "Dataset",
    "DomainError",
    "GlmFamily",
    "HighDimRules",
    "InsufficientSamplesError",
    "MirrorConfig",
    "MirrorFdrError",
    "MirrorResult",
    "MleNonexistentError",
    "SignalSpec",
    "benjamini_hochberg",
    "debiased_lasso_pvalues",
    "ds_high_glm",
    "ds_high_linear",
    "ds_moderate",
    "fdp_cutoff",
    "fdp_power",
    "gm_moderate",
    "mds",
    "mirror_statistics",
    "select",
    "wald_pvalues_mle",
]
