"""Introduction date and location inference with ecological diffusion."""

from ._invasion import (  # noqa: F401
    AlignmentError,
    ConfigurationError,
    CoverageError,
    DomainError,
    Error,
    Extent,
    GridSpec,
    NumericalBlowup,
    ParseError,
    fit,
    fit_logistic,
    format_month,
    homogenize,
    hpd_region,
    infection_probability,
    integrate,
    misclassification_rate,
    normal_cdf,
    parse_month,
    simulate,
    solve,
    update_beta,
    validate_config,
)

__version__ = "0.1.0"
