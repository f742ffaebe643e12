"""Functional regression toolkit: FPCA, function-on-scalar and two-step
estimators, and bootstrap simultaneous bands."""

from ._funreg import (
    Band,
    Basis,
    Error,
    FosrFit,
    FpcaResult,
    InputError,
    NumericalError,
    Sample,
    TwoStepFit,
    bootstrap_fosr,
    cma_band,
    difference_penalty,
    fit_fosr,
    fit_fpca,
    fit_twostep,
    holm_adjust,
    impute_curves,
    preprocess,
    simulate,
)

__all__ = [
    "Band",
    "Basis",
    "Error",
    "FosrFit",
    "FpcaResult",
    "InputError",
    "NumericalError",
    "Sample",
    "TwoStepFit",
    "bootstrap_fosr",
    "cma_band",
    "difference_penalty",
    "fit_fosr",
    "fit_fpca",
    "fit_twostep",
    "holm_adjust",
    "impute_curves",
    "preprocess",
    "simulate",
]
