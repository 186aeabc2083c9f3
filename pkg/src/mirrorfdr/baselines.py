"""Benjamini-Hochberg comparators on Wald and debiased-Lasso p-values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import erfc

from .core import Dataset, SingularHessianError
from . import estimators as est
from .estimators import DebiasedFit, MleFit

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PvalueReport:
    pvals: np.ndarray
    zscores: np.ndarray
    method: str = ""


def two_sided_pvalues(z) -> np.ndarray:
    """``2 (1 - Phi(|z|)) = erfc(|z| / sqrt 2)``, accurate in the far tail."""
    z = np.asarray(z, dtype=float)
    return np.clip(erfc(np.abs(z) / SQRT2), 0.0, 1.0)


def wald_pvalues_mle(data: Dataset, fit: MleFit) -> PvalueReport:
    """Classical Wald test: ``se^2 = diag((X' W X)^{-1})`` at the MLE."""
    X = data.X
    w = data.family.ddot(data.y, X @ fit.beta_hat)
    info = (X * w[:, None]).T @ X
    try:
        c = linalg.cho_factor(info, check_finite=False)
        cov_diag = np.diag(linalg.cho_solve(c, np.eye(data.p), check_finite=False))
    except linalg.LinAlgError as exc:
        raise SingularHessianError("Fisher information is singular") from exc
    if not np.all(cov_diag > 0):
        raise SingularHessianError("Fisher information is not positive definite")
    z = fit.beta_hat / np.sqrt(cov_diag)
    return PvalueReport(two_sided_pvalues(z), z, "wald_mle")


def wald_pvalues_debiased(fit: DebiasedFit, n: int, noise_sd: float = 1.0) -> PvalueReport:
    """``z_j = sqrt(n) beta_d_j / (noise_sd * sigma_j)``.

    ``noise_sd`` rescales the linear-model variance, which carries no noise
    level of its own; leave it at 1 for GLMs.
    """
    if not np.all(fit.sigma_hat > 0):
        raise ValueError("sigma_hat must be positive")
    z = math.sqrt(n) * fit.beta_d / (noise_sd * fit.sigma_hat)
    return PvalueReport(two_sided_pvalues(z), z, "wald_debiased")


def benjamini_hochberg(pvals, q: float) -> np.ndarray:
    """Step-up rule: reject the ``k*`` smallest p-values where
    ``k* = max{k : p_(k) <= k q / p}``. Returns sorted 0-based indices."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0,1)")
    p_arr = np.asarray(pvals, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)) or np.any(np.isnan(p_arr)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p_arr.size
    if m == 0:
        return np.zeros(0, dtype=np.intp)
    order = np.argsort(p_arr, kind="stable")
    srt = p_arr[order]
    ok = np.flatnonzero(srt <= q * np.arange(1, m + 1) / m)
    if ok.size == 0:
        return np.zeros(0, dtype=np.intp)
    # every p-value tied with p_(k*) is rejected alongside it
    return np.flatnonzero(p_arr <= srt[ok[-1]])


def residual_noise_sd(data: Dataset, beta: np.ndarray) -> float:
    """``sqrt(RSS / (n - |support|))`` from a sparse linear fit."""
    resid = data.y - data.X @ beta
    dof = max(data.n - int(np.count_nonzero(beta)), 1)
    return float(np.sqrt(resid @ resid / dof))


def debiased_lasso_pvalues(data: Dataset, lasso_rule="cv:10", nodewise_rule="theory:1", rng=None) -> PvalueReport:
    """Full-data debiased Lasso Wald p-values.

    The linear model estimates its noise level from the Lasso residuals;
    GLMs use the sandwich variance as is.
    """
    rng = np.random.default_rng(rng)
    lasso = est.fit_lasso(data, est.select_lambda(data, lasso_rule, rng))
    if data.family.is_gaussian:
        prec = est.node_wise_precision(data.X, nodewise_rule, rng=rng)
        fit = est.debias_linear(data.X, data.y, lasso, prec)
        noise = residual_noise_sd(data, lasso.beta_hat)
    else:
        prec = est.node_wise_precision(est.weighted_design(data, lasso.beta_hat), nodewise_rule, rng=rng)
        fit = est.debias_glm(data, lasso, prec)
        noise = 1.0
    return wald_pvalues_debiased(fit, data.n, noise)
