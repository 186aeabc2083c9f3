"""Synthetic designs, coefficient vectors and responses for the simulations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GlmFamily

COVARIANCE_KINDS = (
    "identity",
    "toeplitz",
    "constant",
    "blockwise_toeplitz",
    "constant_partial",
    "toeplitz_partial",
)

# linear predictor clamp for count responses
ETA_CLAMP = 30.0


@dataclass(frozen=True)
class CovarianceSpec:
    kind: str = "identity"
    r: float = 0.0
    blocks: int = 10
    scale: float = 1.0  # global multiplier applied after construction

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if not 0.0 <= self.r < 1.0:
            raise ValueError("r must lie in [0, 1)")
        if self.blocks < 1:
            raise ValueError("blocks must be positive")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class SignalSpec:
    """Relevant-feature count and how their coefficients are drawn.

    ``mode="fixed"``: ``|beta_j| = magnitude`` with random signs.
    ``mode="gaussian"``: ``beta_j ~ N(0, magnitude**2)``.
    """

    p1: int
    magnitude: float
    mode: str = "fixed"

    def __post_init__(self):
        if self.mode not in ("fixed", "gaussian"):
            raise ValueError("signal mode must be 'fixed' or 'gaussian'")
        if self.p1 < 0:
            raise ValueError("p1 must be nonnegative")


def _toeplitz_power(r: float, p: int) -> np.ndarray:
    lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    # 0**0 == 1 keeps the diagonal at one when r == 0
    return np.power(float(r), lag)


def _constant(r: float, p: int) -> np.ndarray:
    S = np.full((p, p), float(r))
    np.fill_diagonal(S, 1.0)
    return S


def _blockwise_toeplitz(r: float, p: int, blocks: int) -> np.ndarray:
    if p % blocks:
        raise ValueError(f"p={p} is not divisible by blocks={blocks}")
    size = p // blocks
    if size == 1:
        return np.eye(p)
    lag = np.abs(np.subtract.outer(np.arange(size), np.arange(size)))
    block = (size - 1 - lag) * r / (size - 1)
    np.fill_diagonal(block, 1.0)
    S = np.zeros((p, p))
    for b in range(blocks):
        sl = slice(b * size, (b + 1) * size)
        S[sl, sl] = block
    return S


def _from_precision(omega: np.ndarray) -> np.ndarray:
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise ValueError("specified precision matrix is not positive definite") from exc
    S = np.linalg.inv(omega)
    S = 0.5 * (S + S.T)
    d = 1.0 / np.sqrt(np.diag(S))
    # rescale to unit diagonal; partial correlations are unchanged
    return S * np.outer(d, d)


def make_covariance(spec: CovarianceSpec, p: int) -> np.ndarray:
    """Build the p x p covariance matrix described by ``spec``."""
    if p < 1:
        raise ValueError("p must be positive")
    kind, r = spec.kind, spec.r
    if kind == "identity":
        S = np.eye(p)
    elif kind == "toeplitz":
        S = _toeplitz_power(r, p)
    elif kind == "constant":
        S = _constant(r, p)
    elif kind == "blockwise_toeplitz":
        S = _blockwise_toeplitz(r, p, spec.blocks)
    elif kind == "constant_partial":
        S = _from_precision(_constant(r, p))
    else:
        S = _from_precision(_toeplitz_power(r, p))
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{kind} covariance with r={r} is not positive definite") from exc
    return S * spec.scale if spec.scale != 1.0 else S


def sample_design(n: int, p: int, sigma: np.ndarray, scale: str, rng) -> np.ndarray:
    """Draw ``n`` rows from ``N(0, sigma)``.

    ``scale="inv_n"`` centres each column and rescales it to sample
    variance exactly ``1/n``; ``scale="unit"`` keeps the population scaling.
    """
    if scale not in ("unit", "inv_n"):
        raise ValueError("scale must be 'unit' or 'inv_n'")
    L = np.linalg.cholesky(sigma)
    X = rng.standard_normal((n, p)) @ L.T
    if scale == "inv_n":
        if n < 2:
            raise ValueError("inv_n scaling needs n >= 2")
        X -= X.mean(axis=0)
        X /= X.std(axis=0, ddof=1) * np.sqrt(n)
    return X


def sample_coefficients(p: int, signal: SignalSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(beta, s1)`` with ``s1`` the sorted 0-based support."""
    if signal.p1 > p:
        raise ValueError("p1 cannot exceed p")
    s1 = np.sort(rng.choice(p, size=signal.p1, replace=False))
    beta = np.zeros(p)
    if signal.mode == "fixed":
        signs = rng.choice(np.array([-1.0, 1.0]), size=signal.p1)
        beta[s1] = signs * signal.magnitude
    else:
        beta[s1] = rng.normal(0.0, signal.magnitude, size=signal.p1)
    return beta, s1


def sample_response(X: np.ndarray, beta: np.ndarray, family: GlmFamily, rng) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if X.shape[1] != beta.shape[0]:
        raise ValueError("X and beta have inconsistent shapes")
    eta = X @ beta
    n = X.shape[0]
    if family.kind == "gaussian":
        return eta + rng.standard_normal(n)
    if family.kind == "logistic":
        return (rng.random(n) < family.mean(eta)).astype(float)
    mu = np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))
    if family.kind == "poisson":
        return rng.poisson(mu).astype(float)
    r = family.dispersion
    return rng.negative_binomial(r, r / (r + mu)).astype(float)
