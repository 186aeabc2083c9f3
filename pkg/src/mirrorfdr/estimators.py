"""Coefficient and variance estimation for GLMs.

* ``fit_mle``: Newton / IRLS with step halving.
* ``node_wise_ols_tau``: conditional variances from node-wise OLS.
* ``fit_lasso``: coordinate descent (gaussian) or proximal Newton (other
  families); every returned fit carries its KKT violation.
* ``node_wise_precision``: node-wise Lasso decorrelating matrix.
* ``debias_linear`` / ``debias_glm``: one-step corrected Lasso estimates
  and their per-coordinate standard deviations.

The GLM Lasso objective is ``(1/2n) sum_i l(y_i, x_i'b) + lam ||b||_1``;
the gaussian objective is the usual ``(1/2n)||y - Xb||^2 + lam ||b||_1``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _cd
from .core import (
    WEIGHT_FLOOR,
    ConvergenceError,
    Dataset,
    GlmFamily,
    MleNonexistentError,
    RankDeficientError,
    SingularHessianError,
    TauNonpositiveError,
)

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e6
COND_LIMIT = 1e12
RIDGE = 1e-8
MAX_HALVINGS = 30
KKT_TOL = 1e-6
CD_TOL = 1e-9
CV_GRID_SIZE = 50
CV_GRID_RATIO = 1e-3


# --------------------------------------------------------------------------
# Maximum likelihood
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MleFit:
    beta_hat: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    intercept: float | None = None
    losses: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()


def _mean_loss(family, y, v):
    with np.errstate(over="ignore", invalid="ignore"):
        val = float(np.mean(family.loss(y, v)))
    return val if np.isfinite(val) else math.inf


def fit_mle(data: Dataset, max_iter: int = 100, tol: float = 1e-8, intercept: bool = False) -> MleFit:
    """Maximum likelihood fit by damped Newton iterations.

    Minimizes ``(1/n) sum_i l(y_i, x_i'b)``. Converged means the sup-norm
    of the gradient is at most ``tol`` and the last Newton step no longer
    moves the linear predictor. Raises ``MleNonexistentError`` when the
    iterates diverge, which is how separation shows up.
    """
    fam = data.family
    X = data.X
    if intercept:
        X = np.column_stack([np.ones(data.n), X])
    n, p = X.shape
    y = data.y
    if n < p or np.linalg.matrix_rank(X) < p:
        raise SingularHessianError(f"design of shape {X.shape} does not have full column rank")

    beta = np.zeros(p)
    v = X @ beta
    f = _mean_loss(fam, y, v)
    losses = [f]
    notes: list[str] = []
    grad_norm = math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            d1 = fam.dot(y, v)
            d2 = np.maximum(fam.ddot(y, v), WEIGHT_FLOOR)
        if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
            raise MleNonexistentError("non-finite derivatives during Newton iterations")
        grad = X.T @ d1 / n
        grad_norm = float(np.max(np.abs(grad)))
        H = (X * d2[:, None]).T @ X / n
        step = _newton_step(H, grad, notes)
        if grad_norm <= tol and np.max(np.abs(X @ step)) <= 1e-4:
            converged = True
            break
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            cand = beta - t * step
            v_cand = X @ cand
            f_cand = _mean_loss(fam, y, v_cand)
            if f_cand <= f:
                accepted = True
                break
            # at the optimum the loss is flat to rounding; accept tiny rises
            if f_cand - f <= 1e-14 * max(1.0, abs(f)) and grad_norm < 1e-6:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if grad_norm <= tol:
                converged = True
                break
            raise ConvergenceError(f"step halving failed at iteration {it} (grad {grad_norm:.3g})")
        beta, v, f = cand, v_cand, f_cand
        losses.append(f)
        if np.linalg.norm(beta) > DIVERGENCE_BOUND:
            raise MleNonexistentError("coefficient norm diverged; the MLE does not exist")

    if not converged:
        raise MleNonexistentError(
            f"no gradient convergence after {max_iter} iterations (grad {grad_norm:.3g}); "
            "the MLE likely does not exist"
        )
    if not fam.is_gaussian and np.any(fam.ddot(y, v) < WEIGHT_FLOOR):
        raise MleNonexistentError("fitted values at the boundary of the mean space")

    icpt = None
    if intercept:
        icpt, beta = float(beta[0]), beta[1:]
    return MleFit(beta, it, grad_norm, converged, icpt, tuple(losses), tuple(notes))


def _newton_step(H, grad, notes):
    try:
        cond = np.linalg.cond(H)
    except np.linalg.LinAlgError:
        cond = math.inf
    if not cond < COND_LIMIT:
        H = H + RIDGE * np.eye(H.shape[0])
        if "ridge" not in notes:
            notes.append("ridge")
            log.warning("weighted Gram condition number %.3g; adding %.0e ridge", cond, RIDGE)
    try:
        c, low = linalg.cho_factor(H, check_finite=False)
        return linalg.cho_solve((c, low), grad, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularHessianError("weighted Gram matrix is singular") from exc


def node_wise_ols_tau(X: np.ndarray, denominator: float) -> np.ndarray:
    """``RSS_j / denominator`` for the OLS regression of ``X_j`` on ``X_{-j}``.

    Uses ``RSS_j = 1 / [(X'X)^{-1}]_{jj}`` computed from a QR factor.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if not denominator > 0:
        raise ValueError(f"denominator must be positive, got {denominator}")
    if n < p:
        raise RankDeficientError(f"{n} rows cannot support OLS on {p - 1} predictors")
    R = linalg.qr(X, mode="r", check_finite=False)[0][:p]
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise RankDeficientError("design is rank deficient; node-wise OLS is not identified")
    Rinv = linalg.solve_triangular(R, np.eye(p), check_finite=False)
    rss = 1.0 / np.sum(Rinv * Rinv, axis=1)
    return rss / denominator


def sample_inverse_tau(X: np.ndarray) -> np.ndarray:
    """``1 / [(X'X/n)^{-1}]_{jj}``, the sample-covariance-inverse alternative."""
    n = X.shape[0]
    return node_wise_ols_tau(X, n)


# --------------------------------------------------------------------------
# Lasso
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LassoFit:
    beta_hat: np.ndarray
    lam: float
    kkt_violation: float
    active_set: np.ndarray
    converged: bool = True
    iterations: int = 0


def objective_scale(family: GlmFamily) -> float:
    """Weight on the mean loss in the Lasso objective (gaussian: 1, else 1/2)."""
    return 1.0 if family.is_gaussian else 0.5


def lasso_gradient(data: Dataset, beta: np.ndarray) -> np.ndarray:
    s = objective_scale(data.family)
    v = data.X @ beta
    return s * data.X.T @ data.family.dot(data.y, v) / data.n


def lasso_kkt(data: Dataset, beta: np.ndarray, lam: float) -> float:
    """Largest distance between minus the gradient and ``lam`` times the
    subdifferential of ``|b_j|``, evaluated directly on the data."""
    g = lasso_gradient(data, beta)
    nz = beta != 0
    viol = np.where(nz, np.abs(g + lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(np.max(viol)) if viol.size else 0.0


def lasso_objective(data: Dataset, beta: np.ndarray, lam: float) -> float:
    s = objective_scale(data.family)
    v = data.X @ beta
    return s * _mean_loss(data.family, data.y, v) + lam * float(np.abs(beta).sum())


def lambda_max(data: Dataset) -> float:
    """Smallest penalty at which the zero vector solves the Lasso."""
    return float(np.max(np.abs(lasso_gradient(data, np.zeros(data.p)))))


def fit_lasso(
    data: Dataset,
    lam: float,
    beta0: np.ndarray | None = None,
    tol: float = KKT_TOL,
    max_outer: int = 100,
    max_sweeps: int = 100_000,
) -> LassoFit:
    """Solve the (GLM) Lasso at penalty ``lam``.

    Non-convergence is reported through ``converged=False`` and a warning,
    never raised.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    beta = np.zeros(data.p) if beta0 is None else np.array(beta0, dtype=float)
    if data.family.is_gaussian:
        G = data.X.T @ data.X / data.n
        c = data.X.T @ data.y / data.n
        beta, ok, iters = _gram_lasso(data, G, c, lam, beta, tol, max_sweeps)
    else:
        beta, ok, iters = _prox_newton(data, lam, beta, tol, max_outer, max_sweeps)
    kkt = lasso_kkt(data, beta, lam)
    if kkt > tol:
        ok = False
        warnings.warn(f"Lasso did not reach KKT tolerance ({kkt:.3g} > {tol:g})", RuntimeWarning)
    return LassoFit(beta, float(lam), kkt, np.flatnonzero(beta), ok, iters)


def _gram_lasso(data, G, c, lam, beta, tol, max_sweeps, refine=4):
    p = G.shape[0]
    lamv = np.full(p, float(lam))
    free = np.ones(p, dtype=np.bool_)
    cd_tol = CD_TOL
    total = 0
    for _ in range(refine):
        beta, sweeps, _ok = _cd.cd_gram(G, c, lamv, beta, free, cd_tol, max_sweeps)
        total += sweeps
        if data is None or lasso_kkt(data, beta, lam) <= tol:
            return beta, True, total
        cd_tol *= 1e-2
    return beta, False, total


def _prox_newton(data, lam, beta, tol, max_outer, max_sweeps, inner_tol=1e-10):
    fam, X, y, n = data.family, data.X, data.y, data.n
    s = objective_scale(fam)
    XT = np.ascontiguousarray(X.T)
    v = X @ beta
    F = s * _mean_loss(fam, y, v) + lam * np.abs(beta).sum()
    for outer in range(1, max_outer + 1):
        d1 = fam.dot(y, v)
        d2 = np.maximum(fam.ddot(y, v), WEIGHT_FLOOR)
        g = s * X.T @ d1 / n
        nz = beta != 0
        kkt = np.max(np.where(nz, np.abs(g + lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0)))
        if kkt <= tol:
            return beta, True, outer - 1
        w = s * d2
        z = v - d1 / d2
        new, _, _ = _cd.cd_weighted(XT, w, z, float(lam), beta.copy(), inner_tol, max_sweeps)
        direction = new - beta
        delta = float(g @ direction) + lam * (np.abs(new).sum() - np.abs(beta).sum())
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = beta + t * direction
            v_cand = X @ cand
            F_cand = s * _mean_loss(fam, y, v_cand) + lam * np.abs(cand).sum()
            if F_cand <= F + 1e-4 * t * delta or F_cand <= F:
                break
            t *= 0.5
        else:
            return beta, False, outer
        if np.max(np.abs(cand - beta)) == 0.0:
            return beta, False, outer
        beta, v, F = cand, v_cand, F_cand
    return beta, False, max_outer


# --------------------------------------------------------------------------
# Penalty selection
# --------------------------------------------------------------------------


def parse_lambda_rule(rule) -> tuple[str, float]:
    """Normalize ``"cv"``, ``"cv:5"``, ``"theory"``, ``"theory:2"`` or a
    positive number into ``(kind, value)``."""
    if isinstance(rule, (int, float)) and not isinstance(rule, bool):
        if not rule > 0:
            raise ValueError("a fixed lambda must be positive")
        return "fixed", float(rule)
    if isinstance(rule, tuple) and len(rule) == 2:
        kind, val = rule
        return parse_lambda_rule(f"{kind}:{val}")
    text = str(rule).strip().lower()
    kind, _, arg = text.partition(":")
    if kind == "cv":
        k = int(arg) if arg else 10
        if k < 2:
            raise ValueError("cv needs at least 2 folds")
        return "cv", float(k)
    if kind == "theory":
        c = float(arg) if arg else 1.0
        if not c > 0:
            raise ValueError("theory constant must be positive")
        return "theory", c
    if kind == "fixed" and arg:
        return parse_lambda_rule(float(arg))
    try:
        return parse_lambda_rule(float(text))
    except ValueError:
        raise ValueError(f"unrecognized lambda rule {rule!r}") from None


def theory_lambda(n: int, p: int, c: float = 1.0) -> float:
    return c * math.sqrt(math.log(p) / n)


def lambda_grid(lmax: float, size: int = CV_GRID_SIZE, ratio: float = CV_GRID_RATIO) -> np.ndarray:
    return lmax * np.logspace(0.0, math.log10(ratio), size)


def select_lambda(data: Dataset, rule="cv:10", rng=None) -> float:
    kind, val = parse_lambda_rule(rule)
    if kind == "fixed":
        return val
    if kind == "theory":
        return theory_lambda(data.n, data.p, val)
    lams, cv_loss = cv_lasso(data, int(val), rng)
    return float(lams[int(np.argmin(cv_loss))])


def _make_folds(data, k, rng):
    n = data.n
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} rows")
    for _ in range(10):
        perm = rng.permutation(n)
        folds = np.array_split(perm, k)
        if data.family.kind != "logistic":
            return folds
        ok = True
        for f in folds:
            train = np.setdiff1d(perm, f)
            if np.unique(data.y[train]).size < 2:
                ok = False
                break
        if ok:
            return folds
    raise ValueError("could not form cross-validation folds with both classes in every training set")


def cv_lasso(data: Dataset, k: int = 10, rng=None, grid: np.ndarray | None = None):
    """K-fold cross-validated mean deviance along a decreasing lambda grid."""
    rng = np.random.default_rng(rng)
    lams = lambda_grid(lambda_max(data)) if grid is None else np.asarray(grid)
    folds = _make_folds(data, k, rng)
    total = np.zeros(lams.size)
    fam = data.family
    for f in folds:
        train = np.ones(data.n, dtype=bool)
        train[f] = False
        tr, te = data.subset(train), data.subset(~train)
        betas = lasso_path(tr, lams)
        v = te.X @ betas.T
        dev = 2.0 * (fam.loss(te.y[:, None], v) - fam.saturated_loss(te.y)[:, None])
        with np.errstate(invalid="ignore"):
            total += np.where(np.isfinite(dev), dev, np.inf).sum(axis=0)
    return lams, total / data.n


def lasso_path(data: Dataset, lams: np.ndarray, tol: float = 1e-5) -> np.ndarray:
    """Warm-started solutions along ``lams`` (decreasing). Rows of the result
    are coefficient vectors. Once the fit explains 99.9% of the null
    deviance the remaining solutions are copied forward."""
    p = data.p
    out = np.zeros((len(lams), p))
    beta = np.zeros(p)
    fam = data.family
    null_dev = float(np.sum(fam.loss(data.y, 0.0) - fam.saturated_loss(data.y)))
    if fam.is_gaussian:
        G = data.X.T @ data.X / data.n
        c = data.X.T @ data.y / data.n
    for i, lam in enumerate(lams):
        if fam.is_gaussian:
            beta, _, _ = _gram_lasso(None, G, c, lam, beta, tol, 20_000, refine=1)
        else:
            beta, _, _ = _prox_newton(data, lam, beta, tol, 50, 20_000)
        out[i] = beta
        dev = float(np.sum(fam.loss(data.y, data.X @ beta) - fam.saturated_loss(data.y)))
        if null_dev > 0 and dev < 1e-3 * null_dev:
            out[i + 1 :] = beta
            break
    return out


# --------------------------------------------------------------------------
# Node-wise precision and debiasing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PrecisionEstimate:
    """Decorrelating matrix ``theta_hat = diag(1/tau_sq) @ C`` where ``C`` has
    unit diagonal and ``C[j, k] = -gamma[j, k]``."""

    theta_hat: np.ndarray
    tau_sq: np.ndarray
    gammas: np.ndarray  # p x p, row j holds gamma_j with a zero at j
    lambdas: np.ndarray

    def gamma(self, j: int) -> np.ndarray:
        return np.delete(self.gammas[j], j)

    def c_matrix(self) -> np.ndarray:
        C = -self.gammas.copy()
        np.fill_diagonal(C, 1.0)
        return C


def _node_lambdas(Xw, lambdas, rng):
    n, p = Xw.shape
    if np.ndim(lambdas) == 1 and not isinstance(lambdas, str):
        lam = np.asarray(lambdas, dtype=float)
        if lam.shape != (p,) or np.any(lam <= 0):
            raise ValueError("per-node lambdas must be a positive vector of length p")
        return lam
    kind, val = parse_lambda_rule(lambdas)
    if kind == "fixed":
        return np.full(p, val)
    if kind == "theory":
        return np.full(p, theory_lambda(n, max(p, 2), val))
    rng = np.random.default_rng(rng)
    lam = np.empty(p)
    for j in range(p):
        node = Dataset(np.delete(Xw, j, axis=1), Xw[:, j])
        lam[j] = select_lambda(node, ("cv", int(val)), rng)
    return lam


def node_wise_precision(
    Xw: np.ndarray,
    lambdas="theory:1",
    X_cross: np.ndarray | None = None,
    rng=None,
    tol: float = CD_TOL,
) -> PrecisionEstimate:
    """Node-wise Lasso construction of an approximate inverse of ``Xw'Xw/n``.

    ``Xw`` is the raw design for linear models or the weighted design
    ``diag(sqrt(l''))X`` for GLMs. ``tau_j^2 = (Xw_j - Xw_{-j} gamma_j)' K_j / n``
    with ``K = Xw`` unless ``X_cross`` is given.
    """
    Xw = np.asarray(Xw, dtype=float)
    n, p = Xw.shape
    G = Xw.T @ Xw / n
    if p == 1:
        lam = np.zeros(1)
        gammas = np.zeros((1, 1))
    else:
        lam = _node_lambdas(Xw, lambdas, rng)
        gammas, _, conv = _cd.nodewise_gram(G, lam, tol, 100_000)
        if not np.all(conv):
            warnings.warn(f"{int((~conv).sum())} node-wise regressions hit the sweep limit", RuntimeWarning)
    if X_cross is None:
        tau_sq = np.diag(G) - np.sum(gammas * G, axis=1)
    else:
        resid = Xw - Xw @ gammas.T
        tau_sq = np.sum(resid * np.asarray(X_cross, dtype=float), axis=0) / n
    bad = np.flatnonzero(~(tau_sq > 0))
    if bad.size:
        raise TauNonpositiveError(int(bad[0]), float(tau_sq[bad[0]]))
    C = -gammas
    np.fill_diagonal(C, 1.0)
    theta = C * (1.0 / tau_sq)[:, None]
    return PrecisionEstimate(theta, tau_sq, gammas, lam)


def precision_sample_inverse(Xw: np.ndarray) -> PrecisionEstimate:
    """Exact inverse of ``Xw'Xw/n`` packaged as a ``PrecisionEstimate``."""
    n, p = Xw.shape
    G = Xw.T @ Xw / n
    try:
        theta = linalg.inv(G)
    except linalg.LinAlgError as exc:
        raise SingularHessianError("sample Hessian is singular") from exc
    tau_sq = 1.0 / np.diag(theta)
    gammas = -theta * tau_sq[:, None]
    np.fill_diagonal(gammas, 0.0)
    return PrecisionEstimate(theta, tau_sq, gammas, np.zeros(p))


def weighted_design(data: Dataset, beta: np.ndarray) -> np.ndarray:
    """``W X`` with ``W_ii^2 = l''(y_i, x_i'beta)``."""
    v = data.X @ beta
    w = np.sqrt(data.family.ddot(data.y, v))
    return data.X * w[:, None]


@dataclass(frozen=True)
class DebiasedFit:
    beta_d: np.ndarray
    sigma_hat: np.ndarray
    lasso: LassoFit | None = None
    precision: PrecisionEstimate | None = None

    @property
    def t_stat(self) -> np.ndarray:
        return self.beta_d / self.sigma_hat


def _check_sigma(sig2):
    bad = np.flatnonzero(~(sig2 > 0))
    if bad.size:
        raise SingularHessianError(f"nonpositive debiased variance at feature {int(bad[0])}")
    return np.sqrt(sig2)


def debias_linear(X, y, lasso: LassoFit, prec: PrecisionEstimate) -> DebiasedFit:
    """``b + Theta X'(y - Xb)/n`` with ``sigma_j^2 = (Theta S Theta')_jj``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    b = lasso.beta_hat
    theta = prec.theta_hat
    beta_d = b + theta @ (X.T @ (y - X @ b)) / n
    A = theta @ X.T
    sig2 = np.sum(A * A, axis=1) / n
    return DebiasedFit(beta_d, _check_sigma(sig2), lasso, prec)


def debias_glm(data: Dataset, lasso: LassoFit, prec: PrecisionEstimate) -> DebiasedFit:
    """``b - Theta (1/n) sum_i l'(y_i, x_i'b) x_i`` with the empirical sandwich
    ``sigma_j^2 = (Theta [(1/n) sum_i l'_i^2 x_i x_i'] Theta')_jj``.

    For the gaussian family the noise level is unknown and dropped, so the
    variance falls back to ``(Theta S Theta')_jj`` as in the linear model.
    """
    X, n = data.X, data.n
    b = lasso.beta_hat
    theta = prec.theta_hat
    d1 = data.family.dot(data.y, X @ b)
    beta_d = b - theta @ (X.T @ d1) / n
    A = theta @ X.T
    if data.family.is_gaussian:
        sig2 = np.sum(A * A, axis=1) / n
    else:
        A = A * d1[None, :]
        sig2 = np.sum(A * A, axis=1) / n
    return DebiasedFit(beta_d, _check_sigma(sig2), lasso, prec)
