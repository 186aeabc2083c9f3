"""Mirror statistics, the data-driven cutoff, and the selectors built on them.

Every selector produces two (asymptotically) independent normalized
estimates ``t1`` and ``t2`` per feature, combines them into mirror
statistics and thresholds those at the smallest cutoff whose estimated
FDP is at most ``q``.

Selectors:

* ``ds_moderate``: data splitting with MLE fits (n/2 > p).
* ``gm_moderate``: Gaussian mirror, one augmented MLE fit per feature.
* ``ds_high_linear`` / ``ds_high_glm``: data splitting with debiased Lasso.
* ``mds``: multiple data splitting over any ``ds_*`` selector.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import estimators as est
from ._parallel import fan_out
from .core import (
    Dataset,
    InsufficientSamplesError,
    MirrorConfig,
    MirrorFdrError,
    MirrorResult,
)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Statistics and cutoff
# --------------------------------------------------------------------------


def contrast(u, v, f_choice: str = "product"):
    """The symmetric, monotone combining function ``f(u, v)`` for ``u, v >= 0``."""
    if f_choice == "product":
        return u * v
    if f_choice == "min2":
        return 2.0 * np.minimum(u, v)
    if f_choice == "sum":
        return u + v
    raise ValueError(f"unknown f_choice {f_choice!r}")


def mirror_statistics(t1, t2, f_choice: str = "product") -> np.ndarray:
    """``M_j = sign(t1_j t2_j) f(|t1_j|, |t2_j|)`` with ``sign(0) = 0``."""
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    if t1.shape != t2.shape:
        raise ValueError("t1 and t2 must have equal shapes")
    return np.sign(t1) * np.sign(t2) * contrast(np.abs(t1), np.abs(t2), f_choice)


def fdp_cutoff(M, q: float) -> tuple[float | None, float | None]:
    """Smallest ``t > 0`` with ``#{M < -t} / #{M > t} <= q``.

    The estimated FDP is a step function of ``t`` that only changes at the
    values ``|M_j|``, so scanning the limit ``t -> 0+`` and every distinct
    nonzero ``|M_j|`` realizes the infimum. A zero denominator counts as an
    infinite ratio. Returns ``(cutoff, fdp_hat)``; the cutoff is ``0.0``
    when the limit ``t -> 0+`` already qualifies and ``None`` when no
    threshold does.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0,1)")
    M = np.asarray(M, dtype=float)
    pos = np.sort(M[M > 0])
    neg = np.sort(-M[M < 0])
    cand = np.concatenate([[0.0], np.unique(np.abs(M[M != 0]))])
    n_pos = pos.size - np.searchsorted(pos, cand, side="right")
    n_neg = neg.size - np.searchsorted(neg, cand, side="right")
    with np.errstate(divide="ignore"):
        ratio = np.where(n_pos > 0, n_neg / np.maximum(n_pos, 1), np.inf)
    ok = ratio <= q
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        return None, None
    k = hits[0]
    return float(cand[k]), float(ratio[k])


def select(M, q: float) -> np.ndarray:
    """Indices with ``M_j`` above the cutoff (empty when there is none)."""
    tau, _ = fdp_cutoff(M, q)
    M = np.asarray(M, dtype=float)
    if tau is None:
        return np.zeros(0, dtype=np.intp)
    return np.flatnonzero(M > tau)


def mirror_result(t1, t2, cfg: MirrorConfig, method: str, notes=()) -> MirrorResult:
    M = mirror_statistics(t1, t2, cfg.f_choice)
    tau, fdp_hat = fdp_cutoff(M, cfg.q)
    sel = np.zeros(0, dtype=np.intp) if tau is None else np.flatnonzero(M > tau)
    return MirrorResult(
        mirror=M,
        cutoff=tau,
        selected=sel,
        fdp_hat=fdp_hat,
        q=cfg.q,
        method=method,
        t1=np.asarray(t1, dtype=float),
        t2=np.asarray(t2, dtype=float),
        warnings=tuple(notes),
    )


# --------------------------------------------------------------------------
# Splitting and multiple-split aggregation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPair:
    part1: Dataset
    part2: Dataset
    assignment: np.ndarray  # True for rows in part1


def split_data(data: Dataset, rng) -> SplitPair:
    """Random split with ``ceil(n/2)`` rows in the first part."""
    n = data.n
    if n < 2:
        raise InsufficientSamplesError("need at least two rows to split")
    perm = np.random.default_rng(rng).permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[perm[: (n + 1) // 2]] = True
    mask.setflags(write=False)
    return SplitPair(data.subset(mask), data.subset(~mask), mask)


@dataclass(frozen=True)
class InclusionRates:
    rates: np.ndarray
    m: int
    per_split: tuple[np.ndarray, ...]
    dropped: int = 0


def inclusion_rates(per_split, p: int) -> InclusionRates:
    """``I_j = (1/m) sum_k 1(j in S_k) / max(|S_k|, 1)``."""
    per_split = tuple(np.asarray(s, dtype=np.intp) for s in per_split)
    m = len(per_split)
    if m == 0:
        raise ValueError("need at least one split")
    rates = np.zeros(p)
    for s in per_split:
        if s.size:
            rates[s] += 1.0 / s.size
    return InclusionRates(rates / m, m, per_split)


def mds_aggregate(rates, q: float) -> tuple[np.ndarray, float | None, float | None]:
    """Select ``{j : I_j > I_(l)}`` for the largest ``l`` whose ``l``
    smallest rates sum to at most ``q``.

    Returns ``(selected, threshold, cumulative_sum)``. If even the smallest
    rate exceeds ``q`` nothing is selected and the threshold is ``None``.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0,1)")
    rates = np.asarray(rates, dtype=float)
    srt = np.sort(rates)
    csum = np.cumsum(srt)
    ok = np.flatnonzero(csum <= q)
    if ok.size == 0:
        return np.zeros(0, dtype=np.intp), None, None
    ell = ok[-1]
    thr = srt[ell]
    return np.flatnonzero(rates > thr), float(thr), float(csum[ell])


# --------------------------------------------------------------------------
# Moderate dimension
# --------------------------------------------------------------------------


def _rng(cfg: MirrorConfig, rng):
    return np.random.default_rng(cfg.seed if rng is None else rng)


def _mle_stat(part: Dataset, intercept: bool = False) -> np.ndarray:
    tau_sq = est.node_wise_ols_tau(part.X, part.n - part.p + 1)
    fit = est.fit_mle(part, intercept=intercept)
    return np.sqrt(tau_sq) * fit.beta_hat


def ds_moderate(data: Dataset, cfg: MirrorConfig = MirrorConfig(), rng=None, intercept: bool = False) -> MirrorResult:
    """Data splitting with the MLE normalized by the node-wise OLS residual scale."""
    if data.n // 2 <= data.p:
        raise InsufficientSamplesError(
            f"each half needs more than p={data.p} rows; n={data.n} gives {data.n // 2}"
        )
    sp = split_data(data, _rng(cfg, rng))
    t1 = _mle_stat(sp.part1, intercept)
    t2 = _mle_stat(sp.part2, intercept)
    return mirror_result(t1, t2, cfg, "ds_moderate")


@dataclass(frozen=True)
class GaussianMirrorAugment:
    j: int
    z: np.ndarray
    c: float
    xp: np.ndarray
    xm: np.ndarray


def _residualizer(X_rest: np.ndarray):
    if X_rest.shape[1] == 0:
        return lambda v: v
    Q = linalg.qr(X_rest, mode="economic", check_finite=False)[0]
    return lambda v: v - Q @ (Q.T @ v)


def gaussian_mirror_augment(X: np.ndarray, j: int, z: np.ndarray) -> GaussianMirrorAugment:
    """Mirror pair ``X_j +/- c Z`` with ``c = |P X_j| / |P Z|`` and ``P`` the
    projection onto the orthocomplement of the other columns."""
    resid = _residualizer(np.delete(X, j, axis=1))
    xj = X[:, j]
    c = float(np.linalg.norm(resid(xj)) / np.linalg.norm(resid(z)))
    return GaussianMirrorAugment(j, z, c, xj + c * z, xj - c * z)


def _gm_feature(args):
    data, j, z, tau_sq_j, intercept = args
    aug = gaussian_mirror_augment(data.X, j, z)
    Xa = np.column_stack([np.delete(data.X, j, axis=1), aug.xp, aug.xm])
    fit = est.fit_mle(Dataset(Xa, data.y, data.family), intercept=intercept)
    scale = np.sqrt(tau_sq_j + aug.c**2)
    return scale * fit.beta_hat[-2], scale * fit.beta_hat[-1]


def _gm_feature_safe(args):
    try:
        return _gm_feature(args)
    except MirrorFdrError as exc:
        return exc


def gm_moderate(
    data: Dataset,
    cfg: MirrorConfig = MirrorConfig(),
    rng=None,
    threads: int | None = None,
    intercept: bool = False,
) -> MirrorResult:
    """Gaussian mirror: for each feature, fit the GLM with ``X_j`` replaced by
    its perturbed pair and contrast the two coefficients."""
    n, p = data.n, data.p
    if n <= p + 1:
        raise InsufficientSamplesError(f"Gaussian mirror needs n > p + 1 (n={n}, p={p})")
    gen = _rng(cfg, rng)
    Z = gen.standard_normal((p, n))
    tau_sq = est.node_wise_ols_tau(data.X, n - p + 1)
    tasks = [(data, j, Z[j], tau_sq[j], intercept) for j in range(p)]
    out = fan_out(_gm_feature_safe, tasks, threads)
    t1 = np.zeros(p)
    t2 = np.zeros(p)
    notes = []
    for j, res in enumerate(out):
        if isinstance(res, Exception):
            notes.append(f"feature {j}: {res.code}: {res}")
            continue
        t1[j], t2[j] = res
    if notes:
        warnings.warn(f"Gaussian mirror fit failed for {len(notes)} feature(s); their statistics are 0", RuntimeWarning)
    return mirror_result(t1, t2, cfg, "gm_moderate", notes)


# --------------------------------------------------------------------------
# High dimension
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HighDimRules:
    """Penalty rules for the main Lasso and the node-wise regressions.

    Each is ``"cv:K"``, ``"theory:C"`` or a fixed positive float.
    ``unweighted_cross`` switches the GLM residual-variance cross product
    from the weighted column to the raw column.
    """

    lasso: object = "cv:10"
    nodewise: object = "theory:1"
    unweighted_cross: bool = False


def _debiased_linear_stat(part: Dataset, rules: HighDimRules, rng) -> np.ndarray:
    lam = est.select_lambda(part, rules.lasso, rng)
    lasso = est.fit_lasso(part, lam)
    prec = est.node_wise_precision(part.X, rules.nodewise, rng=rng)
    fit = est.debias_linear(part.X, part.y, lasso, prec)
    return fit.beta_d / fit.sigma_hat


def _debiased_glm_stat(part: Dataset, rules: HighDimRules, rng) -> np.ndarray:
    lam = est.select_lambda(part, rules.lasso, rng)
    lasso = est.fit_lasso(part, lam)
    Xw = est.weighted_design(part, lasso.beta_hat)
    cross = part.X if rules.unweighted_cross else None
    prec = est.node_wise_precision(Xw, rules.nodewise, X_cross=cross, rng=rng)
    fit = est.debias_glm(part, lasso, prec)
    return fit.beta_d / fit.sigma_hat


def ds_high_linear(data: Dataset, cfg: MirrorConfig = MirrorConfig(), rules: HighDimRules = HighDimRules(), rng=None):
    """Data splitting with the normalized debiased Lasso (linear model)."""
    if not data.family.is_gaussian:
        raise ValueError("ds_high_linear requires the gaussian family; use ds_high_glm")
    gen = _rng(cfg, rng)
    sp = split_data(data, gen)
    t1 = _debiased_linear_stat(sp.part1, rules, gen)
    t2 = _debiased_linear_stat(sp.part2, rules, gen)
    return mirror_result(t1, t2, cfg, "ds_high_linear")


def ds_high_glm(data: Dataset, cfg: MirrorConfig = MirrorConfig(), rules: HighDimRules = HighDimRules(), rng=None):
    """Data splitting with the normalized debiased GLM Lasso."""
    gen = _rng(cfg, rng)
    sp = split_data(data, gen)
    t1 = _debiased_glm_stat(sp.part1, rules, gen)
    t2 = _debiased_glm_stat(sp.part2, rules, gen)
    return mirror_result(t1, t2, cfg, "ds_high_glm")


SPLIT_SELECTORS = {
    "ds_moderate": ds_moderate,
    "ds_high_linear": ds_high_linear,
    "ds_high_glm": ds_high_glm,
}


def _mds_split(args):
    base, data, cfg, child, kwargs = args
    try:
        return SPLIT_SELECTORS[base](data, cfg, rng=np.random.default_rng(child), **kwargs).selected
    except MirrorFdrError as exc:
        return exc


def mds(
    data: Dataset,
    base: str = "ds_moderate",
    m: int = 50,
    cfg: MirrorConfig = MirrorConfig(),
    threads: int | None = None,
    freeze_lambda: bool = False,
    **kwargs,
) -> tuple[MirrorResult, InclusionRates]:
    """Multiple data splitting: run ``base`` on ``m`` independent splits and
    aggregate the selections through inclusion rates.

    A split whose fit raises a ``MirrorFdrError`` is dropped and recorded;
    if every split fails the first error is re-raised. With
    ``freeze_lambda`` the main Lasso penalty is chosen once on the full data
    instead of on every half.
    """
    if base not in SPLIT_SELECTORS:
        raise ValueError(f"unknown base selector {base!r}; expected one of {sorted(SPLIT_SELECTORS)}")
    if m < 1:
        raise ValueError("m must be at least 1")
    if base == "ds_moderate" and data.n // 2 <= data.p:
        raise InsufficientSamplesError(f"each half needs more than p={data.p} rows")
    children = np.random.SeedSequence(cfg.seed).spawn(m + 1)
    if freeze_lambda and base != "ds_moderate":
        rules = kwargs.get("rules", HighDimRules())
        lam = est.select_lambda(data, rules.lasso, np.random.default_rng(children[m]))
        kwargs["rules"] = HighDimRules(lam, rules.nodewise, rules.unweighted_cross)
    tasks = [(base, data, cfg, children[k], kwargs) for k in range(m)]
    out = fan_out(_mds_split, tasks, threads)
    kept = [s for s in out if not isinstance(s, Exception)]
    errors = [e for e in out if isinstance(e, Exception)]
    if not kept:
        raise errors[0]
    notes = tuple(f"split dropped: {e.code}: {e}" for e in errors)
    if errors:
        log.warning("mds dropped %d of %d splits", len(errors), m)
    inc = inclusion_rates(kept, data.p)
    inc = InclusionRates(inc.rates, inc.m, inc.per_split, len(errors))
    sel, thr, csum = mds_aggregate(inc.rates, cfg.q)
    res = MirrorResult(
        mirror=inc.rates,
        cutoff=thr,
        selected=sel,
        fdp_hat=csum,
        q=cfg.q,
        method=f"mds({base}, m={inc.m})",
        warnings=notes,
    )
    return res, inc


def run_selector(name: str, data: Dataset, cfg: MirrorConfig, m: int = 50, threads=None, **kwargs) -> MirrorResult:
    """Dispatch by name: any single selector, or ``mds:<base>``."""
    if name.startswith("mds:"):
        return mds(data, name[4:], m, cfg, threads=threads, **kwargs)[0]
    if name == "gm_moderate":
        return gm_moderate(data, cfg, threads=threads, **kwargs)
    if name in SPLIT_SELECTORS:
        return SPLIT_SELECTORS[name](data, cfg, **kwargs)
    raise ValueError(f"unknown selector {name!r}")
