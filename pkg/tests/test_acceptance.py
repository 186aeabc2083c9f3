"""Exit criteria. Each test carries ``criterion(k)``; the terminal summary
prints one PASS/FAIL line per criterion."""

import math
import warnings
from functools import lru_cache

import numpy as np
import pytest
from scipy import stats

from mirrorfdr import estimators as est
from mirrorfdr import mirror as mr
from mirrorfdr.bench import Scenario, run_bench
from mirrorfdr.core import Dataset, GlmFamily, MirrorConfig, MleNonexistentError
from mirrorfdr.datagen import CovarianceSpec, SignalSpec, sample_response

pytestmark = pytest.mark.acceptance

Q = 0.1
FDR_BAR = 0.15


def _detail(record_property, **kw):
    record_property("detail", " ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in kw.items()))


# ---- moderate-dimensional logistic cell ----------------------------------------

LOGISTIC_CELL = Scenario(
    n=500,
    p=60,
    p1=30,
    family="logistic",
    scale="inv_n",
    covariance=CovarianceSpec("toeplitz", 0.2),
    signal=SignalSpec(30, 6.5),
    q=Q,
    reps=20,
    seed=2024,
)


@lru_cache(maxsize=None)
def _logistic_cell(method):
    return run_bench([Scenario(**{**LOGISTIC_CELL.__dict__, "method": method})])[0]


@pytest.mark.criterion(1)
def test_criterion_1_ds_mds_logistic(record_property):
    ds, md = _logistic_cell("DS"), _logistic_cell("MDS")
    _detail(record_property, ds_fdr=ds.fdr, mds_fdr=md.fdr, ds_power=ds.power, mds_power=md.power, skipped=ds.skipped)
    assert not ds.unreliable and not md.unreliable
    assert ds.fdr <= FDR_BAR
    assert md.fdr <= FDR_BAR
    assert md.power >= ds.power - 0.02


@pytest.mark.criterion(2)
def test_criterion_2_gaussian_mirror(record_property):
    gm = _logistic_cell("GM")
    _detail(record_property, gm_fdr=gm.fdr, gm_power=gm.power, skipped=gm.skipped)
    assert not gm.unreliable
    assert gm.fdr <= FDR_BAR


# ---- negative binomial cell -----------------------------------------------------

NB_CELL = Scenario(
    n=600,
    p=100,
    p1=20,
    family="negbin",
    dispersion=2.0,
    scale="inv_n",
    covariance=CovarianceSpec("toeplitz", 0.2),
    signal=SignalSpec(20, 6.0),
    q=Q,
    reps=20,
    seed=2022,
)


@pytest.mark.criterion(3)
def test_criterion_3_negative_binomial(record_property):
    ds, md, bh = run_bench([Scenario(**{**NB_CELL.__dict__, "method": m}) for m in ("DS", "MDS", "BHq_mle")])
    _detail(record_property, ds_fdr=ds.fdr, mds_fdr=md.fdr, bhq_fdr=bh.fdr, mds_power=md.power)
    assert not (ds.unreliable or md.unreliable or bh.unreliable)
    assert ds.fdr <= FDR_BAR
    assert md.fdr <= FDR_BAR
    assert bh.fdr > md.fdr


# ---- high-dimensional linear cell ----------------------------------------------

LINEAR_CELL = Scenario(
    n=400,
    p=800,
    p1=30,
    method="DS",
    regime="high",
    family="gaussian",
    covariance=CovarianceSpec("blockwise_toeplitz", 0.6, blocks=10),
    signal=SignalSpec(30, 6.0, "gaussian"),
    signal_units="sqrt_logp_n",
    q=Q,
    reps=20,
    seed=2023,
)


@pytest.mark.criterion(4)
def test_criterion_4_high_dim_linear(record_property):
    (res,) = run_bench([LINEAR_CELL])
    _detail(record_property, fdr=res.fdr, power=res.power, skipped=res.skipped)
    assert not res.unreliable
    assert res.fdr <= FDR_BAR
    assert res.power >= 0.5


# ---- high-dimensional logistic null symmetry -----------------------------------


def _kolmogorov_symmetry(m):
    return stats.ks_2samp(m, -m).statistic


@pytest.mark.criterion(5)
def test_criterion_5_logistic_null_symmetry(record_property, fig1_nulls):
    t, m, _ = fig1_nulls
    balance = float(np.mean(t > 0))
    ks = float(_kolmogorov_symmetry(m))
    _detail(record_property, sign_balance=balance, ks=ks, n_null_t=t.size)
    assert 0.45 <= balance <= 0.55
    assert ks <= 0.1


# ---- oracle suite ---------------------------------------------------------------


def _soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@pytest.mark.criterion(6)
def test_criterion_6_oracle_suite(record_property):
    worst = {}
    rng = np.random.default_rng(606)

    # Lasso on an orthonormal design is soft-thresholding of X'y/n
    n, p = 80, 10
    X = np.linalg.qr(rng.standard_normal((n, p)))[0] * math.sqrt(n)
    y = X @ np.linspace(-0.5, 0.5, p) + rng.standard_normal(n)
    err = max(np.max(np.abs(est.fit_lasso(Dataset(X, y), lam).beta_hat - _soft(X.T @ y / n, lam))) for lam in (0.01, 0.1, 0.3))
    worst["soft_threshold"] = err
    assert err <= 1e-8

    # KKT on every accepted fit
    kkt = 0.0
    for seed in range(12):
        kind = ("gaussian", "logistic", "poisson", "negative_binomial")[seed % 4]
        g = np.random.default_rng(seed)
        Xs = g.standard_normal((60, 40))
        beta = np.zeros(40)
        beta[:5] = 0.7
        d = Dataset(Xs, sample_response(Xs, beta, GlmFamily(kind), g), GlmFamily(kind))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = est.fit_lasso(d, (0.05 + 0.07 * seed) * est.lambda_max(d))
        if fit.converged:
            kkt = max(kkt, est.lasso_kkt(d, fit.beta_hat, fit.lam))
    worst["kkt"] = kkt
    assert kkt <= 1e-6

    # Newton/IRLS gradient at convergence
    grad = 0.0
    for seed in range(8):
        kind = ("logistic", "poisson", "negative_binomial", "gaussian")[seed % 4]
        g = np.random.default_rng(100 + seed)
        Xs = g.standard_normal((200, 6))
        d = Dataset(Xs, sample_response(Xs, np.full(6, 0.3), GlmFamily(kind), g), GlmFamily(kind))
        try:
            fit = est.fit_mle(d)
        except MleNonexistentError:
            continue
        grad = max(grad, float(np.max(np.abs(Xs.T @ d.family.dot(d.y, Xs @ fit.beta_hat) / d.n))))
    worst["irls_grad"] = grad
    assert grad <= 1e-8

    # node-wise precision at a vanishing penalty is the inverse Gram matrix
    sig = 0.5 ** np.abs(np.subtract.outer(np.arange(20), np.arange(20)))
    Xn = rng.standard_normal((200, 20)) @ np.linalg.cholesky(sig).T
    err = float(np.max(np.abs(est.node_wise_precision(Xn, 1e-10).theta_hat - np.linalg.inv(Xn.T @ Xn / 200))))
    worst["nodewise"] = err
    assert err <= 1e-4

    # debiased-linear decomposition: sqrt(n)(b_d - b*) = Z + Delta
    n, p = 30, 45
    Xd = rng.standard_normal((n, p))
    b_star = rng.standard_normal(p) * (rng.random(p) < 0.2)
    eps = rng.standard_normal(n)
    b_hat = rng.standard_normal(p) * (rng.random(p) < 0.3)
    theta = np.eye(p) + 0.05 * rng.standard_normal((p, p))
    lasso = est.LassoFit(b_hat, 0.1, 0.0, np.flatnonzero(b_hat))
    prec = est.PrecisionEstimate(theta, np.ones(p), np.zeros((p, p)), np.zeros(p))
    fit = est.debias_linear(Xd, Xd @ b_star + eps, lasso, prec)
    Z = theta @ Xd.T @ eps / math.sqrt(n)
    delta = math.sqrt(n) * (theta @ (Xd.T @ Xd / n) - np.eye(p)) @ (b_star - b_hat)
    err = float(np.max(np.abs(math.sqrt(n) * (fit.beta_d - b_star) - (Z + delta))))
    worst["decomposition"] = err
    assert err <= 1e-10

    # gaussian family through the GLM selector equals the linear selector
    Xl = rng.standard_normal((120, 200))
    bl = np.zeros(200)
    bl[:8] = 1.0
    d = Dataset(Xl, Xl @ bl + rng.standard_normal(120))
    rules = mr.HighDimRules("theory:1", "theory:1")
    same = all(
        np.array_equal(
            mr.ds_high_linear(d, MirrorConfig(seed=s), rules).selected,
            mr.ds_high_glm(d, MirrorConfig(seed=s), rules).selected,
        )
        for s in range(3)
    )
    worst["glm_equals_linear"] = same
    _detail(record_property, **worst)
    assert same


# ---- scale-free selection -------------------------------------------------------


def _random_mirror(rng):
    p = int(rng.integers(1, 200))
    kind = rng.integers(3)
    if kind == 0:
        return rng.standard_normal(p) * rng.exponential(5.0)
    if kind == 1:  # heavy ties and exact zeros
        return rng.integers(-4, 5, p).astype(float)
    return np.concatenate([rng.exponential(3.0, p // 3 + 1), -rng.exponential(1.0, p - p // 3)])


@pytest.mark.criterion(7)
def test_criterion_7_scale_free_selection(record_property):
    rng = np.random.default_rng(707)
    checked = 0
    for _ in range(100):
        M = _random_mirror(rng)
        c = 10.0 * (1.0 - rng.random())  # in (0, 10]
        for q in (0.05, 0.1, 0.2):
            cut, _ = mr.fdp_cutoff(M, q)
            assert set(mr.select(M, q).tolist()) == set(mr.select(c * M, q).tolist())
            if cut is not None:
                if cut == 0.0:
                    neg, pos = np.sum(M < 0), np.sum(M > 0)
                else:
                    neg, pos = np.sum(M < -cut), np.sum(M > cut)
                assert pos > 0 and neg / pos <= q
                checked += 1
    _detail(record_property, vectors=100, cutoffs_checked=checked)


# ---- MDS aggregation -------------------------------------------------------------


def _brute_force_mds(rates, q):
    srt = sorted(float(r) for r in rates)
    best = None
    acc = 0.0
    for ell, v in enumerate(srt, start=1):
        acc += v
        if acc <= q:
            best = ell
    if best is None:
        return set()
    return {j for j, r in enumerate(rates) if r > srt[best - 1]}


def _random_rates(rng):
    p = int(rng.integers(1, 21))
    if rng.random() < 0.5:
        splits = []
        for _ in range(int(rng.integers(1, 8))):
            k = int(rng.integers(0, p + 1))
            splits.append(rng.choice(p, size=k, replace=False))
        return mr.inclusion_rates(splits, p).rates
    raw = rng.integers(0, 6, p).astype(float)
    return raw / max(raw.sum(), 1.0)


@pytest.mark.criterion(8)
def test_criterion_8_mds_matches_brute_force(record_property):
    rng = np.random.default_rng(808)
    for _ in range(1000):
        rates = _random_rates(rng)
        q = float(rng.choice([0.05, 0.1, 0.2, 0.3]))
        sel, _, _ = mr.mds_aggregate(rates, q)
        assert set(np.asarray(sel).tolist()) == _brute_force_mds(rates, q)
    _detail(record_property, vectors=1000)
