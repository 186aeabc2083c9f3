import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from mirrorfdr import baselines as bl
from mirrorfdr import estimators as est
from mirrorfdr.core import Dataset, GlmFamily, SingularHessianError
from mirrorfdr.estimators import DebiasedFit

pvalue_vectors = arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1).map(lambda v: round(v, 3)))


def brute_force_bh(pvals, q):
    m = len(pvals)
    srt = sorted(pvals)
    k_star = max((k for k in range(1, m + 1) if srt[k - 1] <= k * q / m), default=0)
    if k_star == 0:
        return set()
    return {j for j, v in enumerate(pvals) if v <= srt[k_star - 1]}


# ---- two-sided p-values -------------------------------------------------------


def test_two_sided_pvalues_match_normal_survival():
    z = np.linspace(-12, 12, 97)
    assert np.max(np.abs(bl.two_sided_pvalues(z) - 2 * stats.norm.sf(np.abs(z)))) <= 1e-15
    assert bl.two_sided_pvalues(0.0) == 1.0


@given(st.floats(0, 30), st.floats(0, 30))
def test_pvalues_decrease_in_abs_z(a, b):
    lo, hi = sorted((a, b))
    assert bl.two_sided_pvalues(hi) <= bl.two_sided_pvalues(lo)
    assert bl.two_sided_pvalues(-hi) == bl.two_sided_pvalues(hi)


# ---- Benjamini-Hochberg -------------------------------------------------------


def test_bh_worked_example():
    assert bl.benjamini_hochberg([0.01, 0.02, 0.5], 0.1).tolist() == [0, 1]


def test_bh_all_ones_rejects_nothing():
    assert bl.benjamini_hochberg(np.ones(7), 0.1).size == 0


def test_bh_boundary_rejects_all():
    q, p = 0.1, 8
    assert bl.benjamini_hochberg(np.full(p, q / p), q).tolist() == list(range(p))


def test_bh_keeps_ties_with_last_rejection():
    # p_(2) = 0.05 <= 2*0.1/4 qualifies, the tied entry at index 3 goes along
    assert bl.benjamini_hochberg([0.001, 0.05, 0.9, 0.05], 0.1).tolist() == [0, 1, 3]


def test_bh_validates_inputs():
    with pytest.raises(ValueError):
        bl.benjamini_hochberg([0.1], 1.0)
    with pytest.raises(ValueError):
        bl.benjamini_hochberg([1.2], 0.1)
    assert bl.benjamini_hochberg([], 0.1).size == 0


@settings(max_examples=300)
@given(pvalue_vectors, st.floats(0.01, 0.5))
def test_bh_matches_brute_force(pv, q):
    assert set(bl.benjamini_hochberg(pv, q).tolist()) == brute_force_bh(pv.tolist(), q)


@given(pvalue_vectors, st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_bh_monotone_in_q(pv, a, b):
    lo, hi = sorted((a, b))
    assert set(bl.benjamini_hochberg(pv, lo).tolist()) <= set(bl.benjamini_hochberg(pv, hi).tolist())


@given(pvalue_vectors, st.floats(0.01, 0.5), st.randoms(use_true_random=False))
def test_bh_permutation_invariant(pv, q, rnd):
    perm = list(range(pv.size))
    rnd.shuffle(perm)
    perm = np.array(perm)
    base = set(bl.benjamini_hochberg(pv, q).tolist())
    moved = set(perm[bl.benjamini_hochberg(pv[perm], q)].tolist())
    assert moved == base


@given(pvalue_vectors, st.floats(0.01, 0.5))
def test_bh_never_rejects_above_q(pv, q):
    rej = bl.benjamini_hochberg(pv, q)
    assert np.all(pv[rej] <= q)


# ---- Wald p-values ------------------------------------------------------------


def test_wald_mle_orthonormal_gaussian_se():
    n, p = 64, 4
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    X = Q * math.sqrt(n)
    y = X @ np.array([0.3, 0.0, -0.2, 0.1]) + rng.standard_normal(n)
    data = Dataset(X, y)
    fit = est.fit_mle(data)
    rep = bl.wald_pvalues_mle(data, fit)
    se = fit.beta_hat / rep.zscores
    assert np.allclose(se, 1 / math.sqrt(n), rtol=1e-10)


def test_wald_mle_logistic_intercept_only():
    n = 100
    data = Dataset(np.ones((n, 1)), np.tile([0.0, 1.0], n // 2), GlmFamily("logistic"))
    fit = est.fit_mle(data)
    assert fit.beta_hat[0] == pytest.approx(0.0, abs=1e-12)
    rep = bl.wald_pvalues_mle(data, fit)
    assert rep.pvals[0] == pytest.approx(1.0, abs=1e-10)
    # information n/4 at p = 1/2: check se through a shifted coefficient
    shifted = est.MleFit(np.array([0.2]), 0, 0.0, True)
    z = bl.wald_pvalues_mle(data, shifted).zscores[0]
    w = math.exp(0.2) / (1 + math.exp(0.2)) ** 2
    assert 0.2 / z == pytest.approx(1 / math.sqrt(n * w), rel=1e-12)
    assert 1 / math.sqrt(n * 0.25) == pytest.approx(2 / math.sqrt(n))


def test_wald_mle_singular_information():
    X = np.column_stack([np.ones(10), np.ones(10)])
    data = Dataset(X, np.arange(10.0))
    with pytest.raises(SingularHessianError):
        bl.wald_pvalues_mle(data, est.MleFit(np.zeros(2), 0, 0.0, True))


def _debiased(beta_d, sigma):
    return DebiasedFit(np.asarray(beta_d, float), np.asarray(sigma, float), None, None)


def test_wald_debiased_zero_gives_one():
    rep = bl.wald_pvalues_debiased(_debiased([0.0, 0.1], [1.0, 1.0]), 100)
    assert rep.pvals[0] == 1.0
    assert rep.zscores[1] == pytest.approx(1.0)


def test_wald_debiased_doubling_sigma_raises_pvalue():
    a = bl.wald_pvalues_debiased(_debiased([0.3, -0.2], [1.0, 0.5]), 50)
    b = bl.wald_pvalues_debiased(_debiased([0.3, -0.2], [2.0, 1.0]), 50)
    assert np.allclose(b.zscores, a.zscores / 2)
    assert np.all(b.pvals > a.pvals)


def test_wald_debiased_requires_positive_sigma():
    with pytest.raises(ValueError):
        bl.wald_pvalues_debiased(_debiased([0.1], [0.0]), 10)


def test_debiased_pvalues_detect_strong_linear_signal():
    rng = np.random.default_rng(12)
    n, p = 150, 200
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:3] = 1.5
    data = Dataset(X, X @ beta + rng.standard_normal(n))
    rep = bl.debiased_lasso_pvalues(data, "theory:1", "theory:1", 0)
    assert set(bl.benjamini_hochberg(rep.pvals, 0.1).tolist()) >= {0, 1, 2}
    assert bl.residual_noise_sd(data, beta) == pytest.approx(1.0, abs=0.2)


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="the sandwich variance used here keeps null p-values close to uniform; "
    "a right skew needs an inflated variance, as with the alternative debiasing left out of this package",
)
def test_debiased_null_pvalues_skew_right(fig1_nulls):
    _, _, pv = fig1_nulls
    assert np.mean(pv) > 0.5


@pytest.mark.slow
def test_debiased_null_pvalues_near_uniform(fig1_nulls):
    _, _, pv = fig1_nulls
    assert abs(np.mean(pv) - 0.5) <= 0.05
    assert stats.kstest(pv, "uniform").statistic <= 0.1
