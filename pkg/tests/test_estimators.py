import math

import numpy as np
import pytest
from scipy import stats
from statsmodels.stats.proportion import proportion_confint

from regensim.errors import DomainError, NoCyclesError
from regensim.functions import BoundedFunction
from regensim.models import LyapunovV, OuModel
from regensim.rates import PhiSpec, rate_integral
from regensim.splitting import compute_minorization
from regensim.estimators import (
    CycleSample,
    cycle_moment,
    deviation_study,
    estimate_mu,
    first_regeneration_times,
    fit_slope,
    harvest_cycles,
    hitting_bound,
    linear_fit,
    reference_mu,
    wilson_interval,
)

OU = OuModel(1.0, math.sqrt(2.0))


@pytest.fixture(scope="module")
def mz():
    return compute_minorization(OU, 1.0, window=8.0)


def _sample(tau, xi, replica=None):
    n = len(tau)
    replica = np.arange(n) if replica is None else replica
    return CycleSample(tau, xi[:, None], np.zeros(1), np.zeros(n), replica, np.zeros(1))


def test_wilson_matches_statsmodels():
    for k, n in [(0, 100), (3, 50), (500, 1000), (20000, 20000)]:
        lo, hi = wilson_interval(k, n)
        want = proportion_confint(k, n, alpha=0.05, method="wilson")
        assert (lo, hi) == pytest.approx(want, abs=2e-5)


def test_ratio_estimator_without_dependence():
    rng = np.random.default_rng(0)
    tau = rng.exponential(4.0, 5000)
    xi = 0.3 * tau + rng.normal(0, 0.5, 5000)
    est = estimate_mu(_sample(tau, xi))
    assert est.mu_f == pytest.approx(xi.sum() / tau.sum())
    assert est.ell == pytest.approx(1 / tau.mean())
    z = xi - est.mu_f * tau
    assert est.se_mu == pytest.approx(z.std() / math.sqrt(5000) / tau.mean())
    assert abs(est.mu_f - 0.3) < 4 * est.se_mu


def test_lag_one_covariance_enters_within_replicas():
    rng = np.random.default_rng(1)
    e = rng.exponential(1.0, 4001)
    tau = e[1:] + e[:-1]  # neighbouring cycles share a gap
    xi = tau.copy()
    independent = estimate_mu(_sample(tau, xi))
    shared = estimate_mu(_sample(tau, xi, np.zeros(4000, dtype=int)))
    assert shared.se_ell > 1.3 * independent.se_ell


def test_too_few_cycles():
    with pytest.raises(NoCyclesError):
        estimate_mu(_sample(np.ones(1), np.ones(1)))


def test_jackknife_of_mean_is_standard_error():
    d = np.random.default_rng(2).exponential(1.0, 300)
    est, se = cycle_moment(_sample(d, d), 1.0)
    assert est == pytest.approx(d.mean())
    assert se == pytest.approx(d.std(ddof=1) / math.sqrt(300), rel=1e-10)
    with pytest.raises(DomainError):
        cycle_moment(_sample(d, d), 0.5)


def test_linear_fit_and_slope():
    assert linear_fit([0, 1, 2], [1, 3, 5]) == pytest.approx((2.0, 1.0, 1.0))
    t = np.array([16, 32, 64, 128, 256, 512, 1024], dtype=float)
    n = 10**7
    k = np.round(n * 0.8 * (t / 16) ** -1.5)
    assert fit_slope(t, k, n) == pytest.approx(-1.5, abs=1e-4)
    # points with fewer than 20 exceedances are ignored
    k2 = k.copy()
    k2[-2:] = [5, 0]
    assert fit_slope(t, k2, n) == pytest.approx(-1.5, abs=1e-4)
    assert math.isnan(fit_slope(t, np.array([100, 3, 0, 0, 0, 0, 0]), n))


def test_hitting_bound_formula():
    phi = PhiSpec(1.0, 0.5)
    V = LyapunovV(2)
    # int_0^delta r = (1 + delta/2)^2 - 1 for c = 1, phi = 1/2
    assert hitting_bound(V, 3.0, phi, 2.125, 0.5) == pytest.approx(9 - 1 + 2.125 * 0.5625)
    assert hitting_bound(V, 3.0, phi, 2.125, 0.5, 0.5, 0.5) == pytest.approx(4.5 - 1 + 0.5 * 2.125 * 0.5625)


def test_harvest_cycles(mz):
    fs = [BoundedFunction("one"), BoundedFunction("indicator_le", 0.0)]
    cs = harvest_cycles(OU, mz, fs, PhiSpec(1.0, 0.5).rate(), 400.0, 40, seed=1, step=0.01)
    assert np.allclose(cs.f_integrals[:, 0], cs.durations, atol=1e-8)
    assert np.all(cs.f_integrals[:, 1] <= cs.durations + 1e-12)
    for i in range(40):
        assert cs.durations[cs.replica == i].sum() < 400.0
    assert np.allclose(cs.r_integrals_first, rate_integral(PhiSpec(1.0, 0.5).rate(), cs.first_r_times))
    est = estimate_mu(cs, 1)
    assert abs(est.mu_f - 0.5) < 5 * est.se_mu
    assert 0.2 < est.ell < 0.3
    assert np.all(mz.in_c(cs.start_states) | (np.abs(cs.start_states) <= mz.window))
    assert np.all(cs.c_visits >= 1)


def test_first_regeneration_times(mz):
    r1 = first_regeneration_times(OU, mz, 6.0, 50, seed=0, step=0.01, horizon=5.0)
    assert np.all(np.isfinite(r1)) and np.all(r1 > 0)


def test_reference_mu():
    assert reference_mu(OU, BoundedFunction("indicator_le", 0.0)) == pytest.approx(0.5)
    # E min(X^2, 25) = 1 - E (X^2 - 25)^+ for a standard normal
    want = 1.0 - 2.0 * (5.0 * stats.norm.pdf(5.0) - 24.0 * stats.norm.sf(5.0))
    assert reference_mu(OU, BoundedFunction("clipped_square", 25.0)) == pytest.approx(want, rel=1e-9)


def test_deviation_study_small(mz):
    f = BoundedFunction("indicator_le", 0.0)
    st = deviation_study(OU, mz, f, 0.1, [8, 16, 32], 300, seed=0, step=0.02, calibration_replicas=20)
    add, cnt = st.additive, st.counting
    assert st.mu_f == pytest.approx(0.5)
    assert np.all((add.ci_lo <= add.probabilities) & (add.probabilities <= add.ci_hi))
    assert add.probabilities[0] > add.probabilities[-1]
    assert 0.2 < st.ell < 0.3
    assert cnt.center == st.ell
    assert list(add.t_grid) == [8, 16, 32]


def test_deviation_study_domain(mz):
    f = BoundedFunction("indicator_le", 0.0)
    with pytest.raises(DomainError):
        deviation_study(OU, None, f, 1.5, [8], 10)
    with pytest.raises(DomainError):
        deviation_study(OU, None, f, 0.1, [0, 8], 10)
    with pytest.raises(DomainError):
        deviation_study(OU, mz, None, 0.1, [8], 10, epsilon_n=1.0)
