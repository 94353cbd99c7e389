import math

import numpy as np
import pytest
from scipy import integrate, stats

from regensim.errors import DomainError, UnsupportedModelError
from regensim.models import (
    JumpSdeModel,
    LevySpec,
    LyapunovV,
    OuModel,
    WeakDriftDiffusionModel,
    diffusion_recurrence,
    generator_value,
    jump_recurrence,
    kappa_for_order,
    stationary_density,
    stationary_mean,
    transition_density,
    verify_drift,
)
from regensim.rates import PhiSpec

OU = OuModel(1.0, math.sqrt(2.0))


def test_ou_transition_density_is_gaussian():
    t, x = 0.7, 1.3
    y = np.linspace(-4, 4, 9)
    m, v = x * math.exp(-t), 1.0 - math.exp(-2 * t)
    assert np.allclose(transition_density(OU, t, x, y), stats.norm.pdf(y, m, math.sqrt(v)), rtol=1e-13)


def test_transition_density_domain():
    with pytest.raises(DomainError):
        transition_density(OU, 0.0, 0.0, 0.0)
    with pytest.raises(UnsupportedModelError):
        transition_density(WeakDriftDiffusionModel(1.0, 0.0), 1.0, 0.0, 0.0)


def test_ou_generator_quadratic():
    x = np.linspace(-5, 5, 11)
    model = OuModel(0.7, 1.5)
    assert np.allclose(generator_value(model, LyapunovV(2), x), -2 * 0.7 * x * x + 1.5**2, rtol=1e-13)


def test_analytic_margin():
    # b = -sign(x), unit noise, V = x^2, Phi = sqrt: AV = -2|x| + 1, margin |x| - 1
    model = WeakDriftDiffusionModel(1.0, 1.0, smoothing=0.0)
    rep = verify_drift(model, PhiSpec(1.0, 0.5), LyapunovV(2), (1.0, 100.0), n_grid=500)
    assert np.max(np.abs(rep.margin - (np.abs(rep.x) - 1.0))) <= 1e-12
    assert rep.m0 == 1.0


def test_ou_drift_set_constants():
    # margin 2x^2 - 2 - |x| >= 0 from (1 + sqrt 17)/4; its minimum -17/8 sits at |x| = 1/4
    rep = verify_drift(OU, PhiSpec(1.0, 0.5), LyapunovV(2), (0.0, 50.0), n_grid=2001)
    root = (1 + math.sqrt(17)) / 4
    assert root <= rep.m0 < root + 50.0 / 2000 + 1e-12
    assert rep.b_hat == pytest.approx(17 / 8, abs=1e-4)
    assert rep.worst_margin == pytest.approx(-17 / 8)


def test_verify_drift_without_tail():
    rep = verify_drift(OU, PhiSpec(100.0, 0.9), LyapunovV(2), (0.0, 5.0), n_grid=20)
    assert rep.m0 is None and rep.b_hat is None


def test_weakdrift_generator_in_three_dimensions():
    model = WeakDriftDiffusionModel(1.5, 0.5, smoothing=1.0, dim=3)
    V = LyapunovV(3.0)
    x = np.array([0.8, -1.1, 2.0])
    h = 1e-4
    v = lambda z: V(z[None, :])[0]
    grad = np.array([(v(x + h * e) - v(x - h * e)) / (2 * h) for e in np.eye(3)])
    lap = sum((v(x + h * e) - 2 * v(x) + v(x - h * e)) / h**2 for e in np.eye(3))
    want = grad @ model.drift(x) + 0.5 * lap
    assert generator_value(model, V, x[None, :])[0] == pytest.approx(want, rel=1e-6)


def test_singular_drift_rejected():
    with pytest.raises(DomainError):
        WeakDriftDiffusionModel(1.0, 0.5, smoothing=0.0)


def test_weakdrift_radial_convention():
    model = WeakDriftDiffusionModel(2.0, 0.0, smoothing=1.0)
    rho = np.array([1.0, 10.0, 1e6])
    assert np.allclose(model.drift(rho) * rho, -2.0 * rho / (rho + 1.0))
    assert model.drift(0.0) == 0.0


def test_lyapunov_floor_is_c2():
    V = LyapunovV(2.0, floor_radius=4.0)
    g, g1, g2 = V.radial(np.array([0.0, 1.0, 2.0, 4.0, 10.0]))
    assert np.all(g >= 1.0)
    assert g[-1] == 100.0
    h = 1e-5
    for r in (2.0, 4.0, 3.0):
        d = (V(r + h) - V(r - h)) / (2 * h)
        d2 = (V(r + h) - 2 * V(r) + V(r - h)) / h**2
        _, a1, a2 = V.radial(r)
        assert a1 * r == pytest.approx(d, abs=1e-6)
        assert a2 == pytest.approx(d2, abs=1e-3)


@pytest.mark.parametrize("m,floor", [(0.5, 0.0), (2.0, 1.0)])
def test_lyapunov_domain(m, floor):
    with pytest.raises(DomainError):
        LyapunovV(m, floor)


def test_diffusion_recurrence_for_order_two():
    model = WeakDriftDiffusionModel(2.0, 0.0, smoothing=1.0)
    params = diffusion_recurrence(model, 100.0, kappa_for_order(2.0, 0.0))
    r_eff = 2.0 * 100.0 / 101.0
    assert params.m_power == 4.0
    assert (params.beta, params.gamma) == (1.0, 1.0)
    assert params.r_tilde == pytest.approx(r_eff - 1.5)
    assert params.phi.c == pytest.approx(4 * (r_eff - 1.5))
    assert params.phi.phi_exponent == pytest.approx(0.5)
    assert params.p_order == pytest.approx(2.0)


def test_diffusion_recurrence_kappa_range():
    model = WeakDriftDiffusionModel(0.2, 0.0, smoothing=1.0)
    with pytest.raises(DomainError):
        diffusion_recurrence(model, 10.0, 5.0)


def test_levy_moments():
    lv = LevySpec("gaussian", 2.0, 1.0, delta_min=1e-3, u_max=10.0)
    want = 2.0 * integrate.quad(lambda a: a**2 * 2.0 * stats.norm.pdf(a), 1.0, 10.0)[0]
    assert lv.large_jump_moment(2.0) == pytest.approx(want, rel=1e-10)
    assert lv.total_mass == pytest.approx(2.0 * (1 - 2 * stats.norm.sf(10)) - 4 * (stats.norm.cdf(1e-3) - 0.5), rel=1e-8)


def test_levy_sampling_matches_table():
    lv = LevySpec("power", 1.0, 1.0, 1.5, 0.01, 5.0)
    u = lv.sample_jumps(50_000, np.random.default_rng(3))
    assert np.all((np.abs(u) >= 0.01) & (np.abs(u) <= 5.0))
    grid = np.geomspace(0.01, 5.0, 2000)
    ref = integrate.cumulative_trapezoid(grid ** -2.5, grid, initial=0)
    ref /= ref[-1]
    cdf = lambda a: np.interp(a, grid, ref)
    assert stats.kstest(np.abs(u), cdf).pvalue > 1e-3


def test_jump_generator_closed_form():
    # V = x^2 and odd jumps: AV = 2 x b(x) + gamma^2 |x|^(2l) int u^2 nu(du)
    lv = LevySpec("gaussian", 1.0, 1.0, delta_min=1e-3, u_max=10.0)
    model = JumpSdeModel.standard(2.0, 0.5, 0.3, lv)
    second = 2.0 * integrate.quad(lambda a: a * a * stats.norm.pdf(a), 1e-3, 10.0, epsabs=1e-13)[0]
    for x in (0.5, 2.0, -3.0):
        want = 2 * x * float(model.drift(x)) + 0.09 * abs(x) * second
        assert generator_value(model, LyapunovV(2), x) == pytest.approx(want, rel=1e-8)


def test_jump_recurrence():
    lv = LevySpec("gaussian", 1.0, 1.0)
    model = JumpSdeModel.standard(2.0, 0.5, 0.3, lv)
    params = jump_recurrence(model, 10.0, 2.0)
    assert params.r_tilde == pytest.approx(2.0 * 10 / 11 - 0.6 * lv.large_jump_moment(2.0))
    assert params.phi.phi_exponent == pytest.approx(0.75)
    with pytest.raises(DomainError):
        jump_recurrence(JumpSdeModel.standard(0.01, 0.5, 5.0, lv), 10.0, 2.0)


def test_jump_model_is_one_dimensional():
    with pytest.raises(DomainError):
        JumpSdeModel(lambda x: x, lambda x, u: u, lambda x, u: 0 * u, LevySpec(), dim_x=2)


def test_laplace_stationary_law():
    # l = 1 without smoothing: b = -r sign(x), invariant density r exp(-2 r |y|)
    model = WeakDriftDiffusionModel(1.5, 1.0, smoothing=0.0)
    y = np.array([-2.0, 0.0, 0.7])
    assert np.allclose(stationary_density(model, y), 1.5 * np.exp(-3.0 * np.abs(y)), rtol=1e-7)


def test_ou_stationary_mean():
    assert stationary_mean(OU, lambda y: y * y) == pytest.approx(1.0, rel=1e-10)
    assert stationary_mean(OU, lambda y: (y <= 0).astype(float)) == pytest.approx(0.5, rel=1e-10)
