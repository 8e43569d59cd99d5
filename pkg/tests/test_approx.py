import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_instance
from robust_ic.approx import (MomentPair, approx_mean_sinr, approx_variance,
                              conditional_moments, lb_forms, lb_forms_all, lb_gradient,
                              mc_oracle, moments_all, printed_variance, quad_form)
from robust_ic.checks import fd_lower_bound_gradient
from robust_ic.covariance import covariances
from robust_ic.exceptions import DegenerateStream, InvalidArgument, NumericFailure
from robust_ic.model import RngStream


def _parts(cfg, ch, f, k=0, d=0):
    S, T = covariances(ch.H, f.V, cfg.P)
    return S[k], T[k, d], f.U[k, :, d]


def test_quad_form_is_real_and_checks_hermitian():
    A = np.array([[2.0, 1j], [-1j, 3.0]])
    u = np.array([1.0, 1.0j])
    assert quad_form(u, A) == pytest.approx(np.vdot(u, A @ u).real)
    # symmetrization removes an anti-Hermitian part exactly
    assert quad_form(u, A + np.array([[1j, 0], [0, 0]])) == pytest.approx(quad_form(u, A))


def test_moments_hand_worked():
    # S = T = P g g^H with g = (1, 0), u = (1, 0): mu1 = P + P s2, mu2 = (P s2 D - P s2 + N0)
    from robust_ic.model import NetworkConfig
    cfg = NetworkConfig(K=2, M=1, N=2, D=1, P=4.0, sigma2=0.25)
    T = np.diag([4.0, 0.0]).astype(complex)
    u = np.array([1.0, 0.0], dtype=complex)
    m = conditional_moments(0, 0, T, T, u, cfg)
    assert m.mu1 == pytest.approx(5.0)
    assert m.mu2 == pytest.approx(4 * 0.25 * 2 - 1.0 + 1.0)
    assert approx_mean_sinr(m) == pytest.approx(2.5)
    assert MomentPair(5.0, 2.0).ratio == 2.5


def test_moments_all_matches_scalar():
    cfg, ch, f = make_instance(11, K=3, M=4, N=4, D=(2, 1, 2))
    S, T = covariances(ch.H, f.V, cfg.P)
    mu1, mu2 = moments_all(S, T, f.U, cfg)
    for k in range(3):
        for d in range(cfg.D[k]):
            m = conditional_moments(k, d, S[k], T[k, d], f.U[k, :, d], cfg)
            assert (mu1[k, d], mu2[k, d]) == pytest.approx((m.mu1, m.mu2), rel=1e-12)


@pytest.mark.parametrize("k", [0, 2])
def test_moments_match_monte_carlo(k):
    # frozen against 200k-draw Monte Carlo; agreement well under 1%
    cfg, ch, f = make_instance(3, sigma2=0.05, snr_db=10.0)
    m = conditional_moments(k, 0, *_parts(cfg, ch, f, k), cfg)
    num = mc_oracle("mean-num", k, 0, ch.H, f, cfg, 100_000, RngStream(2))
    den = mc_oracle("mean-den", k, 0, ch.H, f, cfg, 100_000, RngStream(2))
    assert m.mu1 == pytest.approx(num, rel=0.01)
    assert m.mu2 == pytest.approx(den, rel=0.01)


def test_moments_reject_degenerate():
    from robust_ic.model import NetworkConfig
    cfg = NetworkConfig(K=1, M=1, N=1, D=1, sigma2=0.0)
    with pytest.raises(NumericFailure):
        conditional_moments(0, 0, np.ones((1, 1)), np.ones((1, 1)), np.zeros(1), cfg)
    with pytest.raises(NumericFailure):
        approx_mean_sinr(MomentPair(1.0, 0.0))


def test_lb_forms_trivial_case():
    from robust_ic.model import NetworkConfig
    cfg = NetworkConfig(K=1, M=2, N=2, D=1, sigma2=0.0)
    T = np.array([[2.0, 1.0], [1.0, 0.5]], dtype=complex)
    u = np.array([0.6, 0.8j])
    a, b, c, w = lb_forms(0, T, T, u, cfg)
    assert b == pytest.approx(quad_form(u, T))
    assert c == pytest.approx(cfg.N0) and a == pytest.approx(cfg.N0)
    assert w == pytest.approx(1.0)


def test_lb_forms_phase_invariant_and_vectorized():
    cfg, ch, f = make_instance(12)
    S, T, u = _parts(cfg, ch, f, 1)
    assert np.allclose(lb_forms(1, S, T, u, cfg), lb_forms(1, S, T, u * np.exp(2.1j), cfg))
    Sa, Ta = covariances(ch.H, f.V, cfg.P)
    a, b, c, w = lb_forms_all(Sa, Ta, f.U, cfg)
    assert np.allclose([a[1, 0], b[1, 0], c[1, 0], w[1, 0]], lb_forms(1, S, T, u, cfg))


@given(st.integers(0, 100_000), st.integers(2, 4), st.floats(0.01, 0.3), st.floats(0.0, 25.0))
def test_gradient_matches_finite_differences(seed, K, sigma2, snr):
    cfg, ch, f = make_instance(seed, K=K, sigma2=sigma2, snr_db=snr)
    k = seed % K
    g = lb_gradient(k, 0, *_parts(cfg, ch, f, k), cfg)
    fd = fd_lower_bound_gradient(k, 0, ch.H, f, cfg)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-12 * np.abs(fd).max())


@given(st.integers(0, 100_000))
def test_gradient_signs(seed):
    cfg, ch, f = make_instance(seed, sigma2=0.05, snr_db=12.0)
    S, T, u = _parts(cfg, ch, f)
    g = lb_gradient(0, 0, S, T, u, cfg)
    a, b, c, _ = lb_forms(0, S, T, u, cfg)
    assert g[0] <= 0                       # own error norm always hurts
    if b >= 0:                             # bound numerator non-negative at theta
        assert np.all(g <= 0)
    else:
        assert np.all(g[1:] > 0)


@given(st.integers(0, 100_000), st.floats(0.01, 0.3))
def test_variance_assembly(seed, sigma2):
    cfg, ch, f = make_instance(seed, sigma2=sigma2)
    S, T, u = _parts(cfg, ch, f, 1)
    vb = approx_variance(1, 0, S, T, u, cfg)
    mn = cfg.M * cfg.N
    assert vb.variance == pytest.approx(mn * sigma2 ** 2 * np.sum(vb.grad ** 2), rel=1e-12)
    # closed form from the gradient: own-user shift excluded, b^2 weighted by other users
    D = np.array(cfg.D, float)
    closed = (mn * sigma2 ** 2 * cfg.P ** 2 * (vb.a ** 2 + (np.sum(D ** 2) - D[1] ** 2) * vb.b ** 2)
              / vb.c ** 4)
    assert vb.variance == pytest.approx(closed, rel=1e-10)
    assert vb.printed == pytest.approx(printed_variance(1, S, T, u, cfg))
    assert vb.discrepancy > 0


def test_linearized_variance_matches_monte_carlo():
    cfg, ch, f = make_instance(3, sigma2=0.01, snr_db=10.0)
    vb = approx_variance(0, 0, *_parts(cfg, ch, f), cfg)
    mc = mc_oracle("var-lb", 0, 0, ch.H, f, cfg, 100_000, RngStream(1))
    assert vb.variance == pytest.approx(mc, rel=0.03)
    # the literal closed form is visibly off on the same instance
    assert abs(vb.printed / mc - 1) > 0.1


def test_variance_vanishes_without_error():
    cfg, ch, f = make_instance(4, sigma2=0.0)
    vb = approx_variance(0, 0, *_parts(cfg, ch, f), cfg)
    assert vb.variance == 0 and vb.printed == 0 and vb.discrepancy == 0


def test_mc_oracle_validation():
    cfg, ch, f = make_instance(5)
    with pytest.raises(InvalidArgument):
        mc_oracle("median", 0, 0, ch.H, f, cfg, 10, RngStream(0))
    with pytest.raises(InvalidArgument):
        mc_oracle("mean-sinr", 0, 0, ch.H, f, cfg, 0, RngStream(0))
    with pytest.raises(DegenerateStream):
        mc_oracle("mean-sinr", 0, 1, ch.H, f, cfg, 10, RngStream(0))


def test_mc_oracle_sinr_limit():
    # sigma2 -> 0: every draw reproduces the estimated SINR
    cfg, ch, f = make_instance(6, sigma2=0.0)
    from robust_ic.sinr import sinr_all
    s = sinr_all(ch.H, f, cfg.P, cfg.N0)
    assert mc_oracle("mean-sinr", 1, 0, ch.H, f, cfg, 50, RngStream(0)) == pytest.approx(s[1, 0])
    assert mc_oracle("mean-rate", 1, 0, ch.H, f, cfg, 50, RngStream(0)) == pytest.approx(
        np.log2(1 + s[1, 0]))
