import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_instance
from robust_ic.covariance import (covariance_pair, covariances, desired_steering,
                                  error_norm_vector, estimate_received_autocorrelation,
                                  stream_covariance, total_covariance)
from robust_ic.exceptions import InvalidArgument
from robust_ic.model import FilterSet, NetworkConfig, RngStream


def brute_covariances(H, V, D, P):
    K = len(D)
    N = H.shape[-2]
    S = np.zeros((K, N, N), dtype=complex)
    T = np.zeros((K, V.shape[-1], N, N), dtype=complex)
    for k in range(K):
        for j in range(K):
            for m in range(D[j]):
                x = H[k, j] @ V[j, :, m]
                S[k] += P * np.outer(x, x.conj())
        for d in range(D[k]):
            x = H[k, k] @ V[k, :, d]
            T[k, d] = P * np.outer(x, x.conj())
    return S, T


@given(st.integers(0, 10_000), st.sampled_from([(4, 3, 3, 1), (3, 4, 4, 2), (2, 6, 8, 4),
                                                (3, 2, 5, (1, 2, 1))]))
def test_vectorized_covariances_match_loops(seed, shape):
    K, M, N, D = shape
    cfg, ch, f = make_instance(seed, K=K, M=M, N=N, D=D)
    S, T = covariances(ch.H, f.V, cfg.P)
    Sb, Tb = brute_covariances(ch.H, f.V, cfg.D, cfg.P)
    assert np.allclose(S, Sb, atol=1e-12 * cfg.P)
    assert np.allclose(T, Tb, atol=1e-12 * cfg.P)
    # Hermitian PSD, T rank one
    assert np.allclose(S, np.conj(np.swapaxes(S, -1, -2)))
    assert np.all(np.linalg.eigvalsh(S) > -1e-9 * cfg.P)
    for k in range(K):
        assert np.allclose(total_covariance(k, ch.H, f, cfg.P), S[k])
        for d in range(cfg.D[k]):
            assert np.linalg.matrix_rank(T[k, d], tol=1e-9 * cfg.P) == 1
            assert np.allclose(stream_covariance(k, d, ch.H, f, cfg.P), T[k, d])


def test_hand_worked_single_user():
    H = np.array([[[[1.0, 0.0], [0.0, 2.0]]]], dtype=complex)
    V = np.array([[[0.0], [1.0]]], dtype=complex)
    f = FilterSet(V, np.array([[[1.0], [0.0]]], dtype=complex), (1,))
    S, T = covariances(H, V, 3.0)
    assert np.allclose(S[0], [[0, 0], [0, 12]])
    assert np.allclose(T[0, 0], S[0])
    assert np.allclose(desired_steering(H, V)[0, :, 0], [0, 2])
    pair = covariance_pair(0, H, f, 3.0)
    assert len(pair.T) == 1 and np.allclose(pair.S, S[0])


def test_index_checks():
    cfg, ch, f = make_instance(1)
    with pytest.raises(InvalidArgument):
        stream_covariance(4, 0, ch.H, f, cfg.P)
    with pytest.raises(InvalidArgument):
        stream_covariance(0, 1, ch.H, f, cfg.P)
    with pytest.raises(InvalidArgument):
        total_covariance(-1, ch.H, f, cfg.P)


def test_autocorrelation_converges_to_closed_form():
    cfg, ch, f = make_instance(2, snr_db=5.0)
    R = estimate_received_autocorrelation(1, ch, f, cfg, 40_000, RngStream(3))
    S, _ = covariances(ch.H, f.V, cfg.P)
    ref = S[1] + (cfg.P * cfg.sigma2 * cfg.total_streams + cfg.N0) * np.eye(cfg.N)
    assert np.linalg.norm(R - ref) / np.linalg.norm(ref) < 0.04
    assert np.allclose(R, R.conj().T)


def test_autocorrelation_needs_samples():
    cfg, ch, f = make_instance(2)
    with pytest.raises(InvalidArgument):
        estimate_received_autocorrelation(0, ch, f, cfg, 0, RngStream(0))


def test_error_norms_and_parameters():
    cfg, ch, _ = make_instance(4, K=3, M=2, N=4, sigma2=0.25)
    ev = error_norm_vector(ch, 1, cfg)
    assert np.allclose(ev.e, [np.sum(np.abs(ch.E[1, j]) ** 2) for j in range(3)])
    assert np.allclose(ev.theta, 8 * 0.25)
    assert ev.cov_diag == pytest.approx(8 * 0.25 ** 2)
    assert np.allclose(ev.cov, ev.cov_diag * np.eye(3))


def test_error_norm_moments_chi_square():
    cfg = NetworkConfig(K=2, M=3, N=2, sigma2=0.4)
    cfg_, ch, _ = make_instance(5, K=2, M=3, N=2, sigma2=0.4, batch=(50_000,))
    e = error_norm_vector(ch, 0, cfg).e
    # ||E||^2 = (sigma2/2) chi2_{2MN}: mean MN s2, variance MN s2^2
    assert e.mean(axis=0) == pytest.approx([2.4, 2.4], rel=0.02)
    assert e.var(axis=0) == pytest.approx([0.96, 0.96], rel=0.05)
