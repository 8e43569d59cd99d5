"""
Covariance builders at a receiver and error-norm statistics.

``S^k`` is the covariance of all streams seen by receiver k computed from
the channel matrices passed in, and ``T_d^k`` the covariance of its d-th
desired stream. Callers pass estimated channels H for the robust designs
and true channels G when the true-channel quantities are wanted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgument
from .model import (ChannelSet, FilterSet, NetworkConfig, RngLike, as_generator,
                    sample_gaussian_matrix)

__all__ = [
    "CovariancePair",
    "ErrorNormVector",
    "cross_steering",
    "desired_steering",
    "covariances",
    "stream_covariance",
    "total_covariance",
    "covariance_pair",
    "estimate_received_autocorrelation",
    "error_norm_vector",
]


def cross_steering(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """
    All effective stream directions ``H^{kj} v_m^j``.

    Returns an array of shape ``(..., K, K, N, Dmax)`` indexed
    ``[..., k, j, :, m]``.
    """
    return H @ V[..., None, :, :, :]


def desired_steering(H: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``H^{kk} v_d^k`` for every receiver, shape ``(..., K, N, Dmax)``."""
    Hkk = np.diagonal(H, axis1=-4, axis2=-3)          # (..., N, M, K)
    Hkk = np.moveaxis(Hkk, -1, -3)                     # (..., K, N, M)
    return Hkk @ V


def covariances(H: np.ndarray, V: np.ndarray, P: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Vectorized ``S^k`` and ``T_d^k`` for all receivers and streams.

    Returns
    -------
    S : ndarray, shape (..., K, N, N)
    T : ndarray, shape (..., K, Dmax, N, N)
        Zero for padding streams.
    """
    HV = cross_steering(H, V)
    S = P * np.einsum("...kjnm,...kjpm->...knp", HV, HV.conj())
    g = desired_steering(H, V)
    T = P * np.einsum("...kna,...kpa->...kanp", g, g.conj())
    return S, T


def _check_index(k: int, d: int | None, D: tuple):
    if not 0 <= k < len(D):
        raise InvalidArgument(f"receiver index {k} out of range for K={len(D)}")
    if d is not None and not 0 <= d < D[k]:
        raise InvalidArgument(f"stream index {d} out of range for D[{k}]={D[k]}")


def stream_covariance(k: int, d: int, H: np.ndarray, filters: FilterSet, P: float) -> np.ndarray:
    """``T_d^k = P H^{kk} v_d^k v_d^{k H} H^{kk H}`` (rank <= 1)."""
    _check_index(k, d, filters.D)
    g = H[..., k, k, :, :] @ filters.V[..., k, :, d]
    return P * g[..., :, None] * g[..., None, :].conj()


def total_covariance(k: int, H: np.ndarray, filters: FilterSet, P: float) -> np.ndarray:
    """``S^k = P sum_j sum_m H^{kj} v_m^j v_m^{j H} H^{kj H}``."""
    _check_index(k, None, filters.D)
    HV = H[..., k, :, :, :] @ filters.V                # (..., K, N, Dmax)
    return P * np.einsum("...jnm,...jpm->...np", HV, HV.conj())


@dataclass(frozen=True)
class CovariancePair:
    S: np.ndarray
    T: tuple


def covariance_pair(k: int, H: np.ndarray, filters: FilterSet, P: float) -> CovariancePair:
    return CovariancePair(S=total_covariance(k, H, filters, P),
                          T=tuple(stream_covariance(k, d, H, filters, P)
                                  for d in range(filters.D[k])))


def estimate_received_autocorrelation(k: int, channels: ChannelSet, filters: FilterSet,
                                      config: NetworkConfig, samples: int, rng: RngLike,
                                      block: int = 10_000) -> np.ndarray:
    """
    Sample average of ``Y^k Y^{kH}`` with the estimate H held fixed.

    Every sample draws fresh symbols ``s^j ~ CN(0, P I)``, fresh errors
    ``E^{kj} ~ CN(0, sigma2)`` and noise ``Z ~ CN(0, N0 I)``. The
    expectation of the result is ``S^k + (P sigma2 sum(D) + N0) I``.
    """
    if samples < 1:
        raise InvalidArgument("samples must be >= 1")
    gen = as_generator(rng)
    K, M, N, dmax = config.K, config.M, config.N, config.dmax
    mask = config.stream_mask()                         # (K, Dmax)
    Hk = channels.H[k]                                  # (K, N, M)
    V = filters.V                                       # (K, M, Dmax)
    acc = np.zeros((N, N), dtype=complex)
    done = 0
    while done < samples:
        n = min(block, samples - done)
        s = sample_gaussian_matrix(dmax, 1, config.P, gen, batch=(n, K))[..., 0]
        s = s * mask
        E = sample_gaussian_matrix(N, M, config.sigma2, gen, batch=(n, K))
        Z = sample_gaussian_matrix(N, 1, config.N0, gen, batch=(n,))[..., 0]
        X = np.einsum("jma,nja->njm", V, s)             # (n, K, M)
        Y = np.einsum("njpm,njm->np", Hk[None] + E, X) + Z
        acc += Y.T @ Y.conj()
        done += n
    return acc / samples


@dataclass(frozen=True)
class ErrorNormVector:
    """
    Squared Frobenius norms ``e[j] = ||E^{kj}||^2`` seen at one receiver.

    ``theta`` holds the mean ``M N sigma2`` of each entry and ``cov_diag``
    the common variance ``M N sigma2^2`` of the (diagonal) covariance.
    """

    e: np.ndarray
    theta: np.ndarray
    cov_diag: float

    @property
    def cov(self) -> np.ndarray:
        return self.cov_diag * np.eye(len(self.theta))


def error_norm_vector(channels: ChannelSet, k: int, config: NetworkConfig) -> ErrorNormVector:
    _check_index(k, None, config.D)
    E = channels.E[..., k, :, :, :]
    e = np.sum(np.abs(E) ** 2, axis=(-2, -1))
    mn = config.M * config.N
    return ErrorNormVector(e=e,
                           theta=np.full(config.K, mn * config.sigma2),
                           cov_diag=mn * config.sigma2 ** 2)
