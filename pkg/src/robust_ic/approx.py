"""
Statistical linearization of the SINR under CSI error.

The conditional moments ``mu1 = E[num | H]`` and ``mu2 = E[den | H]`` of the
SINR numerator and denominator give the approximate mean ``mu1/mu2``. The
error-norm lower bound on the SINR is linearized around the mean error
norms ``theta = M N sigma2`` to get its gradient and an approximate
variance ``grad^T Cov(e) grad`` with ``Cov(e) = M N sigma2^2 I``.

:func:`mc_oracle` provides brute-force Monte Carlo references for all of
these quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateStream, InvalidArgument, NumericFailure
from .model import FilterSet, NetworkConfig, RngLike, as_generator, sample_gaussian_matrix

__all__ = [
    "MomentPair",
    "VarianceBreakdown",
    "quad_form",
    "moments_all",
    "conditional_moments",
    "approx_mean_sinr",
    "lb_forms_all",
    "lb_forms",
    "lb_gradient",
    "approx_variance",
    "printed_variance",
    "mc_oracle",
    "MC_KINDS",
]

IMAG_TOL = 1e-10


def quad_form(u: np.ndarray, A: np.ndarray) -> np.ndarray:
    """
    Real quadratic form ``u^H A u`` of a (nominally) Hermitian matrix.

    ``A`` is symmetrized before evaluation. An imaginary residue above
    ``1e-10`` (relative to the magnitude) raises :class:`NumericFailure`.
    ``u`` has shape ``(..., N)`` and ``A`` shape ``(..., N, N)``.
    """
    Ah = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    z = np.einsum("...n,...np,...p->...", u.conj(), Ah, u)
    if np.any(np.abs(z.imag) > IMAG_TOL * np.maximum(1.0, np.abs(z.real))):
        raise NumericFailure("quadratic form of a Hermitian matrix is not real")
    return z.real


def _column_forms(S, T, U):
    """``u^H S u``, ``u^H T u`` and ``u^H u`` for every column, shape (..., K, Dmax)."""
    uSu = np.einsum("...kna,...knp,...kpa->...ka", U.conj(), S, U).real
    uTu = np.einsum("...kna,...kanp,...kpa->...ka", U.conj(), T, U).real
    uu = np.sum(np.abs(U) ** 2, axis=-2)
    return uSu, uTu, uu


def moments_all(S: np.ndarray, T: np.ndarray, U: np.ndarray,
                config: NetworkConfig) -> tuple[np.ndarray, np.ndarray]:
    """
    Conditional moments for every stream, arrays of shape ``(..., K, Dmax)``.

    ``mu1 = u^H [T + P s2 I] u`` and
    ``mu2 = u^H [S - T + (P s2 sum(D) - P s2 + N0) I] u``.
    """
    P, s2 = config.P, config.sigma2
    uSu, uTu, uu = _column_forms(S, T, U)
    mu1 = uTu + P * s2 * uu
    mu2 = uSu - uTu + (P * s2 * config.total_streams - P * s2 + config.N0) * uu
    return mu1, mu2


@dataclass(frozen=True)
class MomentPair:
    mu1: float
    mu2: float

    @property
    def ratio(self) -> float:
        return self.mu1 / self.mu2


def conditional_moments(k: int, d: int, S: np.ndarray, T: np.ndarray, u: np.ndarray,
                        config: NetworkConfig) -> MomentPair:
    """
    Mean of the SINR numerator and denominator of stream ``(k, d)`` given H.

    Parameters
    ----------
    S, T : ndarray
        ``S^k`` and ``T_d^k`` built from the estimated channels.
    u : ndarray
        Unit-norm receive filter column.
    """
    del k, d  # the moments depend on (k, d) only through S, T and u
    P, s2, N = config.P, config.sigma2, S.shape[-1]
    I = np.eye(N)
    mu1 = quad_form(u, T + P * s2 * I)
    mu2 = quad_form(u, S - T + (P * s2 * config.total_streams - P * s2 + config.N0) * I)
    if not mu2 > 0:
        raise NumericFailure(f"non-positive denominator moment mu2={mu2}")
    return MomentPair(float(mu1), float(mu2))


def approx_mean_sinr(moments: MomentPair) -> float:
    """Approximate conditional mean SINR ``mu1 / mu2``."""
    if not moments.mu2 > 0:
        raise NumericFailure("mu2 must be positive")
    return moments.mu1 / moments.mu2


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Lower bound linearization xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def lb_forms_all(S, T, U, config: NetworkConfig, own_in_a: bool = False):
    """
    Quadratic forms ``a, b, c`` and ``w = u^H u`` for every stream.

    ``b = u^H [T - P M N s2 I] u`` is the bound's numerator at theta, ``c``
    its denominator and ``a = u^H [S + (D^k - 2) T + (P M N s2 sum_{j!=k} D^j
    + N0) I] u``. With ``own_in_a=True`` the sum in ``a`` runs over every
    user including k (the form printed in the closed-form variance).
    """
    P, N0 = config.P, config.N0
    pmn = P * config.M * config.N * config.sigma2
    D = np.array(config.D, dtype=float)
    Dsum = D.sum()
    uSu, uTu, uu = _column_forms(S, T, U)
    others = Dsum if own_in_a else Dsum - D                      # (K,)
    a = uSu + (D[:, None] - 2.0) * uTu + (pmn * others[:, None] + N0) * uu
    b = uTu - pmn * uu
    c = uSu - uTu + (pmn * Dsum - pmn + N0) * uu
    return a, b, c, uu


def lb_forms(k: int, S, T, u, config: NetworkConfig, own_in_a: bool = False):
    """Scalar ``(a, b, c, w)`` of a single stream of receiver ``k``."""
    P, N0 = config.P, config.N0
    pmn = P * config.M * config.N * config.sigma2
    D = config.D
    I = np.eye(S.shape[-1])
    others = sum(D) if own_in_a else sum(D) - D[k]
    a = quad_form(u, S + (D[k] - 2) * T + (pmn * others + N0) * I)
    b = quad_form(u, T - pmn * I)
    c = quad_form(u, S - T + (pmn * sum(D) - pmn + N0) * I)
    w = float(np.vdot(u, u).real)
    return float(a), float(b), float(c), w


def lb_gradient(k: int, d: int, S: np.ndarray, T: np.ndarray, u: np.ndarray,
                config: NetworkConfig) -> np.ndarray:
    """
    Gradient of the SINR lower bound w.r.t. the error norms ``e^{kj}``, at theta.

    Components ``j != k`` are ``-P D^j w b / c^2`` and the own component is
    ``-P w a / c^2``. Returns a length-K vector.
    """
    del d
    a, b, c, w = lb_forms(k, S, T, u, config)
    if c == 0 or not np.isfinite(c):
        raise NumericFailure("zero denominator in lower-bound gradient")
    P = config.P
    grad = -P * np.array(config.D, dtype=float) * w * b / c ** 2
    grad[k] = -P * w * a / c ** 2
    if not np.all(np.isfinite(grad)):
        raise NumericFailure("non-finite lower-bound gradient")
    return grad


def printed_variance(k: int, S, T, u, config: NetworkConfig) -> float:
    """
    Closed-form variance written in terms of ``a, b, c``, taken literally.

    In this form the shift in the first square and the weight of ``b^2``
    both sum over every user including k. It differs from
    ``grad^T Cov grad`` whenever ``sigma2 > 0`` and K > 1; see
    :func:`approx_variance`.
    """
    a_all, b, c, w = lb_forms(k, S, T, u, config, own_in_a=True)
    D = np.array(config.D, dtype=float)
    mn = config.M * config.N
    return float(mn * config.P ** 2 * config.sigma2 ** 2 * w ** 2
                 * (a_all ** 2 + np.sum(D ** 2) * b ** 2) / c ** 4)


@dataclass(frozen=True)
class VarianceBreakdown:
    """
    Linearized variance of the SINR lower bound of one stream.

    ``variance`` is the normative ``grad^T Cov grad`` assembly;
    ``printed`` is the literal closed form for comparison.
    """

    grad: np.ndarray
    variance: float
    a: float
    b: float
    c: float
    printed: float

    @property
    def discrepancy(self) -> float:
        """Relative difference ``|printed - variance| / variance`` (0 if both vanish)."""
        if self.variance == 0:
            return 0.0 if self.printed == 0 else np.inf
        return abs(self.printed - self.variance) / self.variance


def approx_variance(k: int, d: int, S: np.ndarray, T: np.ndarray, u: np.ndarray,
                    config: NetworkConfig) -> VarianceBreakdown:
    grad = lb_gradient(k, d, S, T, u, config)
    cov = config.M * config.N * config.sigma2 ** 2 * np.eye(config.K)
    variance = float(grad @ cov @ grad)
    a, b, c, _ = lb_forms(k, S, T, u, config)
    return VarianceBreakdown(grad=grad, variance=max(variance, 0.0), a=a, b=b, c=c,
                             printed=printed_variance(k, S, T, u, config))


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Monte Carlo oracle xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
MC_KINDS = ("mean-sinr", "mean-num", "mean-den", "var-lb", "mean-lb", "mean-rate")


def _mc_samples(kind, k, d, H, filters, config, n, gen):
    K, M, N = config.K, config.M, config.N
    P, N0 = config.P, config.N0
    mask = config.stream_mask()
    E = sample_gaussian_matrix(N, M, config.sigma2, gen, batch=(n, K))
    u = filters.U[k, :, d]
    w = np.vdot(u, u).real
    if kind == "var-lb" or kind == "mean-lb":
        # the bound only sees the error norms; channels stay at their estimates
        e = np.sum(np.abs(E) ** 2, axis=(-2, -1))                 # (n, K)
        proj = np.einsum("n,jnm->jm", u.conj(), H[k] @ filters.V)
        gains = P * np.abs(proj) ** 2 * mask
        total, desired = gains.sum(), gains[k, d]
        num = desired - P * e[:, k] * w
        den = (total + P * w * (e @ np.array(config.D, dtype=float))
               - desired - P * e[:, k] * w + N0 * w)
        return num / den
    G = H[k][None] + E                                             # (n, K, N, M)
    proj = np.einsum("n,bjnm->bjm", u.conj(), G @ filters.V[None])
    gains = P * np.abs(proj) ** 2 * mask
    num = gains[:, k, d]
    den = gains.sum(axis=(-2, -1)) - num + N0 * w
    if kind == "mean-num":
        return num
    if kind == "mean-den":
        return den
    if kind == "mean-sinr":
        return num / den
    return np.log2(1.0 + num / den)


def mc_oracle(kind: str, k: int, d: int, H: np.ndarray, filters: FilterSet,
              config: NetworkConfig, draws: int, rng: RngLike, block: int = 20_000) -> float:
    """
    Monte Carlo moment of a stream's SINR terms over fresh CSI errors.

    The estimate H is held fixed and ``G = H + E`` with fresh
    ``E ~ CN(0, sigma2)`` per draw.

    Parameters
    ----------
    kind : str
        ``"mean-num"``, ``"mean-den"``, ``"mean-sinr"`` (means of the
        numerator, denominator and ratio), ``"var-lb"`` / ``"mean-lb"``
        (variance / mean of the error-norm lower bound) or ``"mean-rate"``
        (mean of ``log2(1 + SINR)``).
    draws : int
        Number of error realizations.
    """
    if kind not in MC_KINDS:
        raise InvalidArgument(f"unknown oracle kind {kind!r}")
    if draws < 1:
        raise InvalidArgument("draws must be >= 1")
    if not 0 <= d < config.D[k]:
        raise DegenerateStream(f"no stream ({k}, {d})")
    gen = as_generator(rng)
    chunks = []
    done = 0
    while done < draws:
        n = min(block, draws - done)
        chunks.append(_mc_samples(kind, k, d, H, filters, config, n, gen))
        done += n
    x = np.concatenate(chunks)
    if kind == "var-lb":
        return float(np.var(x, ddof=1)) if draws > 1 else 0.0
    return float(np.mean(x))
