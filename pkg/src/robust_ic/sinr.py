"""
Per-stream SINR, the error-norm lower bound, rates and leakage.

Every ``*_all`` function is vectorized over leading batch dimensions and
returns one value per (receiver, stream) slot, shape ``(..., K, Dmax)``,
with zeros in padding slots. The scalar functions evaluate a single
``(k, d)`` pair and raise on non-finite results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import covariances, cross_steering
from .exceptions import InvalidArgument, NumericFailure
from .model import ChannelSet, FilterSet, NetworkConfig

__all__ = [
    "MetricRecord",
    "projected_gains",
    "sinr_all",
    "sinr",
    "sinr_lower_bound_all",
    "sinr_lower_bound",
    "stream_rates",
    "sum_rate",
    "approx_capacity",
    "leakage_terms",
    "leakage_fraction",
    "evaluate_metrics",
]


def _mask_from(D: tuple, dmax: int) -> np.ndarray:
    return np.arange(dmax)[None, :] < np.array(D)[:, None]


def projected_gains(Hc: np.ndarray, V: np.ndarray, U: np.ndarray, P: float) -> np.ndarray:
    """
    Received powers ``P |u_a^{kH} H^{kj} v_m^j|^2``.

    Returns an array indexed ``[..., k, a, j, m]`` (receiver, its stream,
    transmitter, transmitter stream).
    """
    HV = cross_steering(Hc, V)                          # (..., k, j, n, m)
    A = np.einsum("...kna,...kjnm->...kajm", U.conj(), HV)
    return P * np.abs(A) ** 2


def _sinr_parts(Hc, V, U, P, N0, D):
    dmax = V.shape[-1]
    mask = _mask_from(D, dmax)
    gains = projected_gains(Hc, V, U, P) * mask         # zero padded tx streams
    total = gains.sum(axis=(-2, -1))                    # (..., k, a)
    K = Hc.shape[-3]
    idx = np.arange(K)
    diag = gains[..., idx, :, idx, :]                   # (K, ..., a, m)
    diag = np.moveaxis(diag, 0, -3)                     # (..., K, a, m)
    desired = np.diagonal(diag, axis1=-2, axis2=-1)     # (..., K, a)
    unorm2 = np.sum(np.abs(U) ** 2, axis=-2)            # (..., K, a)
    return desired, total, unorm2, mask


def sinr_all(Hc: np.ndarray, filters: FilterSet, P: float, N0: float) -> np.ndarray:
    """
    SINR of every stream for the given channel matrices.

    Pass the true channels G for the actual SINR and the estimates H for
    the SINR as perceived under imperfect CSI.
    """
    desired, total, unorm2, mask = _sinr_parts(Hc, filters.V, filters.U, P, N0, filters.D)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = desired / (total - desired + N0 * unorm2)
    return np.where(mask, out, 0.0)


def sinr(k: int, d: int, Hc: np.ndarray, filters: FilterSet, P: float, N0: float) -> float:
    """
    SINR of stream ``d`` at receiver ``k``.

    Raises
    ------
    NumericFailure
        If the result is not finite (degenerate filters).
    """
    if not (0 <= k < len(filters.D) and 0 <= d < filters.D[k]):
        raise InvalidArgument(f"no stream ({k}, {d})")
    u = filters.U[..., k, :, d]
    v = filters.V
    # desired and interference powers from explicit inner products
    total = 0.0
    for j, Dj in enumerate(filters.D):
        for m in range(Dj):
            total += P * abs(np.vdot(u, Hc[k, j] @ v[j, :, m])) ** 2
    desired = P * abs(np.vdot(u, Hc[k, k] @ v[k, :, d])) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        value = desired / (total - desired + N0 * np.vdot(u, u).real)
    if not np.isfinite(value):
        raise NumericFailure(f"non-finite SINR for stream ({k}, {d})")
    return float(value)


def sinr_lower_bound_all(H: np.ndarray, filters: FilterSet, e: np.ndarray,
                         P: float, N0: float) -> np.ndarray:
    """
    Error-norm lower bound on the SINR for every stream.

    ``e`` holds ``||E^{kj}||^2`` with shape ``(..., K, K)`` (receiver,
    transmitter). The bound may be negative and is returned unclamped.
    """
    desired, total, unorm2, mask = _sinr_parts(H, filters.V, filters.U, P, N0, filters.D)
    ekk = np.diagonal(e, axis1=-2, axis2=-1)[..., :, None]          # (..., K, 1)
    weighted = np.sum(e * np.array(filters.D), axis=-1)[..., :, None]
    num = desired - P * ekk * unorm2
    den = total + P * unorm2 * weighted - desired - P * ekk * unorm2 + N0 * unorm2
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    return np.where(mask, out, 0.0)


def sinr_lower_bound(k: int, d: int, H: np.ndarray, filters: FilterSet, e: np.ndarray,
                     P: float, N0: float) -> float:
    """
    Lower bound on the SINR of stream ``(k, d)`` in terms of error norms.

    ``e`` is the length-K vector ``[||E^{k1}||^2, ..., ||E^{kK}||^2]``.
    """
    e = np.asarray(e, dtype=float)
    if np.any(e < 0):
        raise InvalidArgument("error norms must be non-negative")
    u = filters.U[k, :, d]
    uu = np.vdot(u, u).real
    total = 0.0
    for j, Dj in enumerate(filters.D):
        for m in range(Dj):
            total += P * abs(np.vdot(u, H[k, j] @ filters.V[j, :, m])) ** 2
    desired = P * abs(np.vdot(u, H[k, k] @ filters.V[k, :, d])) ** 2
    num = desired - P * e[k] * uu
    den = (total + P * uu * float(np.dot(e, filters.D)) - desired
           - P * e[k] * uu + N0 * uu)
    if den == 0 or not np.isfinite(den):
        raise NumericFailure(f"zero denominator in SINR lower bound ({k}, {d})")
    return float(num / den)


def stream_rates(sinrs: np.ndarray) -> np.ndarray:
    """Per-stream throughput ``log2(1 + sinr)`` in b/s/Hz."""
    return np.log2(1.0 + np.asarray(sinrs))


def sum_rate(sinrs, axis=None) -> float | np.ndarray:
    """
    Sum of ``log2(1 + sinr)`` over streams.

    With ``axis=None`` every entry is summed; pass ``axis=(-2, -1)`` to
    keep batch dimensions of a ``(..., K, Dmax)`` array.
    """
    sinrs = np.asarray(sinrs, dtype=float)
    if np.any(sinrs < 0) or not np.all(np.isfinite(sinrs)):
        raise InvalidArgument("SINR values must be finite and non-negative")
    return np.sum(stream_rates(sinrs), axis=axis)


def approx_capacity(config: NetworkConfig, H: np.ndarray, filters: FilterSet,
                    per_trial: bool = False):
    """
    Approximate conditional mean capacity ``sum log2(1 + mu1/mu2)``.

    Uses the conditional moments of the SINR numerator and denominator
    given the estimates H (see :mod:`robust_ic.approx`).
    """
    from .approx import moments_all

    S, T = covariances(H, filters.V, config.P)
    mu1, mu2 = moments_all(S, T, filters.U, config)
    mask = config.stream_mask()
    ratio = np.where(mask, mu1 / np.where(mask, mu2, 1.0), 0.0)
    if np.any(~np.isfinite(ratio)):
        raise NumericFailure("non-finite approximate mean SINR")
    out = np.sum(np.log2(1.0 + ratio), axis=(-2, -1))
    return out if per_trial or out.ndim else float(out)


def leakage_terms(G: np.ndarray, filters: FilterSet, config: NetworkConfig) -> np.ndarray:
    """
    Share of each receive filter's output power that is interference.

    Per stream ``u^H (B - b b^H) u / u^H (B + N0 I) u`` with the true-channel
    covariances B (all streams) and ``b b^H`` (desired stream).
    """
    desired, total, unorm2, mask = _sinr_parts(G, filters.V, filters.U, config.P,
                                               config.N0, filters.D)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (total - desired) / (total + config.N0 * unorm2)
    return np.where(mask, out, 0.0)


def leakage_fraction(G: np.ndarray, filters: FilterSet, config: NetworkConfig):
    """Sum over all streams of :func:`leakage_terms`."""
    out = np.sum(leakage_terms(G, filters, config), axis=(-2, -1))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MetricRecord:
    """SINRs (true and estimated CSI), rates and leakage of one filter design."""

    sinr_true: np.ndarray
    sinr_est: np.ndarray
    rate: np.ndarray
    sum_rate: float
    leakage_fraction: float


def evaluate_metrics(config: NetworkConfig, channels: ChannelSet,
                     filters: FilterSet) -> MetricRecord:
    """
    Evaluate a single design; rates use the estimated-CSI SINR.
    """
    s_true = sinr_all(channels.G, filters, config.P, config.N0)
    s_est = sinr_all(channels.H, filters, config.P, config.N0)
    if not (np.all(np.isfinite(s_true)) and np.all(np.isfinite(s_est))):
        raise NumericFailure("non-finite SINR")
    rate = stream_rates(s_est)
    return MetricRecord(sinr_true=s_true, sinr_est=s_est, rate=rate,
                        sum_rate=float(rate.sum()),
                        leakage_fraction=float(leakage_fraction(channels.G, filters, config)))
