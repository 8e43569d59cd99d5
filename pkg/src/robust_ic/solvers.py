"""
Column update rules and the alternating original/reciprocal driver.

All three designs share one kernel: a receive column is the normalized
solution of ``(S + shift I) u = H^{kk} v_d^k``. They differ only in the
scalar shift:

* Max-SINR uses ``N0``;
* EM (expectation maximization of the SINR) uses
  ``Omega = P s2 sum(D) - P s2 (mu1 + mu2) / mu1 + N0``;
* VM (variance minimization of the SINR lower bound) uses
  ``Psi = beta / alpha`` built from the linearized variance.

Within a half-iteration every column of every receiver is updated from the
pre-update state (Jacobi order). Half-iterations alternate between the
original network and its reciprocal, where the receive filters just
computed act as precoders.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .approx import lb_forms, lb_forms_all, moments_all, MomentPair
from .covariance import covariances, desired_steering
from .exceptions import DegenerateStream, InvalidArgument, NumericFailure
from .model import (ChannelSet, FilterSet, NetworkConfig, RngLike, init_filters,
                    reciprocal_channels)
from .sinr import leakage_fraction, sinr_all

log = logging.getLogger(__name__)

__all__ = [
    "SolverKind",
    "SolverScalars",
    "VMCoefficients",
    "IterationTrace",
    "SolveResult",
    "em_omega",
    "em_update",
    "em_inner_fixed_point",
    "vm_coefficients",
    "vm_psi",
    "vm_update",
    "vm_inner_fixed_point",
    "max_sinr_update",
    "convergence_metric",
    "solver_scalars",
    "half_step",
    "solve_batch",
    "alternate_solve",
]

COND_LIMIT = 1e12
REG_SCALE = 1e-9
VM_ALPHA_TOL = 1e-12


class SolverKind(str, Enum):
    EM = "EM"
    VM = "VM"
    MAX_SINR = "MaxSINR"

    @classmethod
    def parse(cls, name) -> "SolverKind":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "")
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise InvalidArgument(f"unknown solver kind {name!r}")

    def __str__(self):
        return self.value


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Shared kernel xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def _solve_many(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        # at least one exactly singular system; solve one by one
        flatA = A.reshape((-1,) + A.shape[-2:])
        flatb = b.reshape((-1, b.shape[-1]))
        out = np.full(flatb.shape, np.nan, dtype=complex)
        for i in range(flatA.shape[0]):
            try:
                out[i] = np.linalg.solve(flatA[i], flatb[i])
            except np.linalg.LinAlgError:
                pass
        return out.reshape(b.shape)


def shifted_solve(S: np.ndarray, shift, steer: np.ndarray, stats: Counter | None = None):
    """
    Normalized solution of ``(S + shift I) x = steer`` with conditioning guard.

    ``S`` has shape ``(..., N, N)``, ``shift`` broadcasts against
    ``S.shape[:-2]`` and ``steer`` has shape ``(..., N)``. Systems whose
    condition number exceeds 1e12 get an extra ``1e-9 trace(S)/N`` on the
    diagonal. Returns the unit vectors and a boolean array flagging
    systems that still produced non-finite or zero solutions.
    """
    N = S.shape[-1]
    I = np.eye(N)
    shift = np.asarray(shift, dtype=float)
    A = S + shift[..., None, None] * I
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    bad = ~(cond <= COND_LIMIT)
    if np.any(bad):
        eps = REG_SCALE * np.trace(S, axis1=-2, axis2=-1).real / N
        A = np.where(bad[..., None, None], A + eps[..., None, None] * I, A)
        if stats is not None:
            stats["regularized"] += int(np.count_nonzero(bad))
        log.debug("regularized %d ill-conditioned systems", np.count_nonzero(bad))
    x = _solve_many(A, steer)
    norm = np.linalg.norm(x, axis=-1)
    failed = ~np.isfinite(norm) | (norm == 0)
    with np.errstate(all="ignore"):
        u = x / norm[..., None]
    return u, failed


def _columns(x: np.ndarray) -> np.ndarray:
    """(..., K, Dmax, N) -> (..., K, N, Dmax)."""
    return np.swapaxes(x, -1, -2)


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx EM xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def _omega(mu1, mu2, config: NetworkConfig):
    ps2 = config.P * config.sigma2
    with np.errstate(divide="ignore", invalid="ignore"):
        return ps2 * config.total_streams - ps2 * (mu1 + mu2) / mu1 + config.N0


def em_omega(moments: MomentPair, config: NetworkConfig) -> float:
    """
    Scalar shift of the EM column update.

    May be negative; the caller decides what to do with the shifted system.

    Raises
    ------
    DegenerateStream
        If ``mu1 <= 0``.
    """
    if not moments.mu1 > 0:
        raise DegenerateStream("mu1 must be positive to form the EM shift")
    return float(_omega(moments.mu1, moments.mu2, config))


def em_update(S: np.ndarray, steer: np.ndarray, omega: float) -> np.ndarray:
    """Unit vector along ``(S + omega I)^{-1} steer``."""
    if not np.any(steer):
        raise DegenerateStream("zero steering vector")
    u, failed = shifted_solve(S, omega, steer)
    if failed:
        raise NumericFailure("singular shifted system after regularization")
    return u


def em_inner_fixed_point(S: np.ndarray, T: np.ndarray, steer: np.ndarray,
                         u0: np.ndarray | None, config: NetworkConfig, tol: float = 1e-10,
                         max_iter: int = 10_000):
    """
    Iterate the EM shift and column update with S and T frozen.

    With ``u0=None`` the iteration is bootstrapped with ``Omega = N0``, i.e.
    from the Max-SINR column; every generalized eigenvector of the moment
    pair is a fixed point and this start reaches the dominant one.

    Returns ``(u, omega, iterations)`` once the shift changes by less than
    ``tol`` (relative to ``max(1, |omega|)``).
    """
    from .approx import conditional_moments

    u = em_update(S, steer, config.N0) if u0 is None else u0 / np.linalg.norm(u0)
    omega = em_omega(conditional_moments(0, 0, S, T, u, config), config)
    for it in range(1, max_iter + 1):
        u = em_update(S, steer, omega)
        new = em_omega(conditional_moments(0, 0, S, T, u, config), config)
        if abs(new - omega) < tol * max(1.0, abs(omega)):
            return u, new, it
        omega = new
    raise NumericFailure(f"EM inner iteration did not settle in {max_iter} steps")


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx VM xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
VM_FORMS = ("gradient", "printed")


@dataclass(frozen=True)
class VMCoefficients:
    """
    Forms and stationarity scalars of one column.

    ``scale = M N P^2 sigma2^2`` is the variance prefactor left out of
    ``alpha, beta, zeta``; when it is zero the variance vanishes for every
    column and the update is degenerate.
    """

    a: float
    b: float
    c: float
    alpha: float
    beta: float
    zeta: float
    scale: float = 1.0


def _vm_scalars(a, b, c, Dk, config: NetworkConfig, form: str):
    """
    Scalars of the stationarity condition ``alpha S u + beta u = zeta T u``.

    ``form="gradient"`` differentiates ``w^2 (a^2 + kappa b^2) / c^4`` with
    ``kappa = sum_{j != k} (D^j)^2``, which is exactly the linearized variance
    ``grad^T Cov grad``. ``form="printed"`` uses ``kappa = sum_j (D^j)^2`` and
    the all-user shift in ``beta`` as written in the closed-form expansion.
    """
    if form not in VM_FORMS:
        raise InvalidArgument(f"unknown VM coefficient form {form!r}")
    pmn = config.P * config.M * config.N * config.sigma2
    D = np.array(config.D, dtype=float)
    Dsum, D2sum = D.sum(), np.sum(D ** 2)
    if form == "gradient":
        kappa = D2sum - Dk ** 2
        gamma = pmn * (Dsum - Dk) + config.N0
    else:
        kappa = D2sum
        gamma = pmn * Dsum + config.N0
    eta = pmn * Dsum - pmn + config.N0
    sq = a ** 2 + kappa * b ** 2
    alpha = 2 * a * c - 4 * sq
    beta = 2 * sq * c + 2 * gamma * a * c - 2 * kappa * pmn * b * c - 4 * sq * eta
    zeta = -(2 * (Dk - 2) * a * c + 2 * kappa * b * c + 4 * sq)
    return alpha, beta, zeta


def vm_coefficients(k: int, S: np.ndarray, T: np.ndarray, u: np.ndarray,
                    config: NetworkConfig, form: str = "gradient") -> VMCoefficients:
    """
    Quadratic forms ``a, b, c`` and scalars ``alpha, beta, zeta`` of stream ``(k, .)``.

    ``u`` must have unit norm.
    """
    a, b, c, _ = lb_forms(k, S, T, u, config)
    alpha, beta, zeta = _vm_scalars(a, b, c, float(config.D[k]), config, form)
    scale = config.M * config.N * config.P ** 2 * config.sigma2 ** 2
    return VMCoefficients(a, b, c, float(alpha), float(beta), float(zeta), scale)


def vm_psi(coeffs: VMCoefficients) -> float | None:
    """``beta / alpha``, or None when ``alpha`` is numerically zero or sigma2 = 0."""
    if coeffs.scale == 0 or abs(coeffs.alpha) < VM_ALPHA_TOL * (abs(coeffs.beta) + 1.0):
        return None
    return coeffs.beta / coeffs.alpha


def vm_update(S: np.ndarray, steer: np.ndarray, psi: float | None,
              previous: np.ndarray | None = None) -> np.ndarray:
    """
    Unit vector along ``(S + psi I)^{-1} steer``.

    With ``psi=None`` (degenerate alpha) the previous column is returned
    unchanged.
    """
    if psi is None:
        if previous is None:
            raise DegenerateStream("degenerate VM scalars and no previous column")
        log.info("VM alpha degenerate; keeping previous column")
        return previous
    return em_update(S, steer, psi)


def vm_inner_fixed_point(k: int, S: np.ndarray, T: np.ndarray, steer: np.ndarray,
                         u0: np.ndarray, config: NetworkConfig, form: str = "gradient",
                         tol: float = 1e-12, max_iter: int = 10_000):
    """
    Iterate ``Psi = beta / alpha`` and the column update with S and T frozen.

    Returns ``(u, coefficients, iterations)`` once the column moves by less
    than ``tol`` (up to phase).
    """
    u = u0 / np.linalg.norm(u0)
    for it in range(1, max_iter + 1):
        coeffs = vm_coefficients(k, S, T, u, config, form)
        new = vm_update(S, steer, vm_psi(coeffs), previous=u)
        step = np.linalg.norm(new - np.exp(1j * np.angle(np.vdot(u, new))) * u)
        u = new
        if step < tol:
            return u, vm_coefficients(k, S, T, u, config, form), it
    raise NumericFailure(f"VM inner iteration did not settle in {max_iter} steps")


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Max-SINR xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def max_sinr_update(B: np.ndarray, steer: np.ndarray, N0: float,
                    exclude_desired: bool = False, P: float = 1.0) -> np.ndarray:
    """
    Max-SINR receive column.

    By default ``normalize((B + N0 I)^{-1} b)`` with B the covariance of all
    streams and ``b = steer``. With ``exclude_desired=True`` the
    interference-plus-noise form ``(B - P b b^H + N0 I)^{-1} b`` is used
    instead; both are collinear.
    """
    if exclude_desired:
        B = B - P * np.outer(steer, steer.conj())
    u, failed = shifted_solve(B, N0, steer)
    if failed:
        raise NumericFailure("singular Max-SINR system")
    return u


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Diagnostics xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def convergence_metric(H: np.ndarray, filters: FilterSet, config: NetworkConfig,
                       multipliers=None):
    """
    Lagrangian metric ``sum_k sum_d [u^H Q u + lambda (1 - u^H F u)]``.

    ``Q = T + P s2 I`` and ``F = S - T + (P s2 sum(D) - P s2 + N0) I``.
    By default each multiplier is ``u^H Q u`` at the current filters;
    pass a scalar or a ``(K, Dmax)`` array to fix them.
    """
    S, T = covariances(H, filters.V, config.P)
    mu1, mu2 = moments_all(S, T, filters.U, config)
    lam = mu1 if multipliers is None else np.asarray(multipliers, dtype=float)
    mask = config.stream_mask()
    terms = np.where(mask, mu1 + lam * (1.0 - mu2), 0.0)
    out = terms.sum(axis=(-2, -1))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SolverScalars:
    """Per-stream shifts and multipliers at a given state, arrays ``(..., K, Dmax)``."""

    omega: np.ndarray
    psi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray
    lam: np.ndarray


def solver_scalars(H: np.ndarray, filters: FilterSet, config: NetworkConfig,
                   form: str = "gradient") -> SolverScalars:
    S, T = covariances(H, filters.V, config.P)
    mu1, mu2 = moments_all(S, T, filters.U, config)
    a, b, c, _ = lb_forms_all(S, T, filters.U, config)
    Dk = np.array(config.D, dtype=float)[:, None]
    alpha, beta, zeta = _vm_scalars(a, b, c, Dk, config, form)
    with np.errstate(divide="ignore", invalid="ignore"):
        degenerate = (np.abs(alpha) < VM_ALPHA_TOL * (np.abs(beta) + 1.0)) | (config.sigma2 == 0)
        psi = np.where(degenerate, np.nan, beta / alpha)
    return SolverScalars(omega=_omega(mu1, mu2, config), psi=psi, alpha=alpha,
                         beta=beta, zeta=zeta, lam=mu1)


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Driver xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def half_step(H: np.ndarray, V: np.ndarray, U: np.ndarray, config: NetworkConfig,
              kind: SolverKind, stats: Counter | None = None, vm_form: str = "gradient"):
    """
    Update every receive column of one network (batched, Jacobi order).

    Returns the new ``U`` and a boolean array over the batch dimensions
    flagging trials where a shifted system stayed singular. Columns that
    are degenerate or failed keep their previous value.
    """
    if stats is None:
        stats = Counter()
    S, T = covariances(H, V, config.P)
    steer = desired_steering(H, V)                     # (..., K, N, Dmax)
    mask = config.stream_mask()
    keep = np.zeros(U.shape[:-2] + U.shape[-1:], dtype=bool)   # (..., K, Dmax)
    if kind is SolverKind.MAX_SINR:
        shift = np.full(keep.shape, config.N0)
    elif kind is SolverKind.EM:
        mu1, mu2 = moments_all(S, T, U, config)
        shift = _omega(mu1, mu2, config)
        degenerate = mask & ~(mu1 > 0)
        keep |= degenerate
        stats["degenerate"] += int(np.count_nonzero(degenerate))
    elif kind is SolverKind.VM:
        a, b, c, _ = lb_forms_all(S, T, U, config)
        Dk = np.array(config.D, dtype=float)[:, None]
        alpha, beta, _ = _vm_scalars(a, b, c, Dk, config, vm_form)
        # sigma2 = 0: the variance is zero for every column, nothing to improve
        degenerate = mask & ((np.abs(alpha) < VM_ALPHA_TOL * (np.abs(beta) + 1.0))
                             | (config.sigma2 == 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = beta / alpha
        keep |= degenerate
        stats["degenerate"] += int(np.count_nonzero(degenerate))
    else:  # pragma: no cover
        raise InvalidArgument(f"unknown solver kind {kind!r}")
    shift = np.where(keep | ~mask, 0.0, shift)
    Sk = np.broadcast_to(S[..., :, None, :, :], keep.shape + S.shape[-2:])
    x, failed = shifted_solve(Sk, shift, np.swapaxes(steer, -1, -2), stats)
    failed &= mask & ~keep
    stats["failed"] += int(np.count_nonzero(failed))
    keep |= failed | ~mask
    U_new = np.where(keep[..., None, :], U, _columns(x))
    trial_failed = np.any(failed, axis=(-2, -1))
    return U_new, trial_failed


@dataclass
class IterationTrace:
    """
    Per-iteration diagnostics of a solve, index 0 being the initial state.

    Arrays have shape ``(iterations + 1, *batch)`` (``approx_mean`` adds
    ``(K, Dmax)``).
    """

    iteration: np.ndarray
    leakage_fraction: np.ndarray
    metric: np.ndarray
    sum_rate: np.ndarray
    approx_mean: np.ndarray
    events: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.iteration)

    @property
    def metric_nondecreasing(self) -> np.ndarray:
        """Soft diagnostic: metric never drops by more than 1e-8 relative."""
        m = self.metric
        drop = m[1:] - m[:-1]
        return np.all(drop >= -1e-8 * np.abs(m[:-1]), axis=0)


def _trace_point(H, G, filters, config):
    S, T = covariances(H, filters.V, config.P)
    mu1, mu2 = moments_all(S, T, filters.U, config)
    mask = config.stream_mask()
    with np.errstate(divide="ignore", invalid="ignore"):
        approx = np.where(mask, mu1 / np.where(mask, mu2, 1.0), 0.0)
    s_est = sinr_all(H, filters, config.P, config.N0)
    rate = np.sum(np.log2(1.0 + s_est), axis=(-2, -1))
    lam = mu1
    metric = np.sum(np.where(mask, mu1 + lam * (1.0 - mu2), 0.0), axis=(-2, -1))
    leak = leakage_fraction(G, filters, config) if G is not None else np.nan
    return leak, metric, rate, approx


@dataclass
class SolveResult:
    filters: FilterSet
    failed: np.ndarray
    trace: IterationTrace | None
    history: list | None = None


def solve_batch(config: NetworkConfig, H: np.ndarray, kind, iterations: int,
                start: FilterSet, G: np.ndarray | None = None, trace: bool = False,
                keep_history: bool = False, vm_form: str = "gradient") -> SolveResult:
    """
    Alternating design on a batch of estimated channels.

    Each iteration updates all receive filters of the original network,
    hands them to the reciprocal network as precoders, updates the
    reciprocal receive filters and takes those as the new precoders.

    Parameters
    ----------
    H : ndarray, shape (..., K, K, N, M)
        Estimated channels the filters are designed from.
    kind : SolverKind or str
    iterations : int
        Number of full (original + reciprocal) iterations.
    start : FilterSet
        Initial filters, broadcastable to the batch.
    G : ndarray, optional
        True channels, only used for the leakage trace.
    trace : bool
        Record :class:`IterationTrace` diagnostics.
    keep_history : bool
        Keep the FilterSet after every iteration (index 0 = start).
    """
    kind = SolverKind.parse(kind)
    if iterations < 1:
        raise InvalidArgument("iterations must be >= 1")
    batch = H.shape[:-4]
    stats: Counter = Counter()
    V = np.broadcast_to(start.V, batch + start.V.shape[-3:]).copy()
    U = np.broadcast_to(start.U, batch + start.U.shape[-3:]).copy()
    Hr = reciprocal_channels(H)
    rconfig = config.reciprocal()
    failed = np.zeros(batch, dtype=bool)
    points = []
    history = [FilterSet(V, U, config.D)] if keep_history else None
    if trace:
        points.append(_trace_point(H, G, FilterSet(V, U, config.D), config))
    for _ in range(iterations):
        U, f1 = half_step(H, V, U, config, kind, stats, vm_form)
        Vr, f2 = half_step(Hr, U, V, rconfig, kind, stats, vm_form)
        V = Vr
        failed |= f1 | f2
        current = FilterSet(V, U, config.D)
        if trace:
            points.append(_trace_point(H, G, current, config))
        if keep_history:
            history.append(current)
    if stats:
        log.info("%s solve events: %s", kind, dict(stats))
    tr = None
    if trace:
        leak, metric, rate, approx = (np.array(x) for x in zip(*points))
        tr = IterationTrace(iteration=np.arange(iterations + 1), leakage_fraction=leak,
                            metric=metric, sum_rate=rate, approx_mean=approx, events=stats)
    return SolveResult(FilterSet(V, U, config.D), failed, tr, history)


def alternate_solve(config: NetworkConfig, channels: ChannelSet, kind, iterations: int = 100,
                    rng: RngLike | None = None, start: FilterSet | None = None,
                    vm_form: str = "gradient") -> tuple[FilterSet, IterationTrace]:
    """
    Design filters for one network from its estimated channels.

    Starts from :func:`init_filters` drawn from ``rng`` (or from ``start``)
    and runs ``iterations`` alternating iterations.

    Returns
    -------
    filters : FilterSet
    trace : IterationTrace
        Leakage (true channels), metric, estimated-CSI sum rate and the
        approximate mean SINRs, for the initial state and every iteration.
    """
    if start is None:
        if rng is None:
            raise InvalidArgument("either rng or start is required")
        start = init_filters(config, rng, batch=channels.H.shape[:-4])
    res = solve_batch(config, channels.H, kind, iterations, start, G=channels.G,
                      trace=True, vm_form=vm_form)
    if np.any(res.failed):
        log.warning("%d trial(s) hit a singular system", int(np.count_nonzero(res.failed)))
    return res.filters, res.trace
