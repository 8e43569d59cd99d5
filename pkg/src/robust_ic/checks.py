"""
Invariant checks run by ``robust-ic selftest``.

Each check draws its own random instances from a fixed stream and returns
a :class:`CheckResult`; none of them raise on a failed comparison.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .approx import lb_gradient
from .covariance import (covariances, desired_steering,
                         estimate_received_autocorrelation)
from .model import (FilterSet, NetworkConfig, RngStream, init_filters, sample_gaussian_matrix,
                    sample_network)
from .sinr import sinr_lower_bound
from .solvers import max_sinr_update, solve_batch

__all__ = ["CheckResult", "phase_aligned_distance", "check_sigma0_equivalence",
           "check_gradient", "check_searle", "check_autocorrelation",
           "check_error_norm_moments", "run_all"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: worst {self.worst:.3g} "
                f"(tol {self.tolerance:.3g}, {self.seconds:.1f}s)")


def phase_aligned_distance(a: np.ndarray, b: np.ndarray, axis: int = -2) -> np.ndarray:
    """``min_phi ||a - exp(i phi) b||`` along ``axis`` (column vectors by default)."""
    inner = np.sum(np.conj(b) * a, axis=axis, keepdims=True)
    phase = np.exp(1j * np.angle(inner))
    return np.linalg.norm(a - phase * b, axis=axis)


def _instance(config: NetworkConfig, stream: RngStream):
    ch = sample_network(config, stream.child(0))
    f = init_filters(config, stream.child(1))
    return ch, f


def check_sigma0_equivalence(instances: int = 50, iterations: int = 100, seed: int = 1,
                             tol: float = 1e-9) -> CheckResult:
    """EM and Max-SINR iterates coincide column-wise (up to phase) when sigma2 = 0."""
    t0 = time.perf_counter()
    cfg = NetworkConfig(K=4, M=3, N=3, D=1, sigma2=0.0).with_snr_db(20.0)
    base = RngStream(seed, (1,))
    H = np.stack([sample_network(cfg, base.child(i, 0)).H for i in range(instances)])
    starts = [init_filters(cfg, base.child(i, 1)) for i in range(instances)]
    start = FilterSet(np.stack([s.V for s in starts]), np.stack([s.U for s in starts]), cfg.D)
    em = solve_batch(cfg, H, "EM", iterations, start, keep_history=True).history
    ms = solve_batch(cfg, H, "MaxSINR", iterations, start, keep_history=True).history
    worst = 0.0
    for a, b in zip(em, ms):
        worst = max(worst, float(phase_aligned_distance(a.U, b.U).max()),
                    float(phase_aligned_distance(a.V, b.V).max()))
    return CheckResult("sigma2=0 EM/Max-SINR equivalence", worst <= tol, worst, tol,
                       time.perf_counter() - t0)


def fd_lower_bound_gradient(k: int, d: int, H, filters: FilterSet, config: NetworkConfig,
                            rel_step: float = 1e-5) -> np.ndarray:
    """Central differences of the error-norm lower bound at the mean norms."""
    theta = np.full(config.K, config.M * config.N * config.sigma2)
    out = np.empty(config.K)
    for j in range(config.K):
        h = rel_step * theta[j]
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (sinr_lower_bound(k, d, H, filters, up, config.P, config.N0)
                  - sinr_lower_bound(k, d, H, filters, dn, config.P, config.N0)) / (2 * h)
    return out


def check_gradient(instances: int = 100, seed: int = 2, tol: float = 1e-4) -> CheckResult:
    """Analytic lower-bound gradient against central finite differences."""
    t0 = time.perf_counter()
    base = RngStream(seed, (2,))
    worst = 0.0
    for i in range(instances):
        gen = base.child(i).generator()
        cfg = NetworkConfig(K=int(gen.integers(2, 5)), M=3, N=3, D=1,
                            sigma2=float(gen.uniform(0.01, 0.2))).with_snr_db(
                                float(gen.uniform(0, 20)))
        ch, f = _instance(cfg, base.child(i, 1))
        k = int(gen.integers(cfg.K))
        S, T = covariances(ch.H, f.V, cfg.P)
        g = lb_gradient(k, 0, S[k], T[k, 0], f.U[k, :, 0], cfg)
        fd = fd_lower_bound_gradient(k, 0, ch.H, f, cfg)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-300)
        worst = max(worst, float(rel.max()))
    return CheckResult("lower-bound gradient vs finite differences", worst <= tol, worst, tol,
                       time.perf_counter() - t0)


def check_searle(instances: int = 100, seed: int = 3, tol: float = 1e-10) -> CheckResult:
    """Both Max-SINR filter forms are collinear."""
    t0 = time.perf_counter()
    base = RngStream(seed, (3,))
    worst = 0.0
    for i in range(instances):
        cfg = NetworkConfig(K=4, M=3, N=3, D=1).with_snr_db(10.0)
        ch, f = _instance(cfg, base.child(i))
        S, _ = covariances(ch.H, f.V, cfg.P)
        steer = desired_steering(ch.H, f.V)
        for k in range(cfg.K):
            u1 = max_sinr_update(S[k], steer[k, :, 0], cfg.N0)
            u2 = max_sinr_update(S[k], steer[k, :, 0], cfg.N0, exclude_desired=True, P=cfg.P)
            worst = max(worst, 1.0 - abs(np.vdot(u1, u2)))
    return CheckResult("Max-SINR filter forms collinear", worst <= tol, worst, tol,
                       time.perf_counter() - t0)


def check_autocorrelation(samples: int = 100_000, seed: int = 4,
                          tol: float = 0.02) -> CheckResult:
    """Empirical received autocorrelation against its closed form."""
    t0 = time.perf_counter()
    cfg = NetworkConfig(K=4, M=3, N=3, D=1, sigma2=0.1).with_snr_db(10.0)
    base = RngStream(seed, (4,))
    ch, f = _instance(cfg, base.child(0))
    worst = 0.0
    for k in range(cfg.K):
        R = estimate_received_autocorrelation(k, ch, f, cfg, samples, base.child(1, k))
        S, _ = covariances(ch.H, f.V, cfg.P)
        ref = S[k] + (cfg.P * cfg.sigma2 * cfg.total_streams + cfg.N0) * np.eye(cfg.N)
        worst = max(worst, float(np.linalg.norm(R - ref) / np.linalg.norm(ref)))
    return CheckResult("received autocorrelation identity", worst <= tol, worst, tol,
                       time.perf_counter() - t0)


def check_error_norm_moments(samples: int = 100_000, seed: int = 5, mean_tol: float = 0.02,
                             var_tol: float = 0.10) -> CheckResult:
    """Squared error norms have mean ``M N sigma2`` and variance ``M N sigma2^2``."""
    t0 = time.perf_counter()
    cfg = NetworkConfig(K=3, M=2, N=4, D=1, sigma2=0.3)
    gen = RngStream(seed, (5,)).generator()
    E = sample_gaussian_matrix(cfg.N, cfg.M, cfg.sigma2, gen, batch=(samples, cfg.K))
    e = np.sum(np.abs(E) ** 2, axis=(-2, -1))
    mn = cfg.M * cfg.N
    mean_err = float(np.max(np.abs(e.mean(axis=0) / (mn * cfg.sigma2) - 1)))
    var_err = float(np.max(np.abs(e.var(axis=0, ddof=1) / (mn * cfg.sigma2 ** 2) - 1)))
    passed = mean_err <= mean_tol and var_err <= var_tol
    return CheckResult("error-norm chi-square moments", passed,
                       max(mean_err / mean_tol, var_err / var_tol), 1.0,
                       time.perf_counter() - t0)


def run_all() -> list:
    return [check_sigma0_equivalence(), check_gradient(), check_searle(),
            check_autocorrelation(), check_error_norm_moments()]
