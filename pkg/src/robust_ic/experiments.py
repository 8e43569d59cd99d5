"""
Seeded Monte Carlo harness: sum-rate sweeps, SINR-variance tables,
approximation accuracy and convergence traces.

Every (SNR point, channel, error draw) trial owns a random stream keyed by
``(master_seed, snr_index, channel_index, error_index, role)``, so results
do not depend on the order trials are executed in or on how the work is
split across processes. All trials of one SNR point are solved as a single
batch.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidArgument, NumericFailure
from .model import (CONVENTIONS, ChannelSet, FilterSet, NetworkConfig, RngStream,
                    init_filters, sample_gaussian_matrix)
from .sinr import approx_capacity, sinr_all
from .solvers import VM_FORMS, SolverKind, solve_batch

log = logging.getLogger(__name__)

__all__ = [
    "Scenario",
    "ResultRow",
    "ExperimentResult",
    "ConvergenceResult",
    "PRESETS",
    "preset",
    "STATISTICS",
    "draw_point",
    "run_sum_rate_sweep",
    "run_variance_table",
    "run_approx_accuracy",
    "run_convergence",
    "format_value",
]

STATISTICS = ("avg_sum_rate", "avg_sinr_variance", "approx_capacity",
              "numerical_capacity", "pct_error", "leakage_fraction")

LONG_HEADER = ("scenario", "algorithm", "snr_db", "statistic", "value", "trials")
APPROX_HEADER = ("snr_db", "sigma2", "theoretical", "numerical", "pct_error")
TRACE_HEADER = ("scenario", "algorithm", "iteration", "leakage_fraction")

# stream roles inside a trial
ROLE_CHANNEL, ROLE_ERROR, ROLE_INIT = 0, 1, 2

EVAL_CHANNELS = ("true", "estimate")


def format_value(x: float) -> str:
    """Nine significant digits, the CSV float format."""
    return f"{float(x):.9g}"


@dataclass(frozen=True)
class Scenario:
    """
    One simulated network plus the Monte Carlo protocol around it.

    Parameters
    ----------
    label : str
        Name written to the ``scenario`` CSV column.
    config : NetworkConfig
        Network; its ``P`` is overwritten per SNR point and ``sigma2`` is
        the CSI error variance.
    snr_grid_db : tuple of float
        SNR points, ``P = N0 * 10**(dB/10)``.
    channels_per_point, errors_per_channel : int
        Channels drawn per SNR point and error draws per channel.
    iterations : int
        Alternating iterations per design.
    master_seed : int
    convention : {"true", "independent"}
        ``"true"``: the true channel G is drawn per channel and every error
        draw gives ``H = G - E``. ``"independent"``: H is drawn per channel
        and ``G = H + E``.
    rate_channel : {"true", "estimate"}
        Channels the sum-rate SINRs are evaluated on.
    variance_channel : {"true", "estimate"}
        Channels the SINRs of the variance table are evaluated on.
    vm_form : str
        VM coefficient form, see :data:`robust_ic.solvers.VM_FORMS`.
    """

    label: str
    config: NetworkConfig
    snr_grid_db: tuple = tuple(range(0, 25, 4))
    channels_per_point: int = 20
    errors_per_channel: int = 20
    iterations: int = 100
    master_seed: int = 0
    convention: str = "true"
    rate_channel: str = "true"
    variance_channel: str = "estimate"
    vm_form: str = "gradient"

    def __post_init__(self):
        object.__setattr__(self, "snr_grid_db", tuple(float(s) for s in self.snr_grid_db))
        if not self.snr_grid_db:
            raise InvalidArgument("snr_grid_db is empty")
        if not all(math.isfinite(s) for s in self.snr_grid_db):
            raise InvalidArgument("SNR values must be finite")
        if self.channels_per_point < 1 or self.errors_per_channel < 1:
            raise InvalidArgument("channels_per_point and errors_per_channel must be >= 1")
        if self.iterations < 1:
            raise InvalidArgument("iterations must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise InvalidArgument("master_seed must be a 64-bit unsigned integer")
        if self.convention not in CONVENTIONS:
            raise InvalidArgument(f"convention must be one of {CONVENTIONS}")
        for name in ("rate_channel", "variance_channel"):
            if getattr(self, name) not in EVAL_CHANNELS:
                raise InvalidArgument(f"{name} must be one of {EVAL_CHANNELS}")
        if self.vm_form not in VM_FORMS:
            raise InvalidArgument(f"vm_form must be one of {VM_FORMS}")
        if self.config.N0 != 1.0:
            raise InvalidArgument("scenarios fix N0 = 1; SNR is set through P")

    @property
    def sigma2(self) -> float:
        return self.config.sigma2

    @property
    def trials_per_point(self) -> int:
        return self.channels_per_point * self.errors_per_channel

    def replace(self, **changes) -> "Scenario":
        import dataclasses
        return dataclasses.replace(self, **changes)

    def with_sigma2(self, sigma2: float) -> "Scenario":
        return self.replace(config=self.config.replace(sigma2=sigma2))


PRESETS = {
    "3x3_1_4": NetworkConfig(K=4, M=3, N=3, D=1, sigma2=0.1),
    "4x4_2_3": NetworkConfig(K=3, M=4, N=4, D=2, sigma2=0.1),
    "10x10_5_3": NetworkConfig(K=3, M=10, N=10, D=5, sigma2=0.1),
    "6x8_4_2": NetworkConfig(K=2, M=6, N=8, D=4, sigma2=0.1),
}


def preset(name: str, **overrides) -> Scenario:
    """Scenario for one of the named networks in :data:`PRESETS`."""
    try:
        config = PRESETS[name]
    except KeyError:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return Scenario(label=config.label, config=config, **overrides)


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Results xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
@dataclass(frozen=True)
class ResultRow:
    scenario: str
    algorithm: str
    snr_db: float
    statistic: str
    value: float
    trials: int
    sigma2: float = float("nan")

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise InvalidArgument(f"unknown statistic {self.statistic!r}")
        if not math.isfinite(self.value):
            raise NumericFailure(f"non-finite {self.statistic} at {self.snr_db} dB")


@dataclass
class ExperimentResult:
    """Rows of ``(scenario, algorithm, snr_db, statistic, value, trials)``."""

    rows: list = field(default_factory=list)

    def extend(self, rows: Iterable[ResultRow]):
        self.rows.extend(rows)

    def select(self, algorithm=None, statistic=None, sigma2=None) -> list:
        out = []
        for r in self.rows:
            if algorithm is not None and r.algorithm != str(algorithm):
                continue
            if statistic is not None and r.statistic != statistic:
                continue
            if sigma2 is not None and not math.isclose(r.sigma2, sigma2):
                continue
            out.append(r)
        return out

    def series(self, algorithm, statistic, sigma2=None) -> tuple[np.ndarray, np.ndarray]:
        """``(snr_db, value)`` arrays sorted by SNR."""
        rows = sorted(self.select(algorithm, statistic, sigma2), key=lambda r: r.snr_db)
        return (np.array([r.snr_db for r in rows]), np.array([r.value for r in rows]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LONG_HEADER)
        for r in self.rows:
            w.writerow((r.scenario, r.algorithm, format_value(r.snr_db), r.statistic,
                        format_value(r.value), r.trials))
        return buf.getvalue()

    def to_approx_csv(self) -> str:
        """Wide table ``snr_db, sigma2, theoretical, numerical, pct_error``."""
        cells = {}
        for r in self.rows:
            cells.setdefault((r.sigma2, r.snr_db), {})[r.statistic] = r.value
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(APPROX_HEADER)
        for (s2, snr), stats in cells.items():
            if not {"approx_capacity", "numerical_capacity", "pct_error"} <= stats.keys():
                continue
            w.writerow((format_value(snr), format_value(s2),
                        format_value(stats["approx_capacity"]),
                        format_value(stats["numerical_capacity"]),
                        format_value(stats["pct_error"])))
        return buf.getvalue()

    def write(self, path, wide: bool = False) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_approx_csv() if wide else self.to_csv(), encoding="utf-8")
        return path


@dataclass
class ConvergenceResult:
    """Averaged leakage-fraction traces, one per (scenario, algorithm)."""

    traces: dict = field(default_factory=dict)     # (label, algorithm) -> ndarray
    trials: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for (label, alg), trace in self.traces.items():
            for i, v in enumerate(trace):
                w.writerow((label, alg, i, format_value(v)))
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Trial sampling xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def draw_point(scenario: Scenario, snr_index: int,
               config: NetworkConfig | None = None) -> tuple[ChannelSet, FilterSet]:
    """
    Channels and initial filters for every trial of one SNR point.

    Returns arrays with batch shape ``(channels_per_point, errors_per_channel)``.
    Each trial's draws come from its own keyed stream.
    """
    cfg = config or scenario.config
    K, M, N = cfg.K, cfg.M, cfg.N
    C, R = scenario.channels_per_point, scenario.errors_per_channel
    base = RngStream(scenario.master_seed, (snr_index,))
    first = np.empty((C, 1, K, K, N, M), dtype=complex)
    E = np.empty((C, R, K, K, N, M), dtype=complex)
    V = np.empty((C, R, K, M, cfg.dmax), dtype=complex)
    U = np.empty((C, R, K, N, cfg.dmax), dtype=complex)
    for c in range(C):
        first[c, 0] = sample_gaussian_matrix(N, M, 1.0, base.child(c, 0, ROLE_CHANNEL),
                                             batch=(K, K))
        for r in range(R):
            E[c, r] = sample_gaussian_matrix(N, M, cfg.sigma2, base.child(c, r, ROLE_ERROR),
                                             batch=(K, K))
            f = init_filters(cfg, base.child(c, r, ROLE_INIT))
            V[c, r], U[c, r] = f.V, f.U
    first = np.broadcast_to(first, E.shape)
    if scenario.convention == "true":
        channels = ChannelSet(H=first - E, E=E, G=first.copy())
    else:
        channels = ChannelSet(H=first.copy(), E=E, G=first + E)
    return channels, FilterSet(V, U, cfg.D)


def _design(scenario, cfg, kind, channels, start, trace=False):
    res = solve_batch(cfg, channels.H, kind, scenario.iterations, start,
                      G=channels.G if trace else None, trace=trace,
                      vm_form=scenario.vm_form)
    failed = res.failed.copy()
    if np.any(failed):
        log.warning("%s %s at %.3g dB: %d trial(s) excluded after solver failure",
                    scenario.label, kind, cfg.snr_db, int(failed.sum()))
    return res, failed


def _pick(channels: ChannelSet, which: str) -> np.ndarray:
    return channels.G if which == "true" else channels.H


def _map(fn, tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _kinds(kinds) -> list:
    out = [SolverKind.parse(k) for k in kinds]
    if not out:
        raise InvalidArgument("no algorithms requested")
    return out


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Experiments xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
def _sweep_point(task):
    scenario, i, kinds = task
    snr = scenario.snr_grid_db[i]
    cfg = scenario.config.with_snr_db(snr)
    channels, start = draw_point(scenario, i, cfg)
    rows = []
    for kind in kinds:
        res, failed = _design(scenario, cfg, kind, channels, start)
        s = sinr_all(_pick(channels, scenario.rate_channel), res.filters, cfg.P, cfg.N0)
        rate = np.sum(np.log2(1.0 + s), axis=(-2, -1))
        ok = ~failed & np.isfinite(rate)
        if not np.any(ok):
            raise NumericFailure(f"every trial failed for {kind} at {snr} dB")
        rows.append(ResultRow(scenario.label, str(kind), snr, "avg_sum_rate",
                              float(np.mean(rate[ok])), int(ok.sum()), scenario.sigma2))
    return rows


def run_sum_rate_sweep(scenario: Scenario, kinds: Sequence = ("EM", "MaxSINR"),
                       workers: int = 1) -> ExperimentResult:
    """
    Average sum rate versus SNR, one row per (algorithm, SNR).

    Filters are designed from each trial's estimated channels and the rate
    ``sum log2(1 + SINR)`` is evaluated on ``scenario.rate_channel``.
    """
    kinds = _kinds(kinds)
    tasks = [(scenario, i, kinds) for i in range(len(scenario.snr_grid_db))]
    out = ExperimentResult()
    for rows in _map(_sweep_point, tasks, workers):
        out.extend(rows)
    return out


def _variance_point(task):
    scenario, i, kinds = task
    snr = scenario.snr_grid_db[i]
    cfg = scenario.config.with_snr_db(snr)
    channels, start = draw_point(scenario, i, cfg)
    mask = cfg.stream_mask()
    rows = []
    for kind in kinds:
        res, failed = _design(scenario, cfg, kind, channels, start)
        s = sinr_all(_pick(channels, scenario.variance_channel), res.filters, cfg.P, cfg.N0)
        ok = ~failed & np.all(np.isfinite(s), axis=(-2, -1))       # (C, R)
        variances = []
        for c in range(scenario.channels_per_point):
            draws = s[c][ok[c]]                                      # (r, K, Dmax)
            if len(draws) < 2:
                continue
            variances.append(np.var(draws, axis=0, ddof=1)[mask])
        if not variances:
            raise NumericFailure(f"too few valid trials for {kind} at {snr} dB")
        rows.append(ResultRow(scenario.label, str(kind), snr, "avg_sinr_variance",
                              float(np.mean(np.concatenate(variances))), int(ok.sum()),
                              scenario.sigma2))
    return rows


def run_variance_table(scenario: Scenario, kinds: Sequence = ("MaxSINR", "EM", "VM"),
                       workers: int = 1) -> ExperimentResult:
    """
    Average SINR variance over error draws.

    For every channel the per-stream SINR variance (unbiased, across that
    channel's error draws) is computed, then averaged over channels and
    streams. SINRs are evaluated on ``scenario.variance_channel``.
    """
    kinds = _kinds(kinds)
    tasks = [(scenario, i, kinds) for i in range(len(scenario.snr_grid_db))]
    out = ExperimentResult()
    for rows in _map(_variance_point, tasks, workers):
        out.extend(rows)
    return out


def _approx_point(task):
    scenario, i = task
    snr = scenario.snr_grid_db[i]
    cfg = scenario.config.with_snr_db(snr)
    channels, start = draw_point(scenario, i, cfg)
    res, failed = _design(scenario, cfg, SolverKind.EM, channels, start)
    theory = approx_capacity(cfg, channels.H, res.filters, per_trial=True)
    s = sinr_all(channels.G, res.filters, cfg.P, cfg.N0)
    numeric = np.sum(np.log2(1.0 + s), axis=(-2, -1))
    ok = ~failed & np.isfinite(theory) & np.isfinite(numeric)
    if not np.any(ok):
        raise NumericFailure(f"every trial failed at {snr} dB")
    th, nu = float(np.mean(theory[ok])), float(np.mean(numeric[ok]))
    n = int(ok.sum())
    alg = str(SolverKind.EM)
    return [ResultRow(scenario.label, alg, snr, "approx_capacity", th, n, scenario.sigma2),
            ResultRow(scenario.label, alg, snr, "numerical_capacity", nu, n, scenario.sigma2),
            ResultRow(scenario.label, alg, snr, "pct_error", abs(th - nu) / nu * 100.0, n,
                      scenario.sigma2)]


def run_approx_accuracy(scenario: Scenario, sigma2_values: Sequence[float] | None = None,
                        workers: int = 1) -> ExperimentResult:
    """
    Accuracy of the approximate mean capacity for EM designs.

    Per SNR the theoretical value is the trial average of
    :func:`robust_ic.sinr.approx_capacity` (conditional moments given H) and
    the numerical value the trial average of ``sum log2(1 + SINR)`` on the
    true channels. ``pct_error = |theoretical - numerical| / numerical * 100``.
    """
    values = list(sigma2_values) if sigma2_values is not None else [scenario.sigma2]
    tasks = [(scenario.with_sigma2(s2), i)
             for s2 in values for i in range(len(scenario.snr_grid_db))]
    out = ExperimentResult()
    for rows in _map(_approx_point, tasks, workers):
        out.extend(rows)
    return out


def _trace_task(task):
    scenario, kind = task
    cfg = scenario.config.with_snr_db(scenario.snr_grid_db[0])
    channels, start = draw_point(scenario, 0, cfg)
    res, failed = _design(scenario, cfg, kind, channels, start, trace=True)
    leak = res.trace.leakage_fraction                               # (iters+1, C, R)
    ok = ~failed & np.all(np.isfinite(leak), axis=0)
    if not np.any(ok):
        raise NumericFailure(f"every trial failed for {kind} on {scenario.label}")
    return leak[:, ok].mean(axis=1), int(ok.sum())


def run_convergence(scenarios: Sequence[Scenario], kinds: Sequence = ("EM", "VM"),
                    workers: int = 1) -> ConvergenceResult:
    """
    Leakage fraction per iteration (0 = initial filters), averaged over trials.

    Each scenario runs at the first SNR of its grid; leakage is measured on
    the true channels.
    """
    kinds = _kinds(kinds)
    tasks = [(sc, k) for sc in scenarios for k in kinds]
    out = ConvergenceResult()
    for (sc, k), (trace, n) in zip(tasks, _map(_trace_task, tasks, workers)):
        out.traces[(sc.label, str(k))] = trace
        out.trials[(sc.label, str(k))] = n
    return out
