"""
Command-line front end.

Configuration files are plain ``key = value`` text. Several pairs may share
a line (``K=4 M=3 N=3 D=1``), ``#`` starts a comment and ``[name]`` opens a
scenario section. Keys outside any section apply to every section. Command
line flags override file values, which override the built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import checks
from .exceptions import ConfigError, InvalidArgument, RobustICError
from .experiments import (PRESETS, Scenario, run_approx_accuracy, run_convergence,
                          run_sum_rate_sweep, run_variance_table)
from .model import CONVENTIONS, NetworkConfig
from .solvers import VM_FORMS, SolverKind

log = logging.getLogger(__name__)

OUT_ENV = "ROBUST_IC_OUT"
DEFAULT_OUT = "results"
DEFAULT_PRESET = "3x3_1_4"

TABLE_GRID = (2, 5, 8, 12, 14, 16, 18, 20, 22, 24)
DEFAULT_GRIDS = {
    "sweep": tuple(range(0, 25, 4)),
    "variance-table": TABLE_GRID,
    "approx": tuple(range(0, 25, 2)),
    "converge": (10,),
}
DEFAULT_SIGMA2_APPROX = (0.05, 0.1)
DEFAULT_ALGORITHMS = {
    "sweep": ("EM", "MaxSINR", "VM"),
    "variance-table": ("MaxSINR", "EM", "VM"),
    "approx": ("EM",),
    "converge": ("EM", "VM"),
}
OUTPUT_NAMES = {
    "sweep": "sweep.csv",
    "variance-table": "variance_table.csv",
    "approx": "approx.csv",
    "converge": "convergence.csv",
}


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x)


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _algorithms(text):
    return tuple(str(SolverKind.parse(x)) for x in text.split(",") if x)


# key -> parser; every flag has an entry here
KEYS = {
    "scenario": _choice(tuple(PRESETS)),
    "label": str,
    "K": int,
    "M": int,
    "N": int,
    "D": _ints,
    "sigma2": _floats,
    "snr": _floats,
    "channels": int,
    "errors": int,
    "trials": int,
    "iterations": int,
    "seed": int,
    "convention": _choice(CONVENTIONS),
    "rate_channel": _choice(("true", "estimate")),
    "variance_channel": _choice(("true", "estimate")),
    "vm_form": _choice(VM_FORMS),
    "algorithms": _algorithms,
    "workers": int,
    "out": str,
}
ALIASES = {"iters": "iterations", "preset": "scenario", "algorithm": "algorithms",
           "k": "K", "m": "M", "n": "N", "d": "D"}

_SECTION = re.compile(r"^\[\s*([^\]\s][^\]]*?)\s*\]$")


@dataclass
class Setting:
    value: object
    where: str          # "line 3" or "--flag"


@dataclass
class Section:
    name: str | None
    settings: dict = field(default_factory=dict)


def _fail(where: str, key: str, message: str):
    raise ConfigError(f"{where}, key '{key}': {message}")


def parse_value(key: str, raw: str, where: str) -> tuple[str, Setting]:
    name = ALIASES.get(key, key)
    if name not in KEYS:
        _fail(where, key, "unknown key")
    try:
        value = KEYS[name](raw)
    except (ValueError, InvalidArgument) as exc:
        _fail(where, key, f"bad value {raw!r} ({exc})")
    return name, Setting(value, where)


def parse_document(text: str) -> list:
    """
    Split a configuration document into sections of parsed settings.

    Returns a list of :class:`Section`; the first has ``name=None`` and
    holds the keys given before any section header.
    """
    sections = [Section(None)]
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"line {lineno}"
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            sections.append(Section(m.group(1)))
            continue
        line = re.sub(r"\s*=\s*", "=", line)
        line = re.sub(r"\s*,\s*", ",", line)
        for token in line.split():
            key, sep, raw = token.partition("=")
            if not sep or not key or not raw or "=" in raw:
                raise ConfigError(f"{where}: malformed entry {token!r}, expected key=value")
            name, setting = parse_value(key, raw, where)
            if name in sections[-1].settings:
                _fail(where, key, f"duplicate key (first set on {sections[-1].settings[name].where})")
            sections[-1].settings[name] = setting
    return sections


def _resolve(sections: list) -> list:
    """Merge the global section into each named one."""
    base, named = sections[0], sections[1:]
    if not named:
        return [base]
    return [Section(s.name, {**base.settings, **s.settings}) for s in named]


def build_scenario(settings: dict, command: str = "sweep") -> Scenario:
    """
    Validated Scenario from merged settings.

    Omitted network keys come from the preset (``scenario`` key, default
    ``3x3_1_4``); omitted protocol keys take the harness defaults (20
    channels, 20 error draws, 100 iterations, N0 = 1).
    """
    def get(key, default=None):
        s = settings.get(key)
        return default if s is None else s.value

    def where(key):
        s = settings.get(key)
        return s.where if s is not None else "defaults"

    base = PRESETS[get("scenario", DEFAULT_PRESET)]
    K, M, N = get("K", base.K), get("M", base.M), get("N", base.N)
    for key, val in (("K", K), ("M", M), ("N", N)):
        if val < 1:
            _fail(where(key), key, f"must be >= 1, got {val}")
    D = get("D", None)
    if D is None:
        D = base.D if base.K == K else (base.D[0],) * K
    if len(D) == 1:
        D = D * K
    if len(D) != K:
        _fail(where("D"), "D", f"{len(D)} stream counts given for K={K} users")
    for d in D:
        if not 1 <= d <= min(M, N):
            _fail(where("D"), "D", f"{d} streams infeasible with M={M}, N={N} "
                                   f"(need 1 <= D <= {min(M, N)})")
    sigma2 = get("sigma2", (base.sigma2,))
    if command != "approx" and len(sigma2) != 1:
        _fail(where("sigma2"), "sigma2", "a list of values is only accepted by 'approx'")
    if any(s < 0 for s in sigma2):
        _fail(where("sigma2"), "sigma2", "must be >= 0")
    config = NetworkConfig(K=K, M=M, N=N, D=tuple(D), sigma2=sigma2[0])

    for key in ("channels", "errors", "iterations"):
        if get(key, 1) < 1:
            _fail(where(key), key, "must be >= 1")
    if not 0 <= get("seed", 0) < 2 ** 64:
        _fail(where("seed"), "seed", "must be a 64-bit unsigned integer")
    errors = get("errors", 20)
    channels = get("channels", 20)
    trials = get("trials")
    if trials is not None:
        if trials < 1:
            _fail(where("trials"), "trials", "must be >= 1")
        errors = min(errors, trials)
        if trials % errors:
            _fail(where("trials"), "trials",
                  f"{trials} is not a multiple of errors per channel ({errors})")
        channels = trials // errors
    label = get("label", config.label)
    try:
        return Scenario(label=label, config=config,
                        snr_grid_db=get("snr", DEFAULT_GRIDS.get(command, DEFAULT_GRIDS["sweep"])),
                        channels_per_point=channels, errors_per_channel=errors,
                        iterations=get("iterations", 100), master_seed=get("seed", 0),
                        convention=get("convention", "true"),
                        rate_channel=get("rate_channel", "true"),
                        variance_channel=get("variance_channel", "estimate"),
                        vm_form=get("vm_form", "gradient"))
    except InvalidArgument as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None


def parse_config(text: str, command: str = "sweep") -> Scenario:
    """
    Parse a single-scenario configuration document.

    Raises
    ------
    ConfigError
        Malformed line, unknown key or infeasible parameters; the message
        names the line and key.
    """
    sections = _resolve(parse_document(text))
    if len(sections) != 1:
        raise ConfigError(f"document defines {len(sections)} scenarios; "
                          "use parse_scenarios for multi-section files")
    return build_scenario(sections[0].settings, command)


def parse_scenarios(text: str, command: str = "sweep") -> list:
    return [build_scenario(s.settings, command)
            for s in _resolve(parse_document(text))]


# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxx Dispatch xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
# xxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxxx
FLAG_KEYS = {"seed": "seed", "scenario": "scenario", "algorithms": "algorithms",
             "snr": "snr", "iters": "iterations", "trials": "trials",
             "workers": "workers", "out": "out"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robust-ic",
        description="Robust transceiver design experiments for MIMO interference channels.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("sweep", "average sum rate versus SNR"),
                       ("variance-table", "average SINR variance versus SNR"),
                       ("approx", "accuracy of the approximate mean capacity"),
                       ("converge", "leakage-fraction convergence traces"),
                       ("selftest", "run the invariant checks")):
        p = sub.add_parser(name, help=text)
        if name == "selftest":
            continue
        p.add_argument("--config", type=Path, help="key=value configuration file")
        p.add_argument("--seed", help="master seed (64-bit unsigned)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or '{DEFAULT_OUT}')")
        p.add_argument("--scenario", help="preset name: " + ", ".join(PRESETS)
                       + (" (comma list for converge)" if name == "converge" else ""))
        p.add_argument("--algorithms", help="comma list of EM, VM, MaxSINR")
        p.add_argument("--snr", help="comma list of SNR values in dB")
        p.add_argument("--iters", help="iterations per design")
        p.add_argument("--trials", help="trials per SNR point")
        p.add_argument("--workers", help="worker processes")
    return parser


def _flag_settings(args, skip=()) -> dict:
    out = {}
    for flag, key in FLAG_KEYS.items():
        raw = getattr(args, flag, None)
        if raw is None or flag in skip:
            continue
        name, setting = parse_value(key, str(raw), f"--{flag}")
        out[name] = setting
    return out


def _scenarios(args) -> tuple[list, dict]:
    command = args.command
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        sections = _resolve(parse_document(text))
    else:
        sections = [Section(None)]
    multi_preset = command == "converge" and args.scenario and "," in args.scenario
    flags = _flag_settings(args, skip=("scenario",) if multi_preset else ())
    if command == "converge" and args.config is None and not args.scenario:
        names = list(PRESETS)
    elif multi_preset:
        names = [x.strip() for x in args.scenario.split(",") if x.strip()]
    else:
        names = None
    if names is not None:
        for n in names:
            if n not in PRESETS:
                _fail("--scenario", "scenario", f"unknown preset {n!r}")
        sections = [Section(None, {**sections[0].settings,
                                   "scenario": Setting(n, "--scenario")})
                    for n in names]
    merged = [Section(s.name, {**s.settings, **flags}) for s in sections]
    if command != "converge" and len(merged) != 1:
        raise ConfigError(f"'{command}' takes one scenario, the configuration defines {len(merged)}")
    options = merged[0].settings
    scenarios = [build_scenario(s.settings, command) for s in merged]
    run = {
        "algorithms": options["algorithms"].value if "algorithms" in options
        else DEFAULT_ALGORITHMS[command],
        "workers": options["workers"].value if "workers" in options else 1,
        "out": Path(options["out"].value if "out" in options
                    else os.environ.get(OUT_ENV, DEFAULT_OUT)),
        "sigma2": (options["sigma2"].value if "sigma2" in options
                   else DEFAULT_SIGMA2_APPROX),
    }
    if run["workers"] < 1:
        _fail(options["workers"].where, "workers", "must be >= 1")
    return scenarios, run


def dispatch(args) -> int:
    """Run one parsed invocation; returns the process exit status."""
    if args.command == "selftest":
        results = checks.run_all()
        for r in results:
            print(r.line())
        failed = sum(not r.passed for r in results)
        print(f"{len(results) - failed} passed, {failed} failed")
        return 1 if failed else 0

    scenarios, run = _scenarios(args)
    command = args.command
    path = run["out"] / OUTPUT_NAMES[command]
    if command == "sweep":
        result = run_sum_rate_sweep(scenarios[0], run["algorithms"], workers=run["workers"])
        result.write(path)
    elif command == "variance-table":
        result = run_variance_table(scenarios[0], run["algorithms"], workers=run["workers"])
        result.write(path)
    elif command == "approx":
        if tuple(run["algorithms"]) != ("EM",):
            raise ConfigError("'approx' evaluates EM designs only")
        result = run_approx_accuracy(scenarios[0], run["sigma2"], workers=run["workers"])
        result.write(path, wide=True)
    else:
        result = run_convergence(scenarios, run["algorithms"], workers=run["workers"])
        result.write(path)
    print(path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RobustICError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
