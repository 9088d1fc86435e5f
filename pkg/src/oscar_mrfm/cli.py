"""Command-line interface.

    oscar-mrfm estimate
    oscar-mrfm simulate --delta0 0.5 --seed 3 --out runs/noisy
    oscar-mrfm interrupted --tau-p 8pi --tau-coll 2pi --seed 1
    oscar-mrfm operators-dump --n-osc 6

Parameters come from built-in defaults, then an optional INI file
(``--config``), then command-line flags; later sources win.  Every run writes
``manifest.json`` to the output directory, also when it fails.

Exit codes: 0 success, 2 bad configuration, 3 numerical-health failure,
4 empty crossing series.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import CrossingError, CrossingSeries
from .evolve import DEFAULT_SAMPLE_DTAU, EigensolverError, sample_noise
from .hilbert import BasisSpec, HamiltonianSpec, named_operators
from .params import EXPERIMENT, ModelParams, ParameterError, PhysicalParams, to_model, validate_adiabatic
from .protocols import (
    CollapsePolicy,
    PulseSequence,
    ScheduleConflict,
    invert_collapse_time,
    measure_reference_shift,
    realization_rng,
    run_interrupted_oscar,
    run_oscar,
)
from .quasiclassical import delta_omega0, estimate
from .states import TruncationError

log = logging.getLogger("oscar_mrfm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICS, EXIT_NO_CROSSINGS = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def parse_number(text: str) -> float:
    """Float, optionally as a multiple of pi: ``8pi``, ``8*pi``, ``pi/2``."""
    t = str(text).strip().lower().replace(" ", "")
    try:
        if "pi" not in t:
            return float(t)
        head, _, tail = t.partition("pi")
        head = head.rstrip("*")
        factor = float(head) if head else 1.0
        if tail:
            if not tail.startswith("/"):
                raise ValueError
            factor /= float(tail[1:])
        return factor * math.pi
    except ValueError:
        raise ValueError(f"not a number: {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    return v


def _choice(*options: str):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {text!r}")
        return text
    return parse


# (section, key) -> parser; the key doubles as the RunConfig field name
CONFIG_KEYS = {
    ("physical", "f_c"): parse_number,
    ("physical", "k_c"): parse_number,
    ("physical", "B1"): parse_number,
    ("physical", "G"): parse_number,
    ("physical", "X_m"): parse_number,
    ("physical", "T_K"): parse_number,
    ("physical", "gamma"): parse_number,
    ("model", "eps"): parse_number,
    ("model", "eta"): parse_number,
    ("model", "x0"): parse_number,
    ("model", "p0"): parse_number,
    ("model", "sense"): _choice("aligned", "anti_aligned"),
    ("noise", "delta0"): parse_number,
    ("noise", "realization"): int,
    ("protocol", "tau_p"): parse_number,
    ("protocol", "tau_coll"): parse_number,
    ("protocol", "duration"): parse_number,
    ("protocol", "pulses"): _positive_int,
    ("protocol", "collapse"): _choice("none", "fixed_interval"),
    ("protocol", "reference"): _choice("measured", "closed_form"),
    ("numerics", "n_osc"): _positive_int,
    ("numerics", "sample_dtau"): parse_number,
    ("numerics", "half_periods"): _positive_int,
    ("numerics", "seed"): _seed,
}


@dataclass
class RunConfig:
    command: str
    out: str = "."
    f_c: float = EXPERIMENT.f_c
    k_c: float = EXPERIMENT.k_c
    B1: float = EXPERIMENT.B1
    G: float = EXPERIMENT.G
    X_m: float = EXPERIMENT.X_m
    T_K: float = EXPERIMENT.T_K
    gamma: float = EXPERIMENT.gamma
    eps: float = 10.0
    eta: float = 0.3
    x0: float = 13.0
    p0: float = 0.0
    sense: str = "anti_aligned"
    delta0: float = 0.0
    realization: int = 0
    tau_p: float = 8 * math.pi
    tau_coll: float = 2 * math.pi
    duration: float = math.pi / 2
    pulses: int = 4
    collapse: str = "fixed_interval"
    reference: str = "measured"
    n_osc: int = 400
    sample_dtau: float = DEFAULT_SAMPLE_DTAU
    half_periods: int = 20
    seed: int = 0
    config_file: str | None = None
    sources: dict = field(default_factory=dict)

    def physical(self) -> PhysicalParams:
        return PhysicalParams(self.f_c, self.k_c, self.B1, self.G, self.X_m, self.T_K, self.gamma)

    def model(self) -> ModelParams:
        amplitude = math.hypot(self.x0, self.p0)
        if amplitude == 0:
            raise ConfigError("x0 and p0 set the CT amplitude and must not both be zero")
        return ModelParams(eps=self.eps, eta=self.eta, x_m=amplitude)

    def basis(self) -> BasisSpec:
        return BasisSpec(self.n_osc)

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("sources")
        return d


class _Repeatable(argparse.Action):
    """Collects every occurrence so repeated flags can be reported."""

    def __call__(self, parser, namespace, values, option_string=None):
        seen = list(getattr(namespace, self.dest) or [])
        seen.append(values)
        setattr(namespace, self.dest, seen)


def _flag_type(parse):
    def wrapped(text):
        try:
            return parse(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return wrapped


# flag -> (RunConfig field, parser)
FLAGS = {
    "--seed": ("seed", _seed),
    "--delta0": ("delta0", parse_number),
    "--n-osc": ("n_osc", _positive_int),
    "--half-periods": ("half_periods", _positive_int),
    "--tau-p": ("tau_p", parse_number),
    "--tau-coll": ("tau_coll", parse_number),
    "--sample-dtau": ("sample_dtau", parse_number),
    "--pulses": ("pulses", _positive_int),
    "--realization": ("realization", int),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with [physical] [model] [noise] [protocol] [numerics]")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true")
    for flag, (dest, parse) in FLAGS.items():
        common.add_argument(flag, dest=dest, action=_Repeatable, type=_flag_type(parse), default=None)

    parser = argparse.ArgumentParser(prog="oscar-mrfm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    sub.add_parser("estimate", parents=[common], help="closed-form estimates for the physical parameter set")
    sub.add_parser("simulate", parents=[common], help="full quantum OSCAR run with optional kick noise")
    sub.add_parser("interrupted", parents=[common], help="OSCAR with periodic pi/2 windows and collapses")
    sub.add_parser("operators-dump", parents=[common], help="write the basis operators as sparse CSV")
    return parser


def read_config_file(path: str) -> dict[str, object]:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case sensitive (B1, X_m)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    values: dict[str, object] = {}
    known_sections = {s for s, _ in CONFIG_KEYS}
    for section in cp.sections():
        if section not in known_sections:
            raise ConfigError(f"{path}: unknown section [{section}]; expected one of {sorted(known_sections)}")
        for key, raw in cp.items(section):
            parse = CONFIG_KEYS.get((section, key))
            if parse is None:
                allowed = sorted(k for s, k in CONFIG_KEYS if s == section)
                raise ConfigError(f"{path}: unknown key '{key}' in [{section}]; allowed: {', '.join(allowed)}")
            try:
                values[key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: [{section}] {key}: {exc}") from None
    return values


def parse_config(argv: list[str] | None = None) -> RunConfig:
    """Resolve flags over file over defaults."""
    ns = build_parser().parse_args(argv)
    cfg = RunConfig(command=ns.command)
    cfg.sources = {f.name: "default" for f in fields(RunConfig) if f.name not in ("command", "sources")}
    if ns.config:
        cfg.config_file = ns.config
        for key, value in read_config_file(ns.config).items():
            setattr(cfg, key, value)
            cfg.sources[key] = "file"
    for _, (dest, _) in FLAGS.items():
        seen = getattr(ns, dest)
        if not seen:
            continue
        if len(seen) > 1:
            log.warning("--%s given %d times; using the last value %s", dest.replace("_", "-"), len(seen), seen[-1])
        setattr(cfg, dest, seen[-1])
        cfg.sources[dest] = "flag"
    if ns.out is not None:
        cfg.out = ns.out
        cfg.sources["out"] = "flag"
    cfg.verbose = ns.verbose
    return cfg


# --- output helpers ---------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def _write_json(path: Path, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _crossings_or_empty(path: Path, c: CrossingSeries | None) -> None:
    if c is None or len(c) == 0:
        _write_csv(path, ["j", "tau_j", "dtau_j", "deviation_j", "shift_j"], [])
    else:
        c.to_csv(path)


# --- subcommands ------------------------------------------------------------

def cmd_estimate(cfg: RunConfig, out: Path, manifest: dict) -> int:
    p = cfg.physical()
    m = to_model(p)
    report = estimate(p)
    rows = [
        ("X0", m.X0, "m"),
        ("P0", m.P0, "N s"),
        ("eps", m.eps, "1"),
        ("eta", m.eta, "1"),
        ("x_m", m.x_m, "1"),
        *report.rows(),
    ]
    _write_csv(out / "estimate.csv", ["quantity", "value", "unit"], rows)
    for name, value, unit in rows:
        print(f"{name:28s} {value:.6g} {unit}")
    adiabatic = validate_adiabatic(m)
    manifest["results"] = {name: value for name, value, _ in rows}
    manifest["results"]["adiabatic_ratio"] = adiabatic.ratio
    manifest["outputs"] = ["estimate.csv"]
    return EXIT_OK


def _health(series) -> dict:
    d = series.diagnostics
    return {
        "max_norm_error": d["max_norm_error"],
        "max_top_band_population": d["max_top_band_population"],
        "truncation_warning": d["truncation_warning"],
        "segments": d["segments"],
        # width of the band |<S>| occupies below 1/2
        "min_spin_length": float(series.spin_length.min()),
    }


def cmd_simulate(cfg: RunConfig, out: Path, manifest: dict) -> int:
    m = cfg.model()
    tau_end = (cfg.half_periods + 1) * math.pi
    noise = None
    if cfg.delta0 > 0:
        noise = sample_noise(cfg.seed, cfg.delta0, m.tau_R, tau_end, rng=realization_rng(cfg.seed, cfg.realization))
    result = run_oscar(m, cfg.x0, cfg.p0, noise, cfg.half_periods, cfg.basis(), cfg.sample_dtau, cfg.sense)
    result.series.to_csv(out / "timeseries.csv")
    manifest["outputs"] = ["timeseries.csv", "crossings.csv", "fit.json"]
    manifest["health"] = _health(result.series)
    _crossings_or_empty(out / "crossings.csv", result.crossings)
    c = result.crossings
    fit = {
        "slope": result.fit.slope,
        "intercept": result.fit.intercept,
        "rms": result.fit.rms,
        "n": result.fit.n,
        "mean_deviation": float(np.mean(c.deviations)),
        "mean_shift": float(np.mean(result.shifts)),
        "delta_omega0_closed_form": delta_omega0(m),
        "kicks": 0 if noise is None else int(np.sum(noise.kick_times < tau_end)),
    }
    _write_json(out / "fit.json", fit)
    manifest["results"] = fit
    print(f"half-periods {len(c)}  mean deviation {fit['mean_deviation']:.6g}  slope {fit['slope']:.4g}")
    return EXIT_OK


def cmd_interrupted(cfg: RunConfig, out: Path, manifest: dict) -> int:
    m = cfg.model()
    basis = cfg.basis()
    if cfg.reference == "measured":
        reference, per_sense = measure_reference_shift(m, cfg.x0, cfg.p0, basis, cfg.sample_dtau)
    else:
        reference, per_sense = delta_omega0(m), {}
    seq = PulseSequence(cfg.tau_p, cfg.duration, cfg.pulses)
    policy = CollapsePolicy.none() if cfg.collapse == "none" else CollapsePolicy.fixed_interval(cfg.tau_coll)
    tau_end = cfg.pulses * cfg.tau_p + 2 * math.pi
    noise = None
    if cfg.delta0 > 0:
        noise = sample_noise(cfg.seed, cfg.delta0, m.tau_R, tau_end, rng=realization_rng(cfg.seed, cfg.realization))
    result = run_interrupted_oscar(
        m, seq, policy, tau_end, cfg.x0, cfg.p0, basis, cfg.sample_dtau,
        rng=realization_rng(cfg.seed, cfg.realization, 1), noise=noise,
        sense=cfg.sense, reference_shift=reference,
    )
    result.series.to_csv(out / "timeseries.csv")
    _crossings_or_empty(out / "crossings.csv", result.crossings)
    _write_csv(
        out / "pulses.csv", ["trigger", "start", "end", "p_aligned", "p_anti_aligned", "angle"],
        ([p.trigger, p.start, p.end, p.p_aligned, p.p_anti, p.angle] for p in result.pulses),
    )
    _write_csv(
        out / "collapses.csv", ["tau", "sense", "outcome", "p_aligned", "p_anti_aligned"],
        ([c["tau"], c["sense"], c["outcome"], c["p_aligned"], c["p_anti_aligned"]] for c in result.collapses),
    )
    summary = {
        "reference_shift": reference,
        "reference_shift_by_sense": per_sense,
        "delta_omega0_closed_form": delta_omega0(m),
        "mean_shift": result.mean_shift,
        "window": result.window,
        "pulse_offsets": result.offsets,
        "tau_coll_programmed": cfg.tau_coll if cfg.collapse != "none" else None,
        "tau_coll_inferred": (
            invert_collapse_time(result.mean_shift, reference, cfg.tau_p) if result.mean_shift is not None else None
        ),
    }
    _write_json(out / "summary.json", summary)
    manifest["outputs"] = ["timeseries.csv", "crossings.csv", "pulses.csv", "collapses.csv", "summary.json"]
    manifest["health"] = _health(result.series)
    manifest["results"] = summary
    if summary["tau_coll_inferred"] is not None:
        print(f"mean shift {result.mean_shift:.6g}  reference {reference:.6g}  "
              f"inferred tau_coll {summary['tau_coll_inferred']:.6g}")
    return EXIT_OK


def cmd_operators_dump(cfg: RunConfig, out: Path, manifest: dict) -> int:
    basis = cfg.basis()
    if basis.dim > 200:
        log.warning("dumping operators of dimension %d; pass --n-osc for a smaller basis", basis.dim)
    ops = named_operators(basis, HamiltonianSpec(cfg.eps, cfg.eta, cfg.delta0))
    rows = []
    for name, op in ops.items():
        for i, j in zip(*np.nonzero(op)):
            v = complex(op[i, j])
            rows.append((name, int(i), int(j), v.real, v.imag))
    _write_csv(out / "operators.csv", ["operator", "row", "col", "re", "im"], rows)
    manifest["outputs"] = ["operators.csv"]
    manifest["results"] = {"dim": basis.dim, "operators": list(ops)}
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "interrupted": cmd_interrupted,
    "operators-dump": cmd_operators_dump,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"oscar-mrfm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(cfg, "verbose", False):
        logging.getLogger().setLevel(logging.INFO)
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"oscar-mrfm: error: cannot create output directory {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = {
        "command": cfg.command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "sources": cfg.sources,
        "status": "running",
    }
    start = time.perf_counter()
    code = EXIT_OK
    try:
        code = COMMANDS[cfg.command](cfg, out, manifest)
        manifest["status"] = "ok"
    except (ConfigError, ParameterError, ScheduleConflict) as exc:
        code, manifest["status"], manifest["error"] = EXIT_CONFIG, "config_error", str(exc)
    except (TruncationError, EigensolverError) as exc:
        code, manifest["status"], manifest["error"] = EXIT_NUMERICS, "numerical_error", str(exc)
    except CrossingError as exc:
        code, manifest["status"], manifest["error"] = EXIT_NO_CROSSINGS, "no_crossings", str(exc)
        _crossings_or_empty(out / "crossings.csv", None)
    except OSError as exc:
        code, manifest["status"], manifest["error"] = EXIT_CONFIG, "io_error", f"{exc.filename}: {exc.strerror}"
    except Exception as exc:
        log.exception("unexpected failure")
        code, manifest["status"], manifest["error"] = 1, "error", repr(exc)
    finally:
        manifest["exit_code"] = code
        manifest["elapsed_s"] = round(time.perf_counter() - start, 3)
        _write_json(out / "manifest.json", manifest)
    if code != EXIT_OK:
        print(f"oscar-mrfm: {manifest['status']}: {manifest.get('error', '')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
