"""Command-line driver: ``rsscoloc {simulate,localize,sweep,sampler-demo,bench}``.

Every file written starts with ``#`` header lines carrying the tool version,
the hash of the effective configuration and the seed. Failures print one
line ``error code=<n> kind=<name> message=<text>`` to stderr and exit with
the code below.
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from ._textio import config_hash, fmt, header_lines, write_table
from .belief_store import write_alpha_snapshots, write_position_snapshots
from .errors import ConfigError, DomainError, EngineError, FormatError
from .estimator import alpha_point_estimate, compute_metrics
from .harness import (
    DEFAULTS,
    RUN_COLUMNS,
    SWEEP_COLUMNS,
    bench_belief_update,
    build_spec,
    load_spec_file,
    parse_overrides,
    run_experiment,
    run_single,
    spec_geometry,
    spec_measurements,
)
from .msgpass import ALGORITHMS
from .nlsampler import UniformRangeModel, log_nl_weight, polar_sample
from .rss_model import write_measurements, write_network

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_MISSING = 5
EXIT_ENGINE = 6
EXIT_DOMAIN = 7
EXIT_INTERNAL = 1

VERBS = ("simulate", "localize", "sweep", "sampler-demo", "bench")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rsscoloc", description="Cooperative RSS localization with unknown path loss exponent.")
    parser.add_argument("--version", action="version", version=f"rsscoloc {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--spec", help="key = value experiment spec file")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, help="master seed; overrides the spec")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--algorithm", choices=sorted(ALGORITHMS))
        if verb == "sweep":
            p.add_argument("--timings", action="store_true", help="include wall-clock columns")
    return parser


# -- helpers -----------------------------------------------------------------


def _effective_spec(args, require_spec: bool):
    layers = []
    if args.spec:
        layers.append(load_spec_file(args.spec))
    elif require_spec:
        raise CliError(EXIT_USAGE, "usage", f"{args.verb} requires --spec")
    cli_layer = {}
    if args.algorithm:
        cli_layer["algorithm"] = args.algorithm
    if args.seed is not None:
        cli_layer["seed"] = str(args.seed)
    layers.append(parse_overrides(args.overrides))
    layers.append(cli_layer)
    return build_spec(*layers)


def _write_manifest(path: Path, verb: str, mapping: Dict[str, str], seed: int, chash: str, extra: Optional[dict] = None):
    lines = header_lines(chash, seed)
    lines.append(f"verb = {verb}")
    lines.append(f"version = {__version__}")
    for key in sorted(mapping):
        lines.append(f"{key} = {mapping[key]}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- verbs -------------------------------------------------------------------


def cmd_simulate(args) -> None:
    spec = _effective_spec(args, require_spec=True)
    out = _out_dir(args)
    header = header_lines(spec.hash, spec.seed)
    geometry = spec_geometry(spec, spec.seed)
    measurements = spec_measurements(spec, geometry, spec.seed)
    write_network(geometry, out / "network.csv", header)
    write_measurements(measurements, out / "measurements.csv", header)
    extra = {"edges": len(measurements), "diagnostics": " | ".join(measurements.diagnostics) or "none"}
    _write_manifest(out / "manifest.txt", "simulate", spec.as_mapping(), spec.seed, spec.hash, extra)


def cmd_localize(args) -> None:
    spec = _effective_spec(args, require_spec=True)
    out = _out_dir(args)
    header = header_lines(spec.hash, spec.seed)
    single = run_single(spec, 0, keep_result=True)
    result = single.result
    history = result.history
    if spec.snapshots == "all":
        records = [(rec.iteration, rec.beliefs) for rec in history]
    elif spec.snapshots == "final":
        records = [(history[-1].iteration, history[-1].beliefs)]
    else:
        records = []
    if records:
        write_position_snapshots(records, out / "positions.csv", header)
    write_alpha_snapshots([(rec.iteration, rec.alpha_belief) for rec in history], out / "alpha.csv", header)
    agents = result.problem.geometry.agent_ids
    rows = []
    for k, a in enumerate(agents):
        e = single.estimates[k]
        t = single.truths[k]
        rows.append((a, float(e[0]), float(e[1]), float(t[0]), float(t[1]), float(math.hypot(*(e - t)))))
    write_table(out / "estimates.csv", ("agent_id", "x_hat", "y_hat", "x_true", "y_true", "error"), rows, header)
    write_table(
        out / "rmse_by_iteration.csv",
        ("iter", "rmse"),
        [(k + 1, v) for k, v in enumerate(single.rmse_by_iteration)],
        header,
    )
    m = compute_metrics([single.alpha_hat], spec.alpha_true, single.estimates[None], single.truths[None])
    a = alpha_point_estimate(history[-1].alpha_belief)
    metrics = header + [
        f"alpha_hat = {fmt(a.value)}",
        f"alpha_tied = {str(a.tied).lower()}",
        f"alpha_true = {fmt(spec.alpha_true)}",
        f"mse_alpha = {fmt(m.mse_alpha)}",
        f"bias_alpha = {fmt(m.bias_alpha)}",
        f"rmse = {fmt(m.rmse_positions)}",
        f"divergences = {single.divergences}",
    ]
    (out / "metrics.txt").write_text("\n".join(metrics) + "\n", encoding="utf-8")
    events = [f"{kind}: {msg}" for kind, msg in result.diagnostics.events]
    extra = {"engine_config": " ".join(f"{k}={v}" for k, v in result.config.as_dict().items()), "events": len(events)}
    _write_manifest(out / "manifest.txt", "localize", spec.as_mapping(), spec.seed, spec.hash, extra)
    if events:
        (out / "diagnostics.txt").write_text("\n".join(header + events) + "\n", encoding="utf-8")


def cmd_sweep(args) -> None:
    spec = _effective_spec(args, require_spec=True)
    out = _out_dir(args)
    header = header_lines(spec.hash, spec.seed)
    res = run_experiment(spec, include_timings=args.timings)
    cols = SWEEP_COLUMNS + (("runtime_s",) if args.timings else ())
    write_table(out / "sweep.csv", cols, [[row[c] for c in cols] for row in res.rows], header)
    write_table(out / "runs.csv", RUN_COLUMNS, [[r[c] for c in RUN_COLUMNS] for r in res.runs], header)
    _write_manifest(out / "manifest.txt", "sweep", spec.as_mapping(), spec.seed, spec.hash, {"rows": len(res.rows)})


def _small_settings(args, defaults: Dict[str, str]) -> Dict[str, str]:
    """Settings for verbs that do not run the engine: defaults, spec, --set, --seed."""
    settings = dict(defaults)
    if args.spec:
        settings.update(load_spec_file(args.spec, allowed=defaults))
    settings.update(parse_overrides(args.overrides, allowed=defaults))
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    return settings


SAMPLER_DEMO_DEFAULTS = {"n": "10000", "r": "7.5", "half_width": "2.5", "seed": "0", "bins": "50"}


def cmd_sampler_demo(args) -> None:
    settings = _small_settings(args, SAMPLER_DEMO_DEFAULTS)
    try:
        n = int(settings["n"])
        r = float(settings["r"])
        half = float(settings["half_width"])
        seed = int(settings["seed"])
        bins = int(settings["bins"])
    except ValueError as exc:
        raise ConfigError(f"sampler-demo setting: {exc}") from None
    if n < 2 or half <= 0 or bins < 1 or r - half <= 0:
        raise ConfigError("need n >= 2, half_width > 0, bins >= 1 and r > half_width")
    out = _out_dir(args)
    chash = config_hash(settings)
    header = header_lines(chash, seed)
    model = UniformRangeModel(half)
    rng = np.random.default_rng(seed)
    origin = np.zeros(2)
    x = polar_sample(rng, model, r, origin, size=n)
    d = np.hypot(x[:, 0], x[:, 1])
    logw = log_nl_weight(model, x, origin, r)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    write_table(
        out / "proposed.csv",
        ("x", "y", "d", "weight"),
        ((float(a), float(b), float(c), float(e)) for a, b, c, e in zip(x[:, 0], x[:, 1], d, w)),
        header,
    )
    write_table(
        out / "heuristic.csv",
        ("x", "y", "d"),
        ((float(a), float(b), float(c)) for a, b, c in zip(x[:, 0], x[:, 1], d)),
        header,
    )
    lo, hi = r - half, r + half
    edges = np.linspace(lo, hi, bins + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    # exact radial law of the normalized likelihood: density proportional to d on [lo, hi]
    target = 2.0 * mids / (hi * hi - lo * lo)
    weighted, _ = np.histogram(d, bins=edges, weights=w, density=True)
    plain, _ = np.histogram(d, bins=edges, density=True)
    write_table(
        out / "radial_density.csv",
        ("d", "target", "proposed_weighted", "heuristic"),
        ((float(a), float(b), float(c), float(e)) for a, b, c, e in zip(mids, target, weighted, plain)),
        header,
    )
    exact = (2.0 / 3.0) * (hi**3 - lo**3) / (hi * hi - lo * lo)
    summary = header + [
        f"exact_mean_distance = {fmt(exact)}",
        f"weighted_mean_distance = {fmt(float(np.sum(w * d)))}",
        f"heuristic_mean_distance = {fmt(float(d.mean()))}",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    _write_manifest(out / "manifest.txt", "sampler-demo", settings, seed, chash)


BENCH_DEFAULTS = {"L_values": "250 500 1000 2000", "repeats": "3", "n_neighbors": "4", "seed": "0"}


def cmd_bench(args) -> None:
    settings = _small_settings(args, BENCH_DEFAULTS)
    try:
        L_values = [int(v) for v in settings["L_values"].replace(",", " ").split()]
        repeats = int(settings["repeats"])
        n_nb = int(settings["n_neighbors"])
        seed = int(settings["seed"])
    except ValueError as exc:
        raise ConfigError(f"bench setting: {exc}") from None
    out = _out_dir(args)
    chash = config_hash(settings)
    header = header_lines(chash, seed)
    res = bench_belief_update(L_values, repeats, n_nb, seed)
    cols = ("L", "is_seconds", "ais_seconds")
    write_table(out / "bench.csv", cols, zip(res.L, res.is_times, res.ais_times), header)
    extra = {"slope_is": fmt(res.slope_is), "slope_ais": fmt(res.slope_ais)}
    _write_manifest(out / "manifest.txt", "bench", settings, seed, chash, extra)


COMMANDS = {
    "simulate": cmd_simulate,
    "localize": cmd_localize,
    "sweep": cmd_sweep,
    "sampler-demo": cmd_sampler_demo,
    "bench": cmd_bench,
}


def _report(err: CliError) -> int:
    msg = " ".join(str(err).split())
    print(f"error code={err.code} kind={err.kind} message={msg}", file=sys.stderr)
    return err.code


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.verb](args)
    except CliError as err:
        return _report(err)
    except FileNotFoundError as exc:
        return _report(CliError(EXIT_MISSING, "missing_file", f"no such file: {exc.filename or exc}"))
    except FormatError as exc:
        return _report(CliError(EXIT_FORMAT, "format", str(exc)))
    except ConfigError as exc:
        return _report(CliError(EXIT_CONFIG, "config", str(exc)))
    except EngineError as exc:
        return _report(CliError(EXIT_ENGINE, "engine", str(exc)))
    except DomainError as exc:
        return _report(CliError(EXIT_DOMAIN, "domain", str(exc)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
