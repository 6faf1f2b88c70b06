"""Command-line entry point: ``twinqe {simulate,estimate,sweep,fit,compare}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, estimators, experiments, io, kernel
from . import simulator as sim
from .errors import (
    ConfigError,
    CorruptRecordError,
    DegeneratePointsError,
    DomainError,
    InsufficientDataError,
    NegativeSubtractionError,
    NoAdmissibleRootError,
    NoRealRootError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_VERDICT = 5
EXIT_IO = 6

CONFIG_ENV = "TWINQE_CONFIG"
METHOD_FLAGS = {
    "both": experiments.METHODS,
    "coincidence": (estimators.COINCIDENCE,),
    "difference": (estimators.DIFFERENCE_SIGNAL,),
}

log = logging.getLogger("twinqe")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --- configuration ------------------------------------------------------------------

def load(args) -> io.Config:
    path = args.config or os.environ.get(CONFIG_ENV)
    try:
        if path:
            log.info("config: %s", path)
            cfg = io.read_config(path)
        else:
            log.info("config: shipped example")
            cfg = io.example_config()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config: {exc}") from exc
    overrides = {
        k: v
        for k, v in (
            ("seed", args.seed),
            ("n_pulses", getattr(args, "pulses", None)),
            ("workers", args.workers),
            ("batch_size", args.batch_size),
        )
        if v is not None
    }
    try:
        run = replace(cfg.run, **overrides)
        if getattr(args, "noise_run", None):
            cfg = cfg.replace(estimation=replace(cfg.estimation, noise_run=args.noise_run))
    except DomainError as exc:
        raise ConfigError([("command line", str(exc))]) from exc
    return cfg.replace(run=run)


def emit(text: str, path) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", path)
    else:
        sys.stdout.write(text)


def sweep_values(args) -> list[float]:
    if args.values is not None:
        try:
            vals = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError as exc:
            raise DomainError(f"--values: {exc}") from exc
    else:
        if args.start is None or args.stop is None:
            raise DomainError("give --values or both --start and --stop")
        if args.points < 2:
            raise DomainError("--points must be >= 2")
        vals = [float(v) for v in np.linspace(args.start, args.stop, args.points)]
    if len(vals) < 2:
        raise DomainError("a sweep needs at least two points")
    return vals


def rates_summary(t) -> str:
    ns, ni, nc = t.rates()
    return f"pulses {t.n_pulses}\n<N_s> {ns!r}\n<N_i> {ni!r}\n<N_c> {nc!r}\n<N+> {ns + ni!r}\n"


# --- subcommands ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load(args)
    source = experiments.measured_source(cfg)
    stream = experiments.point_stream(cfg, 0, noise=args.source_off)
    if args.source_off:
        source = sim.SourceConfig(0.0)
    run_cfg = replace(cfg.run, stream=stream)
    writer = None
    if args.output:
        writer = io.RecordWriter(args.output, io.config_hash(cfg), cfg.run.seed, stream, args.format)
    try:
        tally = sim.run(source, cfg.signal_channel, cfg.idler_channel, run_cfg, sink=writer, backend=args.backend)
    finally:
        if writer is not None:
            writer.close()
    sys.stdout.write(rates_summary(tally))
    return EXIT_OK


def _measurement_from_files(args, cfg) -> experiments.Measurement:
    rec = io.read_records(args.records)
    if rec.header.config_hash != io.config_hash(cfg):
        log.warning("record file %s was written with a different configuration", args.records)
    noise = None
    if args.noise_records:
        noise = io.read_records(args.noise_records).tally()
    return experiments.Measurement(rec.tally(), noise)


def cmd_estimate(args) -> int:
    cfg = load(args)
    if args.records:
        m = _measurement_from_files(args, cfg)
    else:
        m = experiments.measure(cfg, 0, backend=args.backend)
    if m.tally.n_pulses == 0:
        raise InsufficientDataError("record file holds no pulses")
    rows = experiments.estimate_rows(m, cfg, METHOD_FLAGS[args.method])
    emit(io.format_results(rows), args.output)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load(args)
    vals = sweep_values(args)
    if args.kind == "gain":
        if args.mean_sum:
            vals = [experiments.mu_for_mean_sum(cfg, s) for s in vals]
        rows = experiments.gain_sweep(cfg, vals, backend=args.backend)
    else:
        if args.mean_sum:
            raise DomainError("--mean-sum applies to gain sweeps only")
        rows = experiments.SWEEPS[args.kind](cfg, vals, METHOD_FLAGS[args.method], backend=args.backend)
    emit(io.format_results(rows), args.output)
    if args.kind == "transmission":
        for method in METHOD_FLAGS[args.method]:
            r = [x for x in rows if x.method == method]
            fit = experiments.weighted_line([x.value for x in r], [x.eta for x in r], [x.std_error for x in r])
            log.info("%s: slope %.6f +- %.6f, intercept %.6f +- %.6f",
                     method, fit.slope, fit.slope_se, fit.intercept, fit.intercept_se)
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        rows = io.read_results(args.table)
    except ValueError as exc:
        raise InsufficientDataError(f"{args.table}: {exc}") from exc
    res = experiments.fit_table(rows, args.k)
    lines = [
        f"eta {res.eta!r}",
        f"std_error {res.std_error!r}",
        f"k {res.k!r}",
        f"residual_sum {res.residual_sum!r}",
        "residuals " + " ".join(repr(r) for r in res.residuals),
    ]
    sys.stdout.write("\n".join(lines) + "\n")
    xs = [r.mean_sum for r in rows if r.nrf is not None and r.mean_sum]
    grid = np.linspace(0.0, max(xs), args.samples)
    curve = "mean_sum,nrf\n" + "".join(f"{s!r},{y!r}\n" for s, y in experiments.fit_curve(res.eta, res.k, [float(g) for g in grid]))
    if args.output:
        emit(curve, args.output)
    else:
        sys.stdout.write("\n" + curve)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load(args)
    rows, verdict = experiments.compare(cfg, backend=args.backend)
    emit(io.format_results(rows), args.output)
    sys.stdout.write(verdict.line() + "\n")
    return EXIT_OK if verdict.passed else EXIT_VERDICT


# --- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help=f"configuration file (default: ${CONFIG_ENV} or the shipped example)")
    common.add_argument("-o", "--output", help="output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sim_opts = argparse.ArgumentParser(add_help=False)
    sim_opts.add_argument("--seed", type=int, help="override run.seed")
    sim_opts.add_argument("--pulses", type=int, help="override run.n_pulses")
    sim_opts.add_argument("--workers", type=int, help="override run.workers")
    sim_opts.add_argument("--batch-size", type=int, help="override run.batch_size")
    sim_opts.add_argument("--backend", choices=kernel.available_backends(), help="simulation kernel")
    method = argparse.ArgumentParser(add_help=False)
    method.add_argument("--method", choices=sorted(METHOD_FLAGS), default="both")
    noise = argparse.ArgumentParser(add_help=False)
    noise.add_argument("--noise-run", choices=("auto", "on", "off"), help="override estimation.noise_run")

    p = argparse.ArgumentParser(prog="twinqe", description="Twin-beam detector calibration by simulation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, sim_opts], help="simulate click records")
    s.add_argument("--format", choices=("binary", "text"), help="record format (default: by file suffix)")
    s.add_argument("--source-off", action="store_true", help="record a background run with the source blocked")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", parents=[common, sim_opts, method, noise], help="estimate the efficiency")
    s.add_argument("--records", help="record file to analyse instead of simulating")
    s.add_argument("--noise-records", help="source-off record file for background subtraction")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("sweep", parents=[common, sim_opts, method, noise], help="parameter sweep")
    s.add_argument("kind", choices=sorted(experiments.SWEEPS))
    s.add_argument("--values", help="comma-separated sweep values")
    s.add_argument("--start", type=float)
    s.add_argument("--stop", type=float)
    s.add_argument("--points", type=int, default=10)
    s.add_argument("--mean-sum", action="store_true", help="gain values are target <N+> rather than mean pairs")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit", parents=[common], help="fit the dead-time NRF curve to a gain-sweep table")
    s.add_argument("table", help="results table written by 'sweep gain'")
    s.add_argument("--k", type=float, default=1.0, help="balance factor used for the curve")
    s.add_argument("--samples", type=int, default=21, help="points of the sampled curve")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("compare", parents=[common, sim_opts, noise], help="both methods on one dataset")
    s.set_defaults(func=cmd_compare)
    return p


def _check_conflicts(parser, args):
    if args.command == "estimate" and args.records:
        clash = [f for f, v in (("--pulses", args.pulses), ("--seed", args.seed), ("--noise-run", args.noise_run)) if v is not None]
        if clash:
            parser.error(f"--records cannot be combined with {', '.join(clash)}")
    if args.command == "estimate" and args.noise_records and not args.records:
        parser.error("--noise-records requires --records")
    if args.command == "sweep" and args.values is not None and (args.start is not None or args.stop is not None):
        parser.error("--values conflicts with --start/--stop")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_conflicts(parser, args)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptRecordError as exc:
        print(f"error: corrupt record file: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (sim.RecordSinkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InsufficientDataError as exc:
        print(f"error: not enough data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NegativeSubtractionError as exc:
        print(f"error: background subtraction failed, check the noise run: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NoRealRootError, NoAdmissibleRootError) as exc:
        print(f"error: measured NRF admits no efficiency in [0, 1]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DegeneratePointsError as exc:
        print(f"error: cannot fit: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
