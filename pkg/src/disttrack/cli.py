"""Command-line front end: ``disttrack <subcommand> [flags]``.

Subcommands generate streams, run one protocol, sweep a parameter, or
print exact oracle answers.  Results are tidy CSV whose ``# config`` header
echoes every setting needed to reproduce the row.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .data import ZipfConfig, dump_stream, gen_zipfian, load_stream, synth_matrix
from .evaluation import ExactHHOracle
from .hh_protocols import HH_PROTOCOLS
from .matrix_protocols import MATRIX_PROTOCOLS
from .matrix_sketch import CovarianceAccumulator
from .simulator import ASSIGNMENTS, SimConfig, run_sim, sweep, sweep_csv

OUT_DIR_ENV = "DISTTRACK_OUT_DIR"

EXIT_USAGE = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


def _unit_interval(name):
    def parse(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {s!r}") from None
        if not 0.0 < v < 1.0:
            raise argparse.ArgumentTypeError(f"{name} must lie in (0, 1), got {s}")
        return v

    return parse


def _positive_int(name):
    def parse(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {s!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be at least 1, got {s}")
        return v

    return parse


def _at_least_one(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"beta must be a number, got {s!r}") from None
    if not v >= 1.0:
        raise argparse.ArgumentTypeError(f"beta must be at least 1, got {s}")
    return v


def _columns(s):
    try:
        return [int(c) for c in s.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"columns must be comma-separated integers, got {s!r}") from None


def _add_output(p):
    p.add_argument("--out", help=f"output path (default: stdout, or ${OUT_DIR_ENV}/<command>.csv)")


def _add_sim(p, protocols, matrix: bool):
    p.add_argument("--protocol", required=True, choices=protocols + (("mp3",) if matrix else ("p3",)))
    p.add_argument("--eps", type=_unit_interval("eps"), default=1e-3 if not matrix else 0.1)
    p.add_argument("--sites", type=_positive_int("sites"), default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--assignment", choices=ASSIGNMENTS, default="uniform")
    p.add_argument("--query-every", type=_positive_int("query-every"), default=None)
    p.add_argument("--sample-size", type=_positive_int("sample-size"), default=None)
    p.add_argument("--input", help="stream file (.csv or .npz); generated when omitted")
    p.add_argument("--header", action="store_true", help="skip the first CSV line")
    p.add_argument("--n", type=_positive_int("n"), default=100_000, help="length of a generated stream")
    p.add_argument("--json", dest="json_out", help="also write a JSON summary here")
    if matrix:
        p.add_argument("--columns", type=_columns, default=None, help="0-based columns to keep")
        p.add_argument("--kind", choices=("lowrank", "highrank", "rotating"), default="lowrank")
        p.add_argument("--dim", type=_positive_int("dim"), default=44)
        p.add_argument("--rank", type=_positive_int("rank"), default=20)
        p.add_argument("--noise", type=float, default=0.1)
        p.add_argument("--svd-every", type=_positive_int("svd-every"), default=1)
    else:
        p.add_argument("--phi", type=_unit_interval("phi"), default=0.05)
        p.add_argument("--beta", type=_at_least_one, default=1000.0)
        p.add_argument("--skew", type=float, default=2.0)
        p.add_argument("--universe", type=_positive_int("universe"), default=10_000)
        p.add_argument("--copies", type=_positive_int("copies"), default=1)
        p.add_argument("--strict", action="store_true", help="run estimators at eps/6")
    _add_output(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="disttrack", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-zipf", help="weighted Zipfian element stream")
    p.add_argument("--n", type=_positive_int("n"), default=100_000)
    p.add_argument("--universe", type=_positive_int("universe"), default=10_000)
    p.add_argument("--skew", type=float, default=2.0)
    p.add_argument("--beta", type=_at_least_one, default=1000.0)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)

    p = sub.add_parser("gen-matrix", help="synthetic matrix row stream")
    p.add_argument("--kind", choices=("lowrank", "highrank", "rotating"), default="lowrank")
    p.add_argument("--n", type=_positive_int("n"), default=50_000)
    p.add_argument("--dim", type=_positive_int("dim"), default=44)
    p.add_argument("--rank", type=_positive_int("rank"), default=20)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)

    _add_sim(sub.add_parser("run-hh", help="run one heavy-hitter protocol"), HH_PROTOCOLS, matrix=False)
    _add_sim(sub.add_parser("run-matrix", help="run one matrix protocol"), MATRIX_PROTOCOLS, matrix=True)

    p = sub.add_parser("sweep", help="run a protocol over several values of one parameter")
    p.add_argument("--axis", choices=("eps", "m", "beta"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--repetitions", type=_positive_int("repetitions"), default=1)
    p.add_argument("--workers", type=_positive_int("workers"), default=1)
    _add_sim(p, HH_PROTOCOLS + ("p3",) + MATRIX_PROTOCOLS, matrix=True)
    p.add_argument("--phi", type=_unit_interval("phi"), default=0.05)
    p.add_argument("--beta", type=_at_least_one, default=1000.0)
    p.add_argument("--skew", type=float, default=2.0)
    p.add_argument("--universe", type=_positive_int("universe"), default=10_000)
    p.add_argument("--copies", type=_positive_int("copies"), default=1)

    p = sub.add_parser("oracle", help="exact answers for a stream file")
    p.add_argument("--input", required=True)
    p.add_argument("--rows", action="store_true", help="treat the input as matrix rows")
    p.add_argument("--phi", type=_unit_interval("phi"), default=0.05)
    p.add_argument("--header", action="store_true")
    p.add_argument("--columns", type=_columns, default=None)
    _add_output(p)
    return ap


def _open_out(args):
    path = args.out
    if path is None and os.environ.get(OUT_DIR_ENV):
        path = str(Path(os.environ[OUT_DIR_ENV]) / f"{args.command}.csv")
    return path


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _load_input(args, matrix: bool):
    kind = "rows" if matrix else "elements"
    stream = load_stream(args.input, header=args.header, columns=getattr(args, "columns", None), kind=kind)
    if (stream.kind == "rows") != matrix:
        raise UsageError(f"{args.input} does not hold {kind}")
    return stream


def _stream_for(args, matrix: bool):
    """Return a callable ``cfg -> stream``; generated streams are seeded from the run seed."""
    if args.input:
        stream = _load_input(args, matrix)
        return lambda cfg: stream
    if matrix:
        return lambda cfg: synth_matrix(args.kind, args.n, args.dim, args.rank, args.noise, cfg.seed)
    return lambda cfg: gen_zipfian(ZipfConfig(args.n, args.universe, args.skew, cfg.beta, cfg.seed))


def _sim_config(args, protocol: str, **over) -> SimConfig:
    kw = dict(
        protocol=protocol,
        m=args.sites,
        eps=args.eps,
        seed=args.seed,
        assignment=args.assignment,
        query_every=args.query_every,
        sample_size=args.sample_size,
    )
    for name in ("phi", "beta", "copies", "strict", "svd_every", "repetitions"):
        if hasattr(args, name):
            kw[name] = getattr(args, name)
    kw.update(over)
    try:
        return SimConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _cmd_gen(args):
    if args.command == "gen-zipf":
        stream = gen_zipfian(ZipfConfig(args.n, args.universe, args.skew, args.beta, args.seed))
    else:
        stream = synth_matrix(args.kind, args.n, args.dim, args.rank, args.noise, args.seed)
    path = _open_out(args)
    if path is None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if stream.kind == "rows":
            w.writerows([repr(float(x)) for x in r] for r in stream.rows)
        else:
            w.writerows([e, repr(float(x))] for e, x in zip(stream.elements.tolist(), stream.weights.tolist()))
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        dump_stream(stream, path)


def _cmd_run(args):
    matrix = args.command == "run-matrix"
    cfg = _sim_config(args, args.protocol)
    stream = _stream_for(args, matrix)(cfg)
    report = run_sim(cfg, stream)
    if not args.input:
        report.config["generated"] = _generator_meta(args, matrix)
    _emit(report.to_csv(), _open_out(args))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps({k: v for k, v in report.summary().items() if k != "wall_time"},
                                                  indent=2, sort_keys=True))


def _generator_meta(args, matrix):
    if matrix:
        return {"kind": args.kind, "n": args.n, "dim": args.dim, "rank": args.rank, "noise": args.noise}
    return {"n": args.n, "universe": args.universe, "skew": args.skew}


def _cmd_sweep(args):
    matrix = args.protocol in MATRIX_PROTOCOLS + ("mp3",)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if not values:
        raise UsageError("--values is empty")
    template = _sim_config(args, args.protocol)
    for v in values:
        _sim_config(args, args.protocol, **{args.axis: int(v) if args.axis == "m" else v})
    reports = sweep(template, args.axis, values, _stream_for(args, matrix), workers=args.workers)
    _emit(sweep_csv(reports, args.axis), _open_out(args))


def _cmd_oracle(args):
    stream = load_stream(args.input, header=args.header, columns=args.columns,
                         kind="rows" if args.rows else "elements")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if stream.kind == "rows":
        acc = CovarianceAccumulator.of(stream.rows)
        w.writerow(["n", "d", "frob_sq", "beta"])
        w.writerow([acc.rows, acc.d, repr(acc.frob_sq), repr(stream.beta)])
    else:
        o = ExactHHOracle()
        o.add_many(stream.elements.tolist(), stream.weights.tolist())
        w.writerow(["element", "weight", "share"])
        for e in sorted(o.heavy_hitters(args.phi), key=lambda e: -o.freq[e]):
            w.writerow([e, repr(o.freq[e]), repr(o.freq[e] / o.total)])
    _emit(buf.getvalue(), _open_out(args))


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command in ("gen-zipf", "gen-matrix"):
            _cmd_gen(args)
        elif args.command in ("run-hh", "run-matrix"):
            _cmd_run(args)
        elif args.command == "sweep":
            _cmd_sweep(args)
        else:
            _cmd_oracle(args)
    except UsageError as exc:
        print(f"disttrack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, TypeError) as exc:
        code = EXIT_IO if isinstance(exc, OSError) else EXIT_USAGE
        print(f"disttrack: error: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
