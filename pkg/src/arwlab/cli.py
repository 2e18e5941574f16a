"""Command-line entry point ``arwlab``.

Exit codes: 0 success, 1 invalid network (or a runaway walk, which means
validation missed a degeneracy), 2 parameter or capacity error, 64 unknown
subcommand.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .errors import CapacityError, DegenerateNetworkError, NetworkError, ParameterError, RunawayWalkError
from .generators import GeneratorSpec, generate
from .network import Network

SUBCOMMANDS = ("validate", "gen", "stats", "idla-run", "arw-run", "exact", "sep-curve", "sweep")
EXIT_OK, EXIT_INVALID, EXIT_PARAM, EXIT_USAGE = 0, 1, 2, 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParameterError(message)


def _seed(value) -> int:
    try:
        s = int(str(value), 0)
    except ValueError:
        raise ParameterError(f"seed must be an integer, got {value!r}") from None
    if not 0 <= s < 2**64:
        raise ParameterError("seed must be a 64-bit unsigned integer")
    return s


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"expected comma-separated integers, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arwlab", description="Activated Random Walk mixing on finite killed networks.")
    p.add_argument("--version", action="version", version=f"arwlab {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, network=True):
        if network:
            sp.add_argument("--net", help="network JSON file")
            sp.add_argument("--gen", help="generator spec, e.g. wheel:100 or transitive:cycle:51")
        sp.add_argument("--seed", default=None, help="64-bit seed (default $ARWLAB_SEED or 0)")
        sp.add_argument("--format", choices=("csv", "json"), default="json")
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--workers", type=int, default=1)
        return sp

    common(sub.add_parser("validate", help="check the standing assumptions on a network"))
    common(sub.add_parser("gen", help="write a generated network as JSON"))
    common(sub.add_parser("stats", help="exact hitting probabilities and mixing bounds"))
    sp = common(sub.add_parser("idla-run", help="IDLA filling runs"))
    sp.add_argument("--initial", default="empty", help="empty, all, or comma-separated sites")
    sp.add_argument("--replicas", type=int, default=1)
    sp.add_argument("--emit", choices=("summary", "increments"), default="summary")
    sp = common(sub.add_parser("arw-run", help="run the ARW chain"))
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--rule", choices=("lowest", "highest", "random"), default="lowest")
    sp.add_argument("--initial", default=None, help="JSON array over \"0\", \"s\", k")
    sp = common(sub.add_parser("exact", help="exact oracle on a small network"))
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--tmax", type=int, default=40)
    sp.add_argument("--mode", choices=("subset", "operator", "both"), default="subset")
    sp = common(sub.add_parser("sep-curve", help="Monte Carlo separation profile"))
    sp.add_argument("--replicas", type=int, default=None)
    sp.add_argument("--eps", default="0.05,0.25,0.5,0.75,0.95")
    sp.add_argument("--method", choices=("auto", "walk", "ruin"), default="auto")
    sp = common(sub.add_parser("sweep", help="finite-size cutoff sweep over a family"), network=False)
    sp.add_argument("--family", required=True, help="wheel, cycle, complete, hypercube, ball:D or tree:DEG")
    sp.add_argument("--sizes", required=True, help="comma-separated sizes")
    sp.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sp.add_argument("--replicas", type=int, default=None)
    sp.add_argument("--method", choices=("auto", "walk", "ruin"), default="auto")
    return p


# -- output -------------------------------------------------------------------


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, text: str) -> None:
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)


def _csv_text(header: dict, columns, rows) -> str:
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return v


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(v):
    import numpy as np

    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _load_network(args) -> tuple[Network, str]:
    if bool(args.net) == bool(args.gen):
        raise ParameterError("give exactly one of --net FILE or --gen SPEC")
    if args.net:
        path = Path(args.net)
        if not path.exists():
            raise ParameterError(f"network file {path} not found")
        return Network.load(path), str(path)
    net = generate(GeneratorSpec.parse(args.gen))
    return net, args.gen


def _header(args, net: Network | None, seed: int, source: str | None = None) -> dict:
    h = {"arwlab": __version__, "command": args.command, "seed": seed}
    if net is not None:
        h["network"] = source
        h["fingerprint"] = net.fingerprint
    return h


# -- subcommands --------------------------------------------------------------


def cmd_validate(args, seed):
    if bool(args.net) == bool(args.gen):
        raise ParameterError("give exactly one of --net FILE or --gen SPEC")
    try:
        net, source = _load_network(args)
    except DegenerateNetworkError as exc:
        _emit(args, _json_text({"passed": False, "violations": [str(exc)], "seed": seed}))
        return EXIT_INVALID
    except NetworkError as exc:
        _emit(args, _json_text({"passed": False, "violations": [str(exc)], "entry": exc.entry, "seed": seed}))
        return EXIT_INVALID
    rep = net.report
    out = {**_header(args, net, seed, source), **rep.to_dict(), "n": net.n}
    if args.format == "csv":
        rows = [[k, rep.to_dict()[k]["ok"]] for k in ("row_sums", "nondegenerate", "reachability")]
        rows.append(["reversible", rep.reversible])
        _emit(args, _csv_text(_header(args, net, seed, source), ("check", "ok"), rows))
    else:
        _emit(args, _json_text(out))
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_gen(args, seed):
    net, _ = _load_network(args)
    _emit(args, json.dumps(net.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_stats(args, seed):
    from .greens import CSV_COLUMNS, statistics

    net, source = _load_network(args)
    st = statistics(net)
    if args.format == "csv":
        _emit(args, _csv_text(_header(args, net, seed, source), CSV_COLUMNS, [st.row()]))
    else:
        out = {**_header(args, net, seed, source), **st.to_dict(list(net.labels))}
        out["argmin"] = [net.labels[i] for i in st.argmin]
        out["p"] = dict(zip(net.labels, (float(v) for v in st.p)))
        _emit(args, _json_text(out))
    return EXIT_OK


def cmd_idla(args, seed):
    from .idla import parse_initial, run_filling

    net, source = _load_network(args)
    if args.replicas < 1:
        raise ParameterError("--replicas must be at least 1")
    A = parse_initial(net, args.initial)
    increments = args.emit == "increments"
    rows = []
    for r in range(args.replicas):
        rec = run_filling(net, seed, A, record_increments=increments, replica=r)
        rows.append([r, rec.T] + (rec.increments if increments else []))
    k0 = len(A)
    cols = ["replica", "T"] + ([f"t_{k}" for k in range(k0, net.n + 1)] if increments else [])
    header = {**_header(args, net, seed, source), "initial": ";".join(net.labels[i] for i in A.members())}
    if args.format == "csv":
        _emit(args, _csv_text(header, cols, rows))
    else:
        _emit(args, _json_text({**header, "columns": cols, "rows": rows}))
    return EXIT_OK


def cmd_arw(args, seed):
    from .arw import ArwChain, ArwParams, Configuration

    net, source = _load_network(args)
    if args.steps < 0:
        raise ParameterError("--steps must be nonnegative")
    params = ArwParams(args.lam, args.rule)
    initial = None
    if args.initial:
        try:
            initial = Configuration.from_json(json.loads(args.initial))
        except json.JSONDecodeError as exc:
            raise ParameterError(f"--initial is not valid JSON: {exc}") from None
    chain = ArwChain(net, params, seed, initial)
    rows = []
    for t, conf, instr, deaths in chain.run(args.steps):
        rows.append([t, conf.sleepers(), instr, deaths])
    cols = ("t", "sleeping", "instructions", "deaths")
    header = {**_header(args, net, seed, source), "lambda": args.lam, "rule": args.rule}
    if args.format == "csv":
        _emit(args, _csv_text(header, cols, rows))
    else:
        _emit(args, _json_text({**header, "columns": cols, "rows": rows,
                                "final": chain.configuration.to_json()}))
    return EXIT_OK


def cmd_exact(args, seed):
    from .oracle import exact_report

    net, source = _load_network(args)
    rep = exact_report(net, args.lam, args.tmax, args.mode)
    header = {**_header(args, net, seed, source), "mode": args.mode}
    if args.lam is not None:
        header["lambda"] = args.lam
    if args.format == "csv":
        has_op = rep.dsep is not None
        cols = ("t", "survival") + (("dsep", "dtv") if has_op else ())
        rows = []
        for t in range(args.tmax + 1):
            row = [t, float(rep.survival[t])]
            if has_op:
                row += [float(rep.dsep[t]), float(rep.dtv[t])]
            rows.append(row)
        _emit(args, _csv_text(header, cols, rows))
    else:
        out = {**header, **rep.to_dict()}
        if rep.P is not None:
            out["P"] = rep.P.tolist()
        _emit(args, _json_text(out))
    return EXIT_OK


def cmd_sep_curve(args, seed):
    from .experiments import default_replicas, estimate_survival

    net, source = _load_network(args)
    R = args.replicas or default_replicas(net.n)
    eps = _float_list(args.eps)
    if not eps or any(not 0 < e < 1 for e in eps):
        raise ParameterError("--eps values must lie in (0, 1)")
    est = estimate_survival(net, seed, R, eps, args.method, args.workers)
    header = {**_header(args, net, seed, source), "replicas": R, "method": est.method}
    if args.format == "csv":
        for e in eps:
            header[f"tsep({e})"] = est.tsep[e]
        for w in est.warnings:
            header["warning"] = w
        _emit(args, _csv_text(header, ("t", "survival", "lower", "upper"), est.curve_rows()))
    else:
        _emit(args, _json_text({**header, **est.summary(), "curve": [list(r) for r in est.curve_rows()]}))
    return EXIT_OK


def cmd_sweep(args, seed):
    from .experiments import SWEEP_COLUMNS, cutoff_sweep

    sizes = _int_list(args.sizes)
    if not sizes:
        raise ParameterError("--sizes is empty")
    rows = cutoff_sweep(args.family, sizes, args.lam, seed, args.replicas, args.method, args.workers)
    header = {"arwlab": __version__, "command": "sweep", "seed": seed, "family": args.family}
    if args.format == "csv":
        _emit(args, _csv_text(header, SWEEP_COLUMNS, (r.values() for r in rows)))
    else:
        _emit(args, _json_text({**header, "rows": [r.to_dict() for r in rows]}))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "gen": cmd_gen,
    "stats": cmd_stats,
    "idla-run": cmd_idla,
    "arw-run": cmd_arw,
    "exact": cmd_exact,
    "sep-curve": cmd_sep_curve,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    if argv and argv[0] in ("-h", "--help", "--version"):
        try:
            parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
    if not argv or argv[0] not in SUBCOMMANDS:
        sys.stderr.write(parser.format_usage())
        if argv:
            sys.stderr.write(f"arwlab: unknown subcommand {argv[0]!r}\n")
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        seed = _seed(args.seed if args.seed is not None else os.environ.get("ARWLAB_SEED", "0"))
        if args.workers < 1:
            raise ParameterError("--workers must be at least 1")
        return COMMANDS[args.command](args, seed)
    except SystemExit as exc:  # --help inside a subcommand
        return int(exc.code or 0)
    except (NetworkError, DegenerateNetworkError, RunawayWalkError) as exc:
        sys.stderr.write(f"arwlab: invalid network: {exc}\n")
        return EXIT_INVALID
    except (ParameterError, CapacityError) as exc:
        sys.stderr.write(f"arwlab: {exc}\n")
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
