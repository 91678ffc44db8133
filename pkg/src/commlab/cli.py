"""Command-line entry point: ``commlab <gen|metrics|model|plan|simulate|fd>``.

Exit codes: 0 success, 1 usage or input error, 2 eigensolver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from ._io import write_atomic
from .commstats import metrics_table, round_half_up, slab_metrics
from .layout import (build_redistribution_plan, make_layout, matching_stack,
                     redistribution_volume)
from .matgen import (Family, MatrixSpec, MatrixSpecError, create_source, pattern_stats,
                     write_matrix_market)
from .perfmodel import (REFERENCE_PARAMS, ModelError, ModelParams, amortization_report,
                        cheb_iter_time, efficiency_bound, load_params, pillar_always, plan_rows)

EXIT_OK, EXIT_USAGE, EXIT_NOCONV = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- output helpers ------------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        if math.isinf(x) or math.isnan(x):
            return ""
        return repr(x)
    return "" if x is None else str(x)


def render_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return None if math.isinf(x) or math.isnan(x) else x
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def render_json(doc) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def emit(args, text: str) -> None:
    if args.output:
        write_atomic(args.output, text)
    else:
        sys.stdout.write(text)


def parse_counts(text: str) -> list[int]:
    """``"2,4,8"`` or ``"2..64"`` (doubling) into a sorted list of positive ints."""
    out: set[int] = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = (int(x) for x in part.split("..", 1))
            if lo < 1 or hi < lo:
                raise UsageError(f"bad range {part!r}")
            n = lo
            while n <= hi:
                out.add(n)
                n *= 2
        else:
            out.add(int(part))
    if not out or min(out) < 1:
        raise UsageError(f"process counts must be positive: {text!r}")
    return sorted(out)


def parse_pairs(text: str) -> dict[int, float]:
    """``"16=3.37,32=4.17"`` into ``{16: 3.37, 32: 4.17}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        k, v = part.split("=", 1)
        out[int(k)] = float(v)
    return out


def _params(args, spec: MatrixSpec | None) -> ModelParams:
    if args.preset:
        base = REFERENCE_PARAMS[args.preset]
    else:
        S_d = 16 if spec is not None and spec.scalar_kind == "complex" else 8
        base = ModelParams(S_d=S_d)
    return load_params(args.params, base) if args.params else base


def _slab_side(spec: MatrixSpec) -> int | None:
    p = spec.parameters
    if spec.family is Family.EXCITON:
        return 2 * p["L"] + 1
    if spec.family is Family.TOPINS and p["Lx"] == p["Ly"] == p["Lz"]:
        return p["Lx"]
    return None


def _metric_rows(spec: MatrixSpec, nps: list[int], closed_form: bool, digits: int | None):
    src = create_source(spec)
    family, params = spec.family.value, ",".join(str(spec).split(",")[1:])
    if closed_form:
        n = _slab_side(spec)
        if n is None:
            raise UsageError("closed form is available for Exciton and cubic TopIns only")
        if spec.family is Family.EXCITON:
            n_nzr = 3 + 6 * (1 - 1 / n)
        else:
            n_nzr = 12 * (1 - 1 / n)
        vals = [(N_p, *slab_metrics(n, N_p)) for N_p in nps]
        raw = [{"N_p": N_p, "chi1": c13, "chi2": c2, "chi3": c13} for N_p, c13, c2 in vals]
    else:
        n_nzr = pattern_stats(src).n_nzr
        raw = [m.as_row() for m in metrics_table(src, nps)]
    rows = []
    for r in raw:
        row = {"family": family, "params": params, "N_p": r["N_p"],
               "chi1": r["chi1"], "chi2": r["chi2"], "chi3": r["chi3"],
               "n_nzr": n_nzr, "D": src.dim}
        if digits is not None:
            for k in ("chi1", "chi2", "chi3", "n_nzr"):
                row[k] = round_half_up(row[k], digits)
        rows.append(row)
    return rows


# --- subcommands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    spec = MatrixSpec.parse(args.matrix)
    src = create_source(spec)
    st = pattern_stats(src)
    row = {"matrix": str(spec), "D": st.D, "total_nnz": st.total_nnz,
           "n_nzr": st.n_nzr, "max_row_nnz": st.max_row_nnz, "scalar_kind": spec.scalar_kind}
    if args.mtx:
        write_matrix_market(src, args.mtx)
    if args.format == "json":
        emit(args, render_json(row))
    else:
        emit(args, render_csv([row], list(row)))
    return EXIT_OK


METRICS_COLUMNS = ["family", "params", "N_p", "chi1", "chi2", "chi3", "n_nzr", "D"]

METRICS_SCHEMA = {
    "type": "object",
    "required": ["matrix", "D", "rows"],
    "properties": {
        "matrix": {"type": "string"},
        "D": {"type": "integer", "minimum": 1},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": METRICS_COLUMNS,
                "properties": {
                    "family": {"type": "string"},
                    "params": {"type": "string"},
                    "N_p": {"type": "integer", "minimum": 1},
                    "chi1": {"type": "number", "minimum": 0},
                    "chi2": {"type": "number", "minimum": 0},
                    "chi3": {"type": "number", "minimum": 0},
                    "n_nzr": {"type": "number", "minimum": 0},
                    "D": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}


def cmd_metrics(args) -> int:
    spec = MatrixSpec.parse(args.matrix)
    nps = parse_counts(args.np)
    digits = None if args.raw else 2
    rows = _metric_rows(spec, nps, args.closed_form, digits)
    if args.format == "json":
        emit(args, render_json({"matrix": str(spec), "D": rows[0]["D"], "rows": rows}))
    else:
        emit(args, render_csv(rows, METRICS_COLUMNS))
    if args.plot:
        from .plotting import plot_metrics
        plot_metrics(rows, args.plot, str(spec))
    return EXIT_OK


MODEL_COLUMNS = ["N_p", "chi", "T", "inverse_T", "speedup", "efficiency", "Pi_max"]


def cmd_model(args) -> int:
    spec = MatrixSpec.parse(args.matrix)
    nps = parse_counts(args.np)
    params = _params(args, spec)
    if args.chi_values:
        chi = parse_pairs(args.chi_values)
        chi.setdefault(1, 0.0)
        missing = [n for n in nps if n not in chi]
        if missing:
            raise UsageError(f"--chi-values lacks process counts {missing}")
        D = create_source(spec).dim
        n_nzr = args.n_nzr if args.n_nzr else pattern_stats(create_source(spec)).n_nzr
    else:
        rows = _metric_rows(spec, nps, args.closed_form, None)
        chi = {r["N_p"]: r[args.chi] for r in rows}
        D, n_nzr = rows[0]["D"], rows[0]["n_nzr"]
    out = []
    T1 = None
    for N_p in nps:
        T = cheb_iter_time(D, N_p, args.nb, n_nzr, chi[N_p], params, args.drop_matrix_term)
        if T1 is None:
            T1 = T * nps[0]
        speedup = T1 / T
        out.append({"N_p": N_p, "chi": chi[N_p], "T": T, "inverse_T": 1.0 / T,
                    "speedup": speedup, "efficiency": speedup / N_p,
                    "Pi_max": efficiency_bound(chi[N_p], params)})
    if args.format == "json":
        emit(args, render_json({"matrix": str(spec), "params": params.__dict__,
                                "n_b": args.nb, "rows": out}))
    else:
        emit(args, render_csv(out, MODEL_COLUMNS))
    if args.plot:
        from .plotting import plot_model
        plot_model(out, args.plot, str(spec))
    return EXIT_OK


def _parse_empirical(text: str) -> dict[int, tuple[float, float]]:
    """``"2:1.39:1,8:1.92:2"`` into ``{N_col: (s, r)}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        try:
            ncol, s, r = part.split(":")
            out[int(ncol)] = (float(s), float(r))
        except ValueError as exc:
            raise UsageError(f"bad --override-empirical entry {part!r}; "
                             "expected N_col:s:r") from exc
    return out


def cmd_plan(args) -> int:
    degrees = parse_counts(args.degree)
    P = args.procs
    rows: list[dict] = []
    if args.override_empirical:
        emp = _parse_empirical(args.override_empirical)
        chi_P = None
        if args.chi_values:
            chi_P = parse_pairs(args.chi_values).get(P)
        for ncol, (s, r) in sorted(emp.items()):
            rep = amortization_report(s, r, degrees)
            rows.append({"N_col": ncol, "N_row": P // ncol if P % ncol == 0 else None,
                         "s": s, "r": r, "n_star": rep.n_star, "n_ceil": rep.n_ceil,
                         "S": rep.S,
                         "pillar_always": bool(ncol == P and chi_P is not None
                                               and pillar_always(chi_P))})
        spec = MatrixSpec.parse(args.matrix) if args.matrix else None
    else:
        if not args.matrix:
            raise UsageError("plan needs --matrix unless --override-empirical is given")
        spec = MatrixSpec.parse(args.matrix)
        divisors = [d for d in range(1, P + 1) if P % d == 0]
        needed = sorted({P // d for d in divisors} - {1})
        if args.chi_values:
            chi = parse_pairs(args.chi_values)
            missing = [n for n in needed if n not in chi]
            if missing:
                raise UsageError(f"--chi-values lacks process counts {missing}")
        else:
            mrows = _metric_rows(spec, needed, args.closed_form, None) if needed else []
            chi = {r["N_p"]: r[args.chi] for r in mrows}
        chi[1] = 0.0
        rows = plan_rows(chi, P, _params(args, spec), degrees)
    flat = []
    for r in rows:
        f = {k: v for k, v in r.items() if k != "S"}
        for n in degrees:
            f[f"S_{n}"] = r["S"][n]
        flat.append(f)
    columns = ["N_col", "N_row", "s", "r", "n_star", "n_ceil"] + \
              [f"S_{n}" for n in degrees] + ["pillar_always"]
    if args.format == "json":
        emit(args, render_json({"matrix": str(spec) if spec else None, "P": P,
                                "degrees": degrees, "rows": flat}))
    else:
        emit(args, render_csv(flat, columns))
    if args.plot:
        from .plotting import plot_plan
        plot_plan(rows, degrees, args.plot, f"P={P}")
    return EXIT_OK


SIMULATE_COLUMNS = ["phase", "entries", "predicted_entries", "bytes", "predicted_bytes",
                    "messages", "relative_deviation"]


def cmd_simulate(args) -> int:
    from .commstats import compute_comm_metrics
    from .simcluster import (CommLedger, dist_block_spmv, dist_reduce_gram, redistribute,
                             scatter)
    spec = MatrixSpec.parse(args.matrix)
    src = create_source(spec)
    D, P, C, nb = src.dim, args.procs, args.ncol, args.nb
    panel = make_layout(P, C, D, nb)
    stack = matching_stack(panel)
    plan = build_redistribution_plan(stack, panel)
    if args.dump_plan:
        write_atomic(args.dump_plan, plan.to_json(indent=2, sort_keys=True) + "\n")
    rng = np.random.default_rng(args.seed)
    X = rng.standard_normal((D, nb)).astype(src.dtype)
    ledger = CommLedger(P, S_d=np.dtype(src.dtype).itemsize)
    V = scatter(X, stack)
    for _ in range(args.reps):
        if C > 1:
            V, _ = redistribute(V, plan, ledger)
        V, _ = dist_block_spmv(src, V, ledger=ledger)
        if C > 1:
            V, _ = redistribute(V, plan.reversed(), ledger)
        dist_reduce_gram(V, ledger)
    n_vc = compute_comm_metrics(src, panel.row_partition()).n_vc.sum() if panel.N_row > 1 else 0
    vol = redistribution_volume(panel, ledger.S_d)
    predicted = {
        "spmv": int(n_vc) * nb * args.reps,
        "redistribute": int(round(2 * vol.entries_total)) * args.reps,
        "gram": (P - 1) * nb * nb * args.reps,
    }
    rows = []
    for phase, pred in predicted.items():
        got = ledger.total_entries(phase)
        dev = abs(got - pred) / pred if pred else float(got != 0)
        rows.append({"phase": phase, "entries": got, "predicted_entries": pred,
                     "bytes": got * ledger.S_d, "predicted_bytes": pred * ledger.S_d,
                     "messages": ledger.total_messages(phase), "relative_deviation": dev})
    if args.format == "json":
        emit(args, render_json({"matrix": str(spec), "P": P, "N_col": C, "n_b": nb,
                                "reps": args.reps, "rows": rows}))
    else:
        emit(args, render_csv(rows, SIMULATE_COLUMNS))
    return EXIT_OK


def _interval(text: str | None):
    if text is None:
        return None
    lo, hi = (float(x) for x in text.split(","))
    if not lo < hi:
        raise UsageError(f"empty interval {text!r}")
    return lo, hi


def cmd_fd(args) -> int:
    from .eigen import DegreeOverflow, filter_diagonalize
    spec = MatrixSpec.parse(args.matrix)
    target = args.target
    if target.lower() not in ("left", "right"):
        try:
            target = float(target)
        except ValueError as exc:
            raise UsageError(f"--target must be a number, 'left' or 'right': {target!r}") from exc
    try:
        result = filter_diagonalize(
            spec, target, N_t=args.nt, N_s=args.ns, P=args.procs, N_col=args.ncol,
            tol=args.tol, max_iterations=args.max_iter, seed=args.seed,
            degree_ratio=args.degree_ratio, max_degree=args.max_degree,
            target_interval=_interval(args.target_interval),
            search_interval=_interval(args.search_interval), params=_params(args, spec))
    except DegreeOverflow as exc:
        print(f"commlab fd: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    report = result.report()
    report["matrix"] = str(spec)
    text = render_json(report)
    if args.report:
        write_atomic(args.report, text)
    if args.format == "json":
        emit(args, text)
    else:
        rows = [{"index": i, "eigenvalue": float(v), "residual": float(r)}
                for i, (v, r) in enumerate(zip(result.eigenvalues, result.residuals))]
        emit(args, render_csv(rows, ["index", "eigenvalue", "residual"]))
    if args.plot:
        from .plotting import plot_fd
        plot_fd(report, args.plot, str(spec))
    if not result.converged:
        print(f"commlab fd: {result.state.diagnostic}", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="commlab", description="Communication metrics, performance model, "
                "layout simulator and filter diagonalization for block SpMV.")
    p.add_argument("--version", action="version", version=f"commlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, plot=True):
        sp.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="output format (default csv)")
        sp.add_argument("--output", "-o", help="write output to this file instead of stdout")
        if plot:
            sp.add_argument("--plot", help="also render a figure to this file (png, pdf, svg)")

    def model_opts(sp):
        sp.add_argument("--params", help="model parameter file (keys bm, bc, kappa, Sd, Si)")
        sp.add_argument("--preset", choices=sorted(REFERENCE_PARAMS),
                        help="reference parameter set used as the base")

    def metric_opts(sp):
        sp.add_argument("--chi", choices=("chi1", "chi2", "chi3"), default="chi3",
                        help="metric used as chi[N_p] in the model (default chi3)")
        sp.add_argument("--chi-values", help="explicit metric values, e.g. '16=3.37,32=4.17'")
        sp.add_argument("--closed-form", action="store_true",
                        help="use the slab closed form (Exciton, cubic TopIns)")

    sp = sub.add_parser("gen", help="pattern statistics and optional Matrix Market export")
    sp.add_argument("--matrix", required=True, help="matrix spec, e.g. 'Exciton,L=10'")
    sp.add_argument("--mtx", help="export to Matrix Market (D <= 1e6)")
    common(sp, plot=False)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("metrics", help="communication metrics for uniform row partitions")
    sp.add_argument("--matrix", required=True, help="matrix spec")
    sp.add_argument("--np", default="2..64", help="process counts, '2,4,8' or '2..64'")
    sp.add_argument("--closed-form", action="store_true",
                    help="slab closed form instead of enumeration (Exciton, cubic TopIns)")
    sp.add_argument("--raw", action="store_true", help="do not round to 2 decimals")
    common(sp)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("model", help="modelled Chebyshev filter iteration time")
    sp.add_argument("--matrix", required=True, help="matrix spec")
    sp.add_argument("--np", default="1..64", help="process counts")
    sp.add_argument("--nb", type=int, default=64, help="vectors per block (default 64)")
    sp.add_argument("--n-nzr", type=float, help="nonzeros per row when --chi-values is used")
    sp.add_argument("--drop-matrix-term", action="store_true",
                    help="omit the matrix-element memory traffic")
    model_opts(sp)
    metric_opts(sp)
    common(sp)
    sp.set_defaults(func=cmd_model)

    sp = sub.add_parser("plan", help="panel-shape recommendation with amortization")
    sp.add_argument("--matrix", help="matrix spec")
    sp.add_argument("--procs", type=int, required=True, help="process count P")
    sp.add_argument("--degree", default="10,20,30,50,100", help="filter degrees n")
    sp.add_argument("--override-empirical",
                    help="measured speedups and redistribution factors 'N_col:s:r,...'")
    model_opts(sp)
    metric_opts(sp)
    common(sp)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="ledgered simulation versus predicted volumes")
    sp.add_argument("--matrix", required=True, help="matrix spec")
    sp.add_argument("--procs", type=int, required=True, help="process count P")
    sp.add_argument("--ncol", type=int, default=1, help="panel columns N_col")
    sp.add_argument("--nb", type=int, default=8, help="vectors per block")
    sp.add_argument("--reps", type=int, default=1, help="repetitions")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--dump-plan", help="write the redistribution plan as JSON")
    common(sp, plot=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fd", help="filter diagonalization on the simulated grid")
    sp.add_argument("--matrix", required=True, help="matrix spec")
    sp.add_argument("--target", default="left", help="target value, 'left' or 'right'")
    sp.add_argument("--nt", type=int, default=8, help="wanted eigenpairs N_t")
    sp.add_argument("--ns", type=int, help="search vectors N_s (default 4 N_t)")
    sp.add_argument("--procs", type=int, default=1, help="process count P")
    sp.add_argument("--ncol", type=int, default=1, help="panel columns N_col")
    sp.add_argument("--tol", type=float, default=1e-10, help="residual tolerance")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--max-iter", type=int, default=100, help="filter application budget")
    sp.add_argument("--degree-ratio", type=float, default=0.1,
                    help="required outside/inside filter ratio")
    sp.add_argument("--max-degree", type=int, default=4096, help="degree cap")
    sp.add_argument("--target-interval", help="fixed target interval 'lo,hi'")
    sp.add_argument("--search-interval", help="fixed search interval 'lo,hi'")
    sp.add_argument("--report", help="write the JSON report to this file")
    model_opts(sp)
    common(sp)
    sp.set_defaults(func=cmd_fd)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, MatrixSpecError, ModelError, ValueError, OverflowError) as exc:
        print(f"commlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
