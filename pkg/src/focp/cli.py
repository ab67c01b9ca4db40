"""Command-line driver: build matrices, solve benchmarks, run studies.

Three subcommands, all emitting CSV artifacts:

``focp solve``
    transcribe one of the built-in benchmark problems, solve it, and
    write the node trajectories (tau, t, states, controls),
``focp matrix``
    write a dense fractional integration matrix,
``focp study``
    run a grid refinement study on the closed-form benchmark and
    write error norms with regression slopes.

A flat JSON config file may supply any of the option values; explicit
flags always win over file values.  All numbers are printed with 17
significant digits so identical configurations produce byte-identical
files.

Exit codes: 0 converged / success, 1 bad flags or invalid
configuration, 2 solver stopped without converging, 3 a model
callback failed to evaluate mid-solve.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bench
from .errors import EvaluationError, FocpError
from .fracint import Scheme, build_matrix, write_matrix_csv
from .nlp import SolverOptions, SolveStatus, solve
from .transcribe import build

__all__ = ["main", "build_parser"]

_FMT = "%.17g"

_DEFAULTS = {
    "example": None,
    "scheme": "tr",
    "alpha": 0.5,
    "n": 100,
    "ns": "100,200,400",
    "output": None,
    "workers": 1,
    "kkt_tol": 1e-10,
    "max_outer": 60,
    "max_inner": 500,
    "rho0": 10.0,
    "fd": False,
    "log": None,
}

_OUTPUT_DEFAULTS = {"solve": "solution.csv", "matrix": "matrix.csv", "study": "study.csv"}


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _fail(message: str) -> "SystemExit":
    print(f"focp: error: {message}", file=sys.stderr)
    return SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="focp",
        description="Solve fractional optimal control benchmarks by direct transcription.",
        epilog="Exit codes: 0 success, 1 bad flags, 2 not converged, 3 evaluation failure.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, with_n=True):
        p.add_argument("--scheme", choices=["gl", "tr", "si"], default=None,
                       help="integration scheme (default tr)")
        p.add_argument("--alpha", type=float, default=None,
                       help="fractional order in (0, 1] (default 0.5)")
        if with_n:
            p.add_argument("--n", type=int, default=None,
                           help="number of grid intervals (default 100)")
        p.add_argument("--output", "-o", default=None, help="output CSV path")
        p.add_argument("--config", default=None,
                       help="flat JSON file with option values; flags win")

    def solver_opts(p):
        p.add_argument("--kkt-tol", type=float, default=None, dest="kkt_tol",
                       help="optimality tolerance (default 1e-10)")
        p.add_argument("--max-outer", type=int, default=None, dest="max_outer")
        p.add_argument("--max-inner", type=int, default=None, dest="max_inner")
        p.add_argument("--rho0", type=float, default=None, help="initial penalty")
        p.add_argument("--fd", action="store_const", const=True, default=None,
                       help="use finite-difference gradients instead of analytic ones")
        p.add_argument("--log", default=None, help="per-iteration CSV trace path")

    p_solve = sub.add_parser("solve", help="solve a benchmark problem")
    p_solve.add_argument("--example", type=int, default=None, help="benchmark id, 1..4")
    common(p_solve)
    solver_opts(p_solve)

    p_matrix = sub.add_parser("matrix", help="write a fractional integration matrix")
    common(p_matrix)

    p_study = sub.add_parser("study", help="grid refinement study on the exact benchmark")
    p_study.add_argument("--example", type=int, default=None,
                         help="benchmark id (only 1 has an exact optimum)")
    p_study.add_argument("--ns", default=None,
                         help="comma-separated grid sizes (default 100,200,400)")
    p_study.add_argument("--workers", type=int, default=None,
                         help="solve grids in parallel (default 1)")
    common(p_study, with_n=False)
    solver_opts(p_study)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """Fill unset flags from the JSON config file, then from defaults."""
    conf = dict(vars(args))
    path = conf.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise _fail(f"cannot read config {path}: {exc}")
        if not isinstance(loaded, dict):
            raise _fail(f"config {path} must hold a JSON object")
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise _fail(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in loaded.items():
            if key in conf and conf[key] is None:
                conf[key] = value
    for key, value in _DEFAULTS.items():
        if key in conf and conf[key] is None:
            conf[key] = value
    if conf.get("output") is None:
        conf["output"] = _OUTPUT_DEFAULTS[conf["command"]]
    return conf


def _solver_options(conf: dict) -> SolverOptions:
    return SolverOptions(
        kkt_tol=float(conf["kkt_tol"]),
        max_outer=int(conf["max_outer"]),
        max_inner=int(conf["max_inner"]),
        rho0=float(conf["rho0"]),
        use_analytic_derivatives=not bool(conf["fd"]),
        iteration_log_path=conf["log"],
    )


def _parse_ns(raw) -> list:
    if isinstance(raw, str):
        items = [part for part in raw.replace(" ", "").split(",") if part]
    elif isinstance(raw, (list, tuple)):
        items = list(raw)
    else:
        raise _fail(f"cannot parse grid list {raw!r}")
    try:
        return [int(item) for item in items]
    except (TypeError, ValueError):
        raise _fail(f"grid sizes must be integers, got {raw!r}")


def _write_rows(path, header: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_FMT % v if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def cmd_solve(conf: dict) -> int:
    if conf["example"] is None:
        raise _fail("solve needs --example (1..4)")
    example = bench.ExampleId.coerce(conf["example"])
    problem = bench.make_example(example, float(conf["alpha"]))
    nlp_obj = build(problem, conf["scheme"], int(conf["n"]))
    z0 = bench.initial_guess(example, nlp_obj)
    solution = solve(nlp_obj, z0, _solver_options(conf))

    X, U, tf = nlp_obj.split(solution.z)
    tf_val = float(tf) if tf is not None else float(problem.t_f)
    tau = nlp_obj.tau
    p, q = X.shape[1], U.shape[1]
    header = "tau,t," + ",".join(f"x_{j + 1}" for j in range(p)) + "," + ",".join(
        f"u_{j + 1}" for j in range(q)
    )
    table = np.column_stack([tau, tf_val * tau, X, U])
    _write_rows(conf["output"], header, (tuple(float(v) for v in row) for row in table))

    print(
        "J_n=%.12g t_f=%.12g kkt=%.3g outer=%d inner=%d status=%s"
        % (
            solution.objective,
            tf_val,
            solution.kkt,
            solution.outer_iters,
            solution.inner_iters,
            solution.status.value,
        )
    )
    return 0 if solution.status is SolveStatus.CONVERGED else 2


def cmd_matrix(conf: dict) -> int:
    matrix = build_matrix(conf["scheme"], float(conf["alpha"]), int(conf["n"]))
    write_matrix_csv(matrix, conf["output"])
    print(f"wrote {conf['output']}: {matrix.n + 1}x{matrix.n + 1} "
          f"{matrix.scheme.value} matrix, alpha={matrix.alpha:g}")
    return 0


def _study_point(scheme: Scheme, alpha: float, n: int, options: SolverOptions):
    """One grid of the refinement study; module level so pools can pickle it."""
    problem = bench.make_example(bench.ExampleId.EX1, alpha)
    nlp_obj = build(problem, scheme, n)
    solution = solve(nlp_obj, bench.initial_guess(bench.ExampleId.EX1, nlp_obj), options)
    X, U, tf = nlp_obj.split(solution.z)
    t = (float(tf) if tf is not None else float(problem.t_f)) * nlp_obj.tau
    exact = bench.exact_solution(bench.ExampleId.EX1, alpha)
    norms = bench.error_norms(X, exact.x(t), U, exact.u(t))
    return norms.e_u, norms.e_x, solution.status.value


def cmd_study(conf: dict) -> int:
    if conf["example"] is not None and int(conf["example"]) != 1:
        raise _fail("studies need the closed-form benchmark: --example 1")
    scheme = Scheme.coerce(conf["scheme"])
    alpha = float(conf["alpha"])
    ns = _parse_ns(conf["ns"])
    if not ns:
        raise _fail("empty grid list")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise _fail(f"grid sizes must be strictly increasing, got {ns}")
    if scheme.needs_even_n and any(n % 2 for n in ns):
        raise _fail("simpson requires even n throughout the grid list")
    if bench.exact_solution(bench.ExampleId.EX1, alpha) is None:
        raise _fail(f"no closed-form optimum at alpha={alpha:g}; use alpha=0.5")
    options = _solver_options(conf)
    workers = int(conf["workers"])

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_study_point, [scheme] * len(ns), [alpha] * len(ns), ns, [options] * len(ns)))
        e_u, e_x, statuses = [], [], []
        for (eu, ex_, st) in points:
            e_u.append(eu)
            e_x.append(ex_)
            statuses.append(st)
            if st != SolveStatus.CONVERGED.value:
                break
        done = len(e_u)
        study = bench.ConvergenceStudy(
            scheme=scheme.value,
            ns=tuple(ns[:done]),
            e_u=tuple(e_u),
            e_x=tuple(e_x),
            slope_u=bench._ls_order(ns[:done], e_u),
            slope_x=bench._ls_order(ns[:done], e_x),
            statuses=tuple(statuses),
            complete=done == len(ns) and statuses[-1] == SolveStatus.CONVERGED.value,
        )
    else:
        study = bench.convergence_study(bench.ExampleId.EX1, scheme, ns, alpha, options)

    rows = [(n, float(eu), float(ex_)) for n, eu, ex_ in study.rows()]
    rows.append(("slope", float(study.slope_u), float(study.slope_x)))
    _write_rows(conf["output"], "n,E_u,E_x", rows)

    print(
        "scheme=%s slope_u=%.4g slope_x=%.4g grids=%d complete=%s"
        % (study.scheme, study.slope_u, study.slope_x, len(study.ns), study.complete)
    )
    return 0 if study.complete else 2


_COMMANDS = {"solve": cmd_solve, "matrix": cmd_matrix, "study": cmd_study}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        conf = _merge_config(args)
        return _COMMANDS[conf["command"]](conf)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except EvaluationError as exc:
        print(f"focp: evaluation failure: {exc}", file=sys.stderr)
        return 3
    except FocpError as exc:
        print(f"focp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
