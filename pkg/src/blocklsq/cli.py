"""Command-line front end.

Exit codes of ``solve``: 0 converged, 2 hit ``--max-iters``, 3 invalid
input or failed validation, 4 diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admm import AdmmParams, NumericalConfigurationError
from .generators import gen_appendixA, gen_fig3, gen_grid
from .graph import GraphError
from .oracle import solve_problem
from .problem import ProblemError, validate
from .problem_file import load_problem, save_problem
from .reformulation import ConfigurationError, compile_problem
from .simulator import DimensionCapError, InsufficientDataError, fit_rate, linearize_iteration, run, spectral_report

log = logging.getLogger("blocklsq")

EXIT_OK, EXIT_MAX_ITERS, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3, 4
CSV_HEADER = ["iter", "primal_inf", "consensus_inf", "delta_w", "cost", "cost_gap", "err_x", "messages", "elapsed_ms"]


@dataclass
class RunConfig:
    problem_path: str | None = None
    generator: str | None = None
    generator_params: dict = field(default_factory=dict)
    params: AdmmParams = field(default_factory=AdmmParams)
    metrics_path: str | None = None
    summary_path: str | None = None
    decimation: int = 1
    oracle: bool = True
    diagnostics: bool = False
    workers: int | None = None
    random_init: int | None = None

    def __post_init__(self):
        if (self.problem_path is None) == (self.generator is None):
            raise ValueError("exactly one of a problem file or a generator is required")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_metrics_csv(path, metrics) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for m in metrics:
            w.writerow([_fmt(v) for v in (m.s, m.primal_inf, m.consensus_inf, m.delta_w, m.cost,
                                          m.cost_gap, m.err_x, m.messages, m.elapsed_ms)])


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def load_source(cfg: RunConfig):
    if cfg.problem_path is not None:
        return load_problem(cfg.problem_path)
    gp = cfg.generator_params
    if cfg.generator == "grid":
        return gen_grid(gp.get("rows", 4), gp.get("cols", 6), gp.get("n_local", 20), gp.get("m_coupled", 5),
                        gp.get("n_shared"), gp.get("seed", 0))
    if cfg.generator == "fig3":
        return gen_fig3(gp.get("which", 1), gp.get("a2_entry", 3.0))
    if cfg.generator == "appendixA":
        return gen_appendixA(gp.get("row_dims") or (2,) * 6, gp.get("col_dims") or (2,) * 4, gp.get("seed", 0))
    raise ValueError(f"unknown generator {cfg.generator!r}")


def _workers(requested: int | None) -> int:
    cap = os.environ.get("BLOCKLSQ_THREADS")
    n = requested if requested is not None else (int(cap) if cap else 1)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


def cmd_solve(cfg: RunConfig) -> int:
    try:
        problem, graph = load_source(cfg)
    except (ProblemError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = validate(problem, graph)
    for msg in report.warnings:
        log.warning(msg)
    if not report.passed:
        for msg in report.errors:
            print(f"validation: {msg}", file=sys.stderr)
        return EXIT_INVALID
    try:
        cp = compile_problem(problem, graph, check=False)
        sol = solve_problem(problem) if cfg.oracle else None
        init = np.random.default_rng(cfg.random_init) if cfg.random_init is not None else None
        result = run(cp, cfg.params, oracle=sol, init=init, decimation=cfg.decimation,
                     workers=_workers(cfg.workers))
    except (ConfigurationError, NumericalConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if cfg.metrics_path:
        write_metrics_csv(cfg.metrics_path, result.metrics)
    final = result.final
    summary = {
        "termination": result.reason,
        "rounds": result.rounds,
        "agents": problem.N,
        "state_dim": int(result.state.w.size),
        "primal_inf": final.primal_inf if final else None,
        "consensus_inf": final.consensus_inf if final else None,
        "delta_w": final.delta_w if final else None,
        "cost": final.cost if final else None,
        "cost_gap": final.cost_gap if final else None,
        "err_x": final.err_x if final else None,
        "flow_antisymmetry_inf": result.network.flow_antisymmetry_inf(),
        "max_agent_seconds": max(result.agent_seconds.values(), default=0.0),
        "elapsed_ms": final.elapsed_ms if final else 0.0,
        "z": cp.assemble_z({i: result.network.states[i].x for i in cp.agents}).tolist(),
    }
    if sol is not None:
        summary.update(psi_opt=sol.psi_opt, rank=sol.rank, unique=sol.unique)
    try:
        fit = fit_rate(result.metrics)
        summary["rate"] = {"rate": fit.rate, "correlation": fit.correlation, "decades": fit.decades,
                           "points": fit.points, "stalled": fit.stalled}
    except InsufficientDataError as exc:
        summary["rate"] = {"error": str(exc)}
    if cfg.diagnostics:
        try:
            summary["spectrum"] = spectral_report(linearize_iteration(cp, cfg.params))
        except DimensionCapError as exc:
            summary["spectrum"] = {"error": str(exc)}
    text = json.dumps(summary, indent=2)
    if cfg.summary_path:
        Path(cfg.summary_path).write_text(text + "\n", encoding="utf-8")
    print(text)
    return {"converged": EXIT_OK, "max_iters": EXIT_MAX_ITERS, "diverged": EXIT_DIVERGED}[result.reason]


def _add_source(sp: argparse.ArgumentParser) -> None:
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--problem", help="problem JSON file")
    src.add_argument("--generator", choices=("grid", "fig3", "appendixA"))
    sp.add_argument("--rows", type=int, default=4)
    sp.add_argument("--cols", type=int, default=6)
    sp.add_argument("--n-local", type=int, default=20)
    sp.add_argument("--m-coupled", type=int, default=5)
    sp.add_argument("--n-shared", type=int, default=None)
    sp.add_argument("--which", type=int, choices=(1, 2), default=1)
    sp.add_argument("--a2-entry", type=float, default=3.0, help="entry (3,2) of the second 5-agent system")
    sp.add_argument("--row-dims", type=_int_list, default=None, help="comma-separated, appendixA only")
    sp.add_argument("--col-dims", type=_int_list, default=None, help="comma-separated, appendixA only")
    sp.add_argument("--seed", type=int, default=0)


def _add_params(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--max-iters", type=int, default=20000)
    sp.add_argument("--tol-primal", type=float, default=1e-9)
    sp.add_argument("--tol-delta", type=float, default=1e-9)
    sp.add_argument("--g-policy", choices=("zero", "shift"), default="zero")
    sp.add_argument("--eps-shift", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blocklsq", description="Distributed least squares for block-partitioned systems.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run the distributed iteration")
    _add_source(sp)
    _add_params(sp)
    sp.add_argument("--metrics", help="CSV path for per-round metrics")
    sp.add_argument("--summary", help="JSON path for the run summary")
    sp.add_argument("--decimation", type=int, default=1)
    sp.add_argument("--no-oracle", action="store_true")
    sp.add_argument("--spectrum", action="store_true", help="also run the iteration-map diagnostic")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--random-init", type=int, default=None, metavar="SEED")

    sp = sub.add_parser("validate", help="check connectivity and the h split")
    _add_source(sp)

    sp = sub.add_parser("generate", help="write a generated instance to a problem file")
    _add_source(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("spectrum", help="eigenvalues of the affine round map")
    _add_source(sp)
    _add_params(sp)
    sp.add_argument("--cap", type=int, default=400)

    sp = sub.add_parser("oracle", help="centralized minimum-norm least-squares solution")
    _add_source(sp)
    return parser


def _config(ns) -> RunConfig:
    gen_params = {
        "rows": ns.rows, "cols": ns.cols, "n_local": ns.n_local, "m_coupled": ns.m_coupled,
        "n_shared": ns.n_shared, "which": ns.which, "a2_entry": ns.a2_entry,
        "row_dims": ns.row_dims, "col_dims": ns.col_dims, "seed": ns.seed,
    }
    kw = {}
    if hasattr(ns, "rho"):
        kw["params"] = AdmmParams(rho=ns.rho, g_policy=ns.g_policy, eps_shift=ns.eps_shift,
                                  max_iters=ns.max_iters, tol_primal=ns.tol_primal, tol_delta=ns.tol_delta)
    if ns.command == "solve":
        kw.update(metrics_path=ns.metrics, summary_path=ns.summary, decimation=ns.decimation,
                  oracle=not ns.no_oracle, diagnostics=ns.spectrum, workers=ns.workers,
                  random_init=ns.random_init)
    return RunConfig(problem_path=ns.problem, generator=ns.generator, generator_params=gen_params, **kw)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(ns)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if ns.command == "solve":
        return cmd_solve(cfg)
    try:
        problem, graph = load_source(cfg)
    except (ProblemError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if ns.command == "validate":
        report = validate(problem, graph)
        print(json.dumps(report.to_dict(), indent=2))
        return EXIT_OK if report.passed else EXIT_INVALID
    if ns.command == "generate":
        save_problem(ns.out, problem, graph)
        return EXIT_OK
    if ns.command == "oracle":
        sol = solve_problem(problem)
        print(json.dumps({"z_star": sol.z_star.tolist(), "psi_opt": sol.psi_opt, "rank": sol.rank,
                          "unique": sol.unique}, indent=2))
        return EXIT_OK
    # spectrum
    try:
        cp = compile_problem(problem, graph)
        lin = linearize_iteration(cp, cfg.params, cap=ns.cap)
    except (ConfigurationError, NumericalConfigurationError, DimensionCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rep = spectral_report(lin)
    print(json.dumps(rep, indent=2))
    return EXIT_OK if rep["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
