"""Command line: generate problems, solve them and verify solutions.

Exit codes: 0 success (optimal, gap reached, or a budget ran out with an
incumbent), 2 infeasible, 3 numerical failure, 4 verification mismatch,
5 budget exhausted without any feasible design.
"""

import argparse
import json
import logging
import math
import sys
import time

import numpy as np

from . import __version__
from .bnb import BnBConfig, PairSymmetry, block_design_epsilon, solve_misocp, tree_count_upper_bound, write_trace
from .conic import SolverConfig
from .criteria import APPROX_TOL, Criterion, solve_criterion
from .heuristics import ExchangeConfig, kl_exchange
from .oracle import kiefer_wolfowitz_certificate, phi_direct
from .workbench import (DesignProblem, WeightDomain, block_ak_K, block_model, concurrence_graph,
                        equireplicate_domain, quadratic_grid_model, section2_domain, section2_model,
                        uranium_domain)

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3
EXIT_MISMATCH = 4
EXIT_NO_INCUMBENT = 5

SYMMETRIC_CRITERIA = ("D", "G", "I")

log = logging.getLogger("optdesign")


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _write(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _load_K(path):
    if path is None:
        return None
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data["K"]
    return np.asarray(data, dtype=float)


def manifest(args, wall, extra=None):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    out = {
        "command": args.command,
        "input": getattr(args, "input", None),
        "criterion": getattr(args, "criterion", None),
        "config": cfg,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_seconds": wall,
        "argv": sys.argv[1:],
    }
    if extra:
        out.update(extra)
    return out


def _criterion(args, problem):
    kind = args.criterion or problem.criterion
    K = _load_K(args.K) if args.K else (problem.K if kind == problem.criterion else None)
    if kind in ("DK", "AK", "c") and K is None:
        raise SystemExit(f"criterion {kind} needs --K")
    return Criterion(kind, K)


def _is_simplex(domain):
    return (domain.total == 1.0 and not domain.eq and not domain.ineq and not domain.integer
            and np.all(domain.lower == 0) and np.all(domain.upper >= 1.0))


# ----------------------------------------------------------------- commands

def cmd_gen(args):
    if args.kind == "section2":
        model, domain = section2_model(), section2_domain(args.constrained)
        meta = {"kind": "section2", "constrained": args.constrained}
        if args.N is not None:
            dom = WeightDomain.exact(3, args.N)
            for a, r, sense in domain.ineq:
                dom.add_ineq(a, r * args.N, sense)
            domain = dom
            meta["N"] = args.N
        problem = DesignProblem(model, "D", None, domain, meta)
    elif args.kind == "block":
        if args.t is None or args.n is None:
            raise SystemExit("gen block needs --t and --n")
        model = block_model(args.t)
        domain = equireplicate_domain(args.t, args.n) if args.equireplicate else WeightDomain.exact(model.s, args.n)
        problem = DesignProblem(model, "D", None, domain,
                                {"kind": "block", "t": args.t, "N": args.n, "equireplicate": args.equireplicate})
    elif args.kind == "uranium":
        model = quadratic_grid_model(rescale=not args.raw)
        domain = uranium_domain(with_cost=args.cost, integer=True)
        problem = DesignProblem(model, "D", None, domain,
                                {"kind": "uranium", "cost": args.cost, "rescaled": not args.raw})
    else:
        raise SystemExit(f"unknown problem kind {args.kind!r}")
    _write(problem.to_dict(), args.out)
    return EXIT_OK


def cmd_approx(args):
    t0 = time.perf_counter()
    problem = DesignProblem.load(args.input)
    crit = _criterion(args, problem)
    domain = problem.domain.relaxed() if problem.domain.integer else problem.domain
    res = solve_criterion(crit, problem.model, domain, SolverConfig(rel_gap_tol=args.tol, feas_tol=args.tol))
    out = {"kind": "approximate", "problem": problem.to_dict(), "criterion": crit.kind,
           "K": None if crit.K is None else crit.K.tolist(), "result": res.to_dict()}
    if res.status in ("Optimal", "OptimalInaccurate") and crit.kind == "D" and _is_simplex(domain):
        out["certificate"] = kiefer_wolfowitz_certificate(problem.model, res.weights).to_dict()
    out["manifest"] = manifest(args, time.perf_counter() - t0)
    _write(out, args.out)
    if res.status in ("Infeasible", "PrimalInfeasible", "DualInfeasible"):
        print(f"status: {res.status}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if res.status not in ("Optimal", "OptimalInaccurate"):
        print(f"status: {res.status}", file=sys.stderr)
        return EXIT_NUMERICAL
    if res.status != "Optimal":
        print(f"status: {res.status}", file=sys.stderr)
    return EXIT_OK


def _exact_domain(problem, N):
    domain = problem.domain
    if not domain.integer:
        if N is None or not _is_simplex(domain):
            raise SystemExit("exact designs need an integer domain or -N on an unconstrained problem")
        return WeightDomain.exact(domain.s, N)
    if N is None or N == domain.total:
        return domain
    meta = problem.meta
    if meta.get("kind") == "block":
        t = meta["t"]
        return equireplicate_domain(t, N) if meta.get("equireplicate") else WeightDomain.exact(domain.s, N)
    if domain.eq or domain.ineq:
        raise SystemExit("-N can only override the size of unconstrained or block problems")
    return WeightDomain.exact(domain.s, N)


def cmd_exact(args):
    t0 = time.perf_counter()
    problem = DesignProblem.load(args.input)
    crit = _criterion(args, problem)
    domain = _exact_domain(problem, args.N)
    meta = problem.meta
    block = meta.get("kind") == "block"
    N = int(round(domain.total)) if domain.total is not None else None

    integer_power = None
    if args.epsilon == "auto-tree":
        if not block or crit.kind != "D":
            raise SystemExit("--epsilon auto-tree applies to D-optimal block designs only")
        eps = block_design_epsilon(problem.model.m, tree_count_upper_bound(meta["t"], N))
        integer_power = problem.model.m
    else:
        eps = float(args.epsilon)
    if block and crit.kind == "D":
        integer_power = problem.model.m
    symmetry = None
    if block and crit.kind in SYMMETRIC_CRITERIA and not args.no_symmetry:
        symmetry = PairSymmetry(meta["t"], domain)

    initial = None
    if args.heuristic_runs > 0 and domain.implied_total() is not None:
        ex = kl_exchange(crit, problem.model, domain, ExchangeConfig(runs=args.heuristic_runs, seed=args.seed))
        initial = ex.design
    cfg = BnBConfig(epsilon=eps, node_limit=args.node_limit, time_limit=args.time_limit,
                    branch_rule=args.branch_rule, node_order=args.node_order, threads=args.threads,
                    integer_power=integer_power, solver=SolverConfig(rel_gap_tol=args.tol, feas_tol=args.tol))
    res = solve_misocp(crit, problem.model, domain, cfg, initial=initial, symmetry=symmetry)
    if args.trace:
        write_trace(args.trace, res.trace)
    solved = DesignProblem(problem.model, crit.kind, crit.K, domain, meta)
    out = {"kind": "exact", "problem": solved.to_dict(), "criterion": crit.kind,
           "K": None if crit.K is None else crit.K.tolist(), "epsilon": eps, "result": res.to_dict()}
    if res.incumbent is not None:
        if block:
            out["spanning_trees"] = concurrence_graph(res.incumbent, meta["t"]).spanning_trees()
    out["manifest"] = manifest(args, time.perf_counter() - t0)
    _write(out, args.out)
    print(f"status: {res.status}  value: {res.incumbent_value:.10g}  bound: {res.best_bound:.10g}  "
          f"nodes: {res.nodes_explored}", file=sys.stderr)
    if res.status == "Infeasible":
        return EXIT_INFEASIBLE
    if res.incumbent is None:
        return EXIT_NO_INCUMBENT
    return EXIT_OK


def verify_solution(sol, tol=1e-6):
    """Recompute everything a solution file claims; returns (report, ok)."""
    problem = DesignProblem.from_dict(sol["problem"])
    kind = sol["criterion"]
    K = None if sol.get("K") is None else np.asarray(sol["K"], dtype=float)
    res = sol["result"]
    w = res.get("weights") if sol["kind"] == "approximate" else res.get("incumbent")
    if w is None:
        return {"ok": False, "reason": "solution has no design"}, False
    w = np.asarray(w, dtype=float)
    reported = res.get("phi") if sol["kind"] == "approximate" else res.get("incumbent_value")
    reported = -math.inf if reported is None else float(reported)
    direct = phi_direct(kind, problem.model, w, K)
    if math.isfinite(direct) and math.isfinite(reported):
        err = abs(direct - reported) / max(1.0, abs(direct))
    else:
        err = 0.0 if direct == reported else math.inf
    report = {"criterion": kind, "reported_phi": _finite(reported), "direct_phi": _finite(direct),
              "relative_error": _finite(err), "tol": tol}
    ok = err <= tol
    domain = problem.domain
    if sol["kind"] == "exact":
        feasible = domain.contains(w)
        report["domain_feasible"] = bool(feasible)
        ok &= feasible
        meta = problem.meta
        if meta.get("kind") == "block":
            trees = concurrence_graph(w, meta["t"]).spanning_trees()
            report["spanning_trees"] = trees
            if kind == "D":
                m = problem.model.m
                match = abs(round(direct ** m) - trees) == 0 if direct > 0 else trees == 0
                report["tree_count_matches_phi"] = bool(match)
                ok &= match
            if "spanning_trees" in sol:
                ok &= sol["spanning_trees"] == trees
                report["reported_spanning_trees"] = sol["spanning_trees"]
    else:
        feasible = domain.relaxed().contains(w, tol=1e-6) if domain.integer else domain.contains(w, tol=1e-6)
        report["domain_feasible"] = bool(feasible)
        ok &= feasible
        if kind == "D" and _is_simplex(domain.relaxed() if domain.integer else domain):
            cert = kiefer_wolfowitz_certificate(problem.model, w)
            report["certificate"] = cert.to_dict()
            ok &= cert.passed
    report["ok"] = bool(ok)
    return report, bool(ok)


def cmd_verify(args):
    t0 = time.perf_counter()
    with open(args.input) as fh:
        sol = json.load(fh)
    report, ok = verify_solution(sol, args.tol)
    report["manifest"] = manifest(args, time.perf_counter() - t0)
    _write(report, args.out)
    return EXIT_OK if ok else EXIT_MISMATCH


# ------------------------------------------------------------------ parser

def _add_solver_flags(p, tol):
    p.add_argument("input", help="problem file (JSON)")
    p.add_argument("--criterion", choices=["D", "A", "G", "I", "c", "DK", "AK"], default=None,
                   help="criterion (default: the one stored in the problem file)")
    p.add_argument("--K", default=None, help="JSON file with the K matrix (or vector for c)")
    p.add_argument("--tol", type=float, default=tol, help="cone solver tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output JSON file (default stdout)")


def build_parser():
    parser = argparse.ArgumentParser(prog="optdesign", description="Optimal experimental designs by cone programming.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a fixture problem file")
    g.add_argument("kind", choices=["section2", "block", "uranium"])
    g.add_argument("--constrained", action="store_true", help="section2: add w1 >= w2 + 0.25")
    g.add_argument("--N", type=int, default=None, help="section2: exact design of size N")
    g.add_argument("--t", type=int, default=None, help="block: number of treatments")
    g.add_argument("--n", type=int, default=None, help="block: number of blocks")
    g.add_argument("--equireplicate", action="store_true")
    g.add_argument("--cost", action="store_true", help="uranium: add the budget constraint")
    g.add_argument("--raw", action="store_true", help="uranium: keep the original factor units")
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("approx", help="approximate optimal design")
    _add_solver_flags(a, APPROX_TOL)
    a.set_defaults(func=cmd_approx)

    e = sub.add_parser("exact", help="exact optimal design by branch-and-bound")
    _add_solver_flags(e, 1e-8)
    e.add_argument("-N", "--N", type=int, default=None, help="override the number of trials")
    e.add_argument("--epsilon", default="1e-4", help="relative gap, or 'auto-tree' for block designs")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--node-limit", type=int, default=None)
    e.add_argument("--time-limit", type=float, default=None)
    e.add_argument("--node-order", choices=["BestBound", "DepthFirst"], default="BestBound")
    e.add_argument("--branch-rule", choices=["MostFractional", "MaxWeight"], default="MostFractional")
    e.add_argument("--heuristic-runs", type=int, default=20, help="exchange runs seeding the incumbent (0: none)")
    e.add_argument("--no-symmetry", action="store_true", help="block designs: disable orbital branching")
    e.add_argument("--trace", default=None, help="CSV file for the bound trace")
    e.set_defaults(func=cmd_exact)

    v = sub.add_parser("verify", help="recompute and check a solution file")
    v.add_argument("input")
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
