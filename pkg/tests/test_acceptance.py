"""Acceptance suite: one PASS/FAIL line per criterion.

Every check compares against an oracle computed here from first
principles (numpy pseudo-inverses, explicit enumeration, Kirchhoff tree
counts) or against published reference numbers quoted as constants.  The
lines are collected in ``RESULTS`` and printed again at the end of the
session by ``conftest.py``.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.linalg import null_space

from _instances import random_instance, random_model
from optdesign.bnb import BnBConfig, PairSymmetry, block_design_epsilon, solve_misocp, tree_count_upper_bound
from optdesign.conic import ConicProgram, Expr, Status, solve
from optdesign.criteria import Criterion, evaluate_fixed, solve_criterion
from optdesign.heuristics import ExchangeConfig, kl_exchange
from optdesign.linalg import cholesky_information
from optdesign.oracle import efficiency, former_socp_fixture, kiefer_wolfowitz_certificate
from optdesign.workbench import (WeightDomain, block_ak_K, block_model, equireplicate_domain, pairs,
                                 quadratic_grid_model, section2_domain, section2_model, uranium_domain)

RESULTS = {}


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


# ------------------------------------------------------------ oracles

def info(model, w):
    return sum(wi * A @ A.T for wi, A in zip(w, model.matrices))


def estimable(M, K, tol=1e-7):
    P = M @ np.linalg.pinv(M, rcond=1e-10, hermitian=True)
    return np.linalg.norm(P @ K - K) <= tol * max(1.0, np.linalg.norm(K))


def dk_value(model, w, K):
    M = info(model, w)
    if not estimable(M, K):
        return 0.0
    C = K.T @ np.linalg.pinv(M, rcond=1e-10, hermitian=True) @ K
    return float(np.linalg.det(C) ** (-1.0 / K.shape[1]))


def ak_trace(model, w, K):
    M = info(model, w)
    if not estimable(M, K):
        return math.inf
    return float(np.trace(K.T @ np.linalg.pinv(M, rcond=1e-10, hermitian=True) @ K))


def g_max_variance(model, w):
    M = info(model, w)
    if not all(estimable(M, A) for A in model.matrices):
        return math.inf
    Mp = np.linalg.pinv(M, rcond=1e-10, hermitian=True)
    return max(float(np.trace(A.T @ Mp @ A)) for A in model.matrices)


def criterion_value(kind, model, w):
    if kind == "D":
        M = info(model, w)
        sign, logdet = np.linalg.slogdet(M)
        return math.exp(logdet / model.m) if sign > 0 and np.linalg.matrix_rank(M) == model.m else 0.0
    if kind == "A":
        t = ak_trace(model, w, np.eye(model.m))
        return 0.0 if math.isinf(t) else 1.0 / t
    return -g_max_variance(model, w)


def schur_oracle(H, K):
    m, k = K.shape
    U = np.hstack([null_space(K.T), K])
    Mt = np.linalg.solve(U, np.linalg.solve(U, H @ H.T).T)
    M11, M12, M22 = Mt[:m - k, :m - k], Mt[:m - k, m - k:], Mt[m - k:, m - k:]
    return M22 - M12.T @ np.linalg.pinv(M11, rcond=1e-10) @ M12


def kirchhoff(w, t):
    L = np.zeros((t, t))
    for wij, (i, j) in zip(w, pairs(t)):
        L[i, i] += wij
        L[j, j] += wij
        L[i, j] -= wij
        L[j, i] -= wij
    return int(round(np.linalg.det(L[1:, 1:])))


def enumerate_exact(kind, model, domain):
    N, s = int(round(domain.total)), model.s
    best = -math.inf
    for combo in itertools.combinations_with_replacement(range(s), N):
        w = np.bincount(combo, minlength=s).astype(float)
        if domain.contains(w):
            best = max(best, criterion_value(kind, model, w))
    return best


def block_run(t, N, time_limit, runs=20):
    model, dom = block_model(t), equireplicate_domain(t, N)
    seed = kl_exchange("D", model, dom, ExchangeConfig(runs=runs))
    eps = block_design_epsilon(t - 1, tree_count_upper_bound(t, N))
    cfg = BnBConfig(epsilon=eps, integer_power=t - 1, time_limit=time_limit)
    return solve_misocp("D", model, dom, cfg, initial=seed.design, symmetry=PairSymmetry(t, dom))


def trace_is_monotone(trace):
    lowers = [lo for _, lo, _ in trace]
    uppers = [up for _, _, up in trace]
    return (all(a <= b + 1e-12 for a, b in zip(lowers, lowers[1:]))
            and all(a >= b - 1e-12 for a, b in zip(uppers, uppers[1:])))


# ----------------------------------------------------------- criteria

def test_criterion_01_three_point_example():
    t0 = time.perf_counter()
    model = section2_model()
    free = solve_criterion(Criterion("D"), model, section2_domain())
    con = solve_criterion(Criterion("D"), model, section2_domain(True))
    old, _ = former_socp_fixture(model, section2_domain(True))
    wall = time.perf_counter() - t0
    ok = (np.max(np.abs(free.weights - 1 / 3)) <= 1e-4
          and np.max(np.abs(con.weights - [0.4583, 0.2083, 0.3333])) <= 1e-3
          and np.max(np.abs(old - [0.4482, 0.1982, 0.3536])) <= 1e-3
          and criterion_value("D", model, old) < criterion_value("D", model, con.weights)
          and wall < 5.0)
    report(1, ok, f"free {np.round(free.weights, 5)}, constrained {np.round(con.weights, 4)}, "
                  f"single-bound program {np.round(old, 4)}, {wall:.2f}s")


def test_criterion_02_dk_matches_direct_formula():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst, zeros, bad = 0.0, 0, []
    for trial in range(120):
        model, w, K = random_instance(rng)
        phi, _ = evaluate_fixed(Criterion("DK", K), model, w)
        ref = dk_value(model, w, K)
        if ref == 0.0:
            zeros += 1
            if abs(phi) > 1e-6:
                bad.append(trial)
            continue
        err = abs(phi - ref) / ref
        worst = max(worst, err)
        if not err <= 1e-6:
            bad.append(trial)
    wall = time.perf_counter() - t0
    report(2, not bad and wall < 120, f"120 instances ({zeros} non-estimable), worst rel err {worst:.1e}, "
                                      f"mismatches {bad}, {wall:.1f}s")


def test_criterion_03_ak_and_g_match_direct_formulas():
    rng = np.random.default_rng(2024)
    worst, bad, infeasible = 0.0, [], 0
    for trial in range(120):
        model, w, K = random_instance(rng)
        phi_a, _ = evaluate_fixed(Criterion("AK", K), model, w)
        phi_g, _ = evaluate_fixed(Criterion("G"), model, w)
        for phi, ref in ((phi_a, ak_trace(model, w, K)), (phi_g, g_max_variance(model, w))):
            # the program returns 1/trace for A_K and -max variance for G
            got = 1.0 / phi if phi > 0 else (-phi if phi < 0 else math.inf)
            if math.isinf(ref):
                infeasible += 1
                if not math.isinf(got):
                    bad.append(trial)
                continue
            err = abs(got - ref) / ref
            worst = max(worst, err)
            if not err <= 1e-6:
                bad.append(trial)
    report(3, not bad, f"120 instances x 2 criteria ({infeasible} non-estimable), "
                       f"worst rel err {worst:.1e}, mismatches {sorted(set(bad))}")


def test_criterion_04_cholesky_information():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(150):
        m = int(rng.integers(1, 6))
        k = int(rng.integers(1, m + 1))
        n = int(rng.integers(1, 2 * m + 1))
        H = rng.standard_normal((m, n))
        if rng.random() < 0.3 and n > 1:
            H[:, -1] = H[:, 0]
        K = rng.standard_normal((m, k))
        L = cholesky_information(H, K)
        worst = max(worst, float(np.max(np.abs(L @ L.T - schur_oracle(H, K)))))
    report(4, worst <= 1e-8, f"150 random (H, K), worst abs deviation {worst:.1e}")


@pytest.mark.slow
def test_criterion_05_block_designs():
    rows = []
    ok = True
    for t, N, expected in ((8, 12, 392), (9, 11, 96), (10, 12, 128)):
        t0 = time.perf_counter()
        res = block_run(t, N, time_limit=180)
        wall = time.perf_counter() - t0
        trees = kirchhoff(res.incumbent, t)
        ok &= trees == expected and wall < 600 and trace_is_monotone(res.trace)
        rows.append(f"({t},{N}) {trees} trees [{res.status}, {wall:.0f}s]")
    report(5, ok, "; ".join(rows))


@pytest.mark.extended
def test_criterion_05_extended_row():
    res = block_run(10, 20, time_limit=3600)
    trees = kirchhoff(res.incumbent, 10)
    assert trees == 40960, f"(10,20) gave {trees} trees [{res.status}]"


def test_criterion_06_branch_and_bound_matches_enumeration():
    rng = np.random.default_rng(66)
    bad, count = [], 0
    for kind in ("D", "A", "G"):
        for trial in range(12):
            model = random_model(rng, m=int(rng.integers(1, 4)), s=int(rng.integers(2, 6)))
            dom = WeightDomain.exact(model.s, int(rng.integers(1, 7)))
            if trial % 2:
                dom.add_ineq(np.eye(model.s)[0] - np.eye(model.s)[1], 0, ">=")
            if trial % 3 == 2:
                dom.upper = np.full(model.s, 2.0)
            ref = enumerate_exact(kind, model, dom)
            res = solve_misocp(kind, model, dom, BnBConfig(epsilon=0))
            got = res.incumbent_value if res.incumbent is not None else -math.inf
            count += 1
            if math.isinf(ref) or ref == 0.0:
                same = got == ref or (ref == 0.0 and abs(got) <= 1e-9)
            else:
                same = abs(got - ref) <= 1e-6 * max(1.0, abs(ref))
            if not same:
                bad.append((kind, trial, got, ref))
    report(6, not bad, f"{count} instances (D, A, G; half with w1 >= w2, a third with upper bounds 2), "
                       f"mismatches {bad}")


def test_criterion_07_geometric_mean_tower():
    worst = 0.0
    for n in range(1, 10):
        rng = np.random.default_rng(700 + n)
        for _ in range(50):
            xs = rng.uniform(0.05, 5.0, n)
            p = ConicProgram()
            t = p.add_variables(1)
            p.add_geomean_hypograph([Expr.constant(v) for v in xs], t.expr())
            p.set_objective(t.expr())
            sol = solve(p)
            ref = float(np.prod(xs) ** (1.0 / n))
            err = abs(sol.objective - ref) if sol.status == Status.OPTIMAL else math.inf
            worst = max(worst, err)
    report(7, worst <= 1e-7, f"n = 1..9, 50 draws each, worst abs err {worst:.1e}")


def test_criterion_08_kiefer_wolfowitz_certificate():
    rng = np.random.default_rng(8)
    cases = [("three-point", section2_model()), ("block t=6", block_model(6)),
             ("quadratic grid", quadratic_grid_model(rescale=True))]
    cases += [(f"random {i}", random_model(rng, m=int(rng.integers(1, 5)), s=int(rng.integers(4, 9))))
              for i in range(30)]
    failed, checked = [], 0
    for name, model in cases:
        res = solve_criterion(Criterion("D"), model, WeightDomain.simplex(model.s))
        checked += 1
        if res.status not in ("Optimal", "OptimalInaccurate"):
            failed.append(f"{name} [{res.status}]")
            continue
        w = res.weights / res.weights.sum()
        cert = kiefer_wolfowitz_certificate(model, w, tol=1e-5)
        d = cert.variances
        attain = np.all(np.abs(d[w > 1e-4] - model.m) <= 1e-4 * model.m)
        if not (cert.passed and attain):
            failed.append(name)
    report(8, not failed, f"{checked} simplex D-optima certified, failures {failed}")


@pytest.mark.slow
def test_criterion_09_cross_efficiencies_t8_n14():
    t, N = 8, 14
    model = block_model(t)
    K = block_ak_K(t)
    dom = WeightDomain.exact(len(pairs(t)), N)
    d_opt = block_run(t, N, time_limit=120).incumbent
    a_ref = kl_exchange(Criterion("AK", K), model, dom, ExchangeConfig(runs=100)).design
    g_ref = kl_exchange("G", model, dom, ExchangeConfig(runs=400)).design
    eff_a = 100 * efficiency("AK", model, d_opt, a_ref, K)
    eff_g = 100 * efficiency("G", model, d_opt, g_ref)
    ok = abs(eff_a - 99.92) <= 0.2 and abs(eff_g - 88.39) <= 0.5
    report(9, ok, f"D-optimal design ({kirchhoff(d_opt, t)} trees): A-eff {eff_a:.2f}% (ref 99.92), "
                  f"G-eff {eff_g:.2f}% (ref 88.39)")


@pytest.mark.slow
def test_criterion_10_uranium():
    t0 = time.perf_counter()
    model = quadratic_grid_model(rescale=True)
    approx = solve_criterion(Criterion("D"), model, uranium_domain(True, integer=False))
    dom = uranium_domain(True)
    seed = kl_exchange("D", model, dom, ExchangeConfig(runs=20))
    res = solve_misocp("D", model, dom, BnBConfig(epsilon=1e-4, time_limit=540), initial=seed.design)
    wall = time.perf_counter() - t0
    ok = (approx.status == "Optimal" and res.incumbent_value >= 62.18 and res.best_bound <= 62.20
          and wall < 600 and trace_is_monotone(res.trace))
    report(10, ok, f"approximate {approx.phi:.6f} [{approx.status}]; exact {res.incumbent_value:.6f}, "
                   f"bound {res.best_bound:.6f} [{res.status}, {res.nodes_explored} nodes], {wall:.0f}s")


@pytest.mark.slow
def test_criterion_11_exchange_heuristic():
    t, N = 8, 12
    model, dom = block_model(t), equireplicate_domain(t, N)
    best = kl_exchange("D", model, dom, ExchangeConfig(runs=20))
    runs = kl_exchange("D", model, dom, ExchangeConfig(runs=200, seed=11))
    hits = sum(1 for n in runs.run_designs if n is not None and kirchhoff(n, t) == 392)
    freq = hits / 200
    # the heuristic never beats the exact optimum on small instances
    rng = np.random.default_rng(111)
    above = []
    for trial in range(15):
        kind = ("D", "A", "G")[trial % 3]
        m = random_model(rng, m=int(rng.integers(1, 4)), s=int(rng.integers(2, 6)))
        d = WeightDomain.exact(m.s, int(rng.integers(m.m, 7)))
        h = kl_exchange(kind, m, d, ExchangeConfig(runs=5)).value
        e = solve_misocp(kind, m, d, BnBConfig(epsilon=0)).incumbent_value
        if h > e + 1e-9 * max(1.0, abs(e)):
            above.append(trial)
    ok = kirchhoff(best.design, t) == 392 and freq >= 0.70 and not above
    report(11, ok, f"20-run best {kirchhoff(best.design, t)} trees, single-run success {100 * freq:.1f}% "
                   f"over 200 seeds, heuristic above exact on {above}")


def test_criterion_12_reparametrization_invariance():
    rng = np.random.default_rng(12)
    worst_w, worst_phi = 0.0, 0.0
    for _ in range(20):
        m = int(rng.integers(2, 4))
        model = random_model(rng, m=m, s=int(rng.integers(m + 2, 9)), max_ell=1)
        T = rng.standard_normal((m, m))
        while abs(np.linalg.det(T)) < 0.2:
            T = rng.standard_normal((m, m))
        base = solve_criterion(Criterion("D"), model, WeightDomain.simplex(model.s))
        moved = solve_criterion(Criterion("D"), model.transformed(T), WeightDomain.simplex(model.s))
        worst_w = max(worst_w, float(np.max(np.abs(base.weights - moved.weights))))
        scale = abs(np.linalg.det(T)) ** (2.0 / m)
        worst_phi = max(worst_phi, abs(moved.phi - scale * base.phi) / (scale * base.phi))
    report(12, worst_w <= 1e-4 and worst_phi <= 1e-5,
           f"20 random T: max weight change {worst_w:.1e}, max rel Phi_D scaling error {worst_phi:.1e}")


def test_bound_trace_shape():
    t, N = 5, 6
    dom = equireplicate_domain(t, N)
    res = solve_misocp("D", block_model(t), dom, BnBConfig(epsilon=0))
    lo, up = res.trace[-1][1], res.trace[-1][2]
    ok = res.status == "ProvedOptimal" and trace_is_monotone(res.trace) and abs(up - lo) <= 1e-6 * lo
    print(f"bound trace: {'PASS' if ok else 'FAIL'}  {len(res.trace)} points, final lower {lo:.8f} upper {up:.8f}")
    assert ok
