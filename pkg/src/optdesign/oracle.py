"""Direct criterion formulas and independent checks of computed designs.

Nothing here uses the cone solver except :func:`former_socp_fixture`; all
other routines work from the information matrix itself.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import information_matrix, integer_determinant, pseudo_inverse, range_contains

RANGE_TOL = 1e-8
KW_TOL = 1e-5
ENUMERATION_LIMIT = 10_000_000


def _variances(model, Mp):
    return np.array([float(np.trace(A.T @ Mp @ A)) for A in model.matrices])


def _in_range(M, model, idx=None):
    mats = model.matrices if idx is None else [model.matrices[i] for i in idx]
    return range_contains(M, np.hstack(mats), RANGE_TOL)


def phi_direct(kind, model, w, K=None):
    """Criterion value computed from ``M(w)`` directly.

    ``kind`` is one of D, A, G, I, c, DK, AK.  Returns 0 for D, D_K, A_K,
    c and I when the estimability condition fails, and ``-inf`` for G.
    """
    M = information_matrix(model, w)
    m = model.m
    if kind == "D":
        lam = np.linalg.eigvalsh(M)
        if lam[0] <= RANGE_TOL * max(1.0, lam[-1]):
            return 0.0
        return float(np.exp(np.mean(np.log(lam))))
    if kind == "G":
        if not _in_range(M, model):
            return -math.inf
        return -float(np.max(_variances(model, pseudo_inverse(M))))
    if kind == "I":
        S = sum(A @ A.T for A in model.matrices) / model.s
        lam, V = np.linalg.eigh(S)
        keep = lam > 1e-12 * max(1.0, lam[-1])
        Kc = V[:, keep] * np.sqrt(lam[keep])
        if not range_contains(M, Kc, RANGE_TOL):
            return 0.0
        return 1.0 / float(np.trace(S @ pseudo_inverse(M)))
    if kind == "A":
        K = np.eye(m)
    if kind in ("DK", "AK", "c", "A"):
        if K is None:
            raise ValueError(f"criterion {kind} needs K")
        K = np.asarray(K, dtype=float)
        if K.ndim == 1:
            K = K[:, None]
        if not range_contains(M, K, RANGE_TOL):
            return 0.0
        C = K.T @ pseudo_inverse(M) @ K
        if kind == "DK":
            sign, logdet = np.linalg.slogdet(0.5 * (C + C.T))
            if sign <= 0:
                return 0.0
            return float(np.exp(-logdet / K.shape[1]))
        return 1.0 / float(np.trace(C))
    raise ValueError(f"unknown criterion {kind!r}")


def variance_function(model, w):
    """Per-point variances ``trace(A_i^T M(w)^+ A_i)``; ``inf`` outside the range."""
    M = information_matrix(model, w)
    Mp = pseudo_inverse(M)
    out = _variances(model, Mp)
    for i, A in enumerate(model.matrices):
        if not range_contains(M, A, RANGE_TOL):
            out[i] = math.inf
    return out


def spanning_trees(graph):
    """Exact spanning-tree count of a :class:`ConcurrenceGraph`."""
    return graph.spanning_trees()


def laplacian_tree_count(w, t):
    """Spanning trees of the concurrence multigraph of pair counts ``w``."""
    from .workbench import concurrence_graph
    return concurrence_graph(w, t).spanning_trees()


def compositions(N, s):
    """Nonnegative integer vectors of length s summing to N, in colex order.

    Colex: vectors are compared from the last coordinate backwards, so the
    first vector is ``(N, 0, ..., 0)`` and the last ``(0, ..., 0, N)``.
    """
    if s == 1:
        yield (N,)
        return
    for last in range(N + 1):
        for head in compositions(N - last, s - 1):
            yield head + (last,)


def count_compositions(N, s):
    return math.comb(N + s - 1, s - 1)


@dataclass
class EnumerationResult:
    value: float
    maximisers: list
    evaluated: int


def brute_force_exact(kind, model, domain, K=None, rel_tol=1e-9, limit=ENUMERATION_LIMIT):
    """Enumerate every exact design in ``domain`` and return all maximisers.

    The domain must have a fixed integer total N.  Ties are detected with
    relative tolerance ``rel_tol``; maximisers are listed in colex order.
    """
    if domain.total is None:
        raise ValueError("enumeration needs a fixed total")
    N, s = int(round(domain.total)), model.s
    n = count_compositions(N, s)
    if n > limit:
        raise ValueError(f"{n} candidate designs exceed the enumeration limit {limit}")
    best, arg, evaluated = -math.inf, [], 0
    for w in compositions(N, s):
        wa = np.array(w, dtype=float)
        if not domain.contains(wa):
            continue
        evaluated += 1
        v = phi_direct(kind, model, wa, K)
        slack = rel_tol * max(1.0, abs(best)) if math.isfinite(best) else 0.0
        if v > best + slack:
            best, arg = v, [wa]
        elif v >= best - slack:
            arg.append(wa)
    return EnumerationResult(best, arg, evaluated)


@dataclass
class Certificate:
    """Equivalence-theorem check for an approximate D-optimal design."""

    variances: np.ndarray
    max_variance: float
    m: int
    support: np.ndarray
    tol: float
    passed: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {"max_variance": self.max_variance, "m": self.m, "tol": self.tol,
                "passed": self.passed, "variances": self.variances.tolist(),
                "support": self.support.tolist(), "notes": self.notes}


def kiefer_wolfowitz_certificate(model, w, tol=KW_TOL, support_tol=1e-6):
    """Check ``max_i trace(A_i^T M^{-1} A_i) <= m`` on the probability simplex.

    The weights are normalised to sum one first.  Support points (weight
    above ``support_tol``) must attain the bound.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w < -1e-12) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum")
    w = np.clip(w, 0.0, None) / w.sum()
    d = variance_function(model, w)
    m = model.m
    support = np.flatnonzero(w > support_tol)
    notes = []
    ok = bool(np.max(d) <= m * (1.0 + tol))
    if not ok:
        notes.append(f"max variance {np.max(d):.8g} exceeds m={m}")
    low = [int(i) for i in support if d[i] < m * (1.0 - tol)]
    if low:
        ok = False
        notes.append(f"support points below m: {low}")
    return Certificate(d, float(np.max(d)), m, support, tol, ok, notes)


def efficiency(kind, model, w, w_ref, K=None):
    """Efficiency of ``w`` relative to ``w_ref``, oriented so that 1 means equal.

    D: ``(det M(w) / det M(w_ref))^(1/m)``; A/A_K: ratio of the traces of
    ``K^T M^+ K`` (reference over design); G: ratio of maximal variances
    (reference over design).
    """
    if kind == "D":
        ref = phi_direct("D", model, w_ref)
        if ref == 0:
            raise ValueError("reference design is singular")
        return phi_direct("D", model, w) / ref
    if kind in ("A", "AK", "I", "c"):
        ref = phi_direct(kind, model, w_ref, K)
        if ref == 0:
            raise ValueError("reference design is not feasible for the criterion")
        return phi_direct(kind, model, w, K) / ref
    if kind == "G":
        ref = -phi_direct("G", model, w_ref)
        if not math.isfinite(ref):
            raise ValueError("reference design does not estimate every point")
        val = -phi_direct("G", model, w)
        return 0.0 if not math.isfinite(val) else ref / val
    raise ValueError(f"no efficiency defined for {kind!r}")


def former_socp_fixture(model, domain, cfg=None):
    """Weights from the earlier SOCP in which all ``Z_i`` share one norm bound.

    maximise (prod L_kk)^(1/m) s.t. sum_i A_i Z_i = L lower triangular,
    ``||Z_i||_F <= sqrt(m) w_i`` and ``w`` in the domain.  For D-optimality
    this program is only exact on the plain simplex.
    """
    from .conic import ConicProgram, Expr, solve
    from .criteria import add_domain

    m = model.m
    p = ConicProgram()
    w = p.add_variables(model.s, "w")
    Z = [p.add_variables(A.shape[1] * m, f"Z{i}", (A.shape[1], m)) for i, A in enumerate(model.matrices)]
    L = p.add_variables(m * m, "L", (m, m))
    g = p.add_variables(1, "g")
    for r in range(m):
        for j in range(m):
            terms = {L[r, j]: -1.0}
            for A, Zi in zip(model.matrices, Z):
                for l in range(A.shape[1]):
                    if A[r, l] != 0.0:
                        terms[Zi[l, j]] = A[r, l]
            p.add_equality(Expr(terms), 0.0)
            if j > r:
                p.add_equality(L.expr((r, j)), 0.0)
    for i, Zi in enumerate(Z):
        p.add_soc(w.expr(i, math.sqrt(m)), Zi.exprs())
    add_domain(p, w, domain)
    p.add_geomean_hypograph([L.expr((j, j)) for j in range(m)], g.expr())
    p.set_objective(g.expr(), "max")
    sol = solve(p, cfg)
    return np.asarray(sol.x[w.indices]), sol


def verification_report(kind, model, w, reported_phi, K=None, tol=1e-6, certificate=None):
    """Compare a reported criterion value with the direct formula."""
    direct = phi_direct(kind, model, w, K)
    if math.isfinite(direct) and math.isfinite(reported_phi):
        err = abs(direct - reported_phi) / max(1.0, abs(direct))
    else:
        err = 0.0 if direct == reported_phi else math.inf
    rep = {"criterion": kind, "reported_phi": reported_phi, "direct_phi": direct,
           "relative_error": err, "tol": tol, "match": bool(err <= tol)}
    if certificate is not None:
        rep["certificate"] = certificate.to_dict()
        rep["match"] = rep["match"] and certificate.passed
    wint = np.asarray(w)
    if np.all(wint == np.round(wint)) and kind == "D":
        M = information_matrix(model, wint)
        if np.all(M == np.round(M)):
            rep["integer_determinant"] = integer_determinant(M.astype(int))
    return rep
