"""Compilation of design criteria into second-order cone programs.

Each compiler returns a :class:`CriterionProgram`: the program, a handle to
the weight variables and a monotone map from the program's (maximisation)
objective to the criterion value.  The programs are

* D_K: maximise ``(prod J_jj)^(1/k)`` subject to ``sum A_i Z_i = K J`` with
  J lower triangular, ``||Z_i e_j||^2 <= t_ij w_i`` and
  ``sum_i t_ij <= J_jj``;
* A_K: minimise ``sum mu_i`` subject to ``sum A_i Y_i = K`` and
  ``||Y_i||_F^2 <= mu_i w_i``;
* G: minimise ``rho`` subject to ``sum_j A_j H_i^j = A_i``,
  ``||H_i^j||_F^2 <= w_j u_i^j`` and ``sum_j u_i^j <= rho``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, Expr, SolverConfig, Status, solve
from .oracle import phi_direct

CROSS_CHECK_WARN = 1e-5
CROSS_CHECK_FAIL = 1e-3
ZERO_PHI_TOL = 1e-7
# weights are accurate to roughly the solver tolerance; 1e-9 keeps the
# variance function within 1e-5 of its equivalence-theorem bound
APPROX_TOL = 1e-9

KINDS = ("D", "A", "G", "I", "c", "DK", "AK")


def i_to_ak(model):
    """K with ``K K^T = (1/s) sum A_i A_i^T`` (full column rank).

    The I-criterion (average variance over the design points) equals A_K
    for this K.
    """
    S = sum(A @ A.T for A in model.matrices) / model.s
    S = 0.5 * (S + S.T)
    lam, V = np.linalg.eigh(S)
    if np.allclose(S, lam.mean() * np.eye(model.m), rtol=0, atol=1e-14 * max(1.0, lam.max())):
        return math.sqrt(lam.mean()) * np.eye(model.m)
    keep = lam > 1e-12 * max(1.0, lam.max())
    return V[:, keep] * np.sqrt(lam[keep])


@dataclass(frozen=True)
class Criterion:
    """A criterion kind with its coefficient matrix K (None for D, A, G, I)."""

    kind: str
    K: np.ndarray = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown criterion {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("DK", "AK", "c") and self.K is None:
            raise ValueError(f"criterion {self.kind} needs a K matrix")
        if self.K is not None:
            K = np.asarray(self.K, dtype=float)
            object.__setattr__(self, "K", K[:, None] if K.ndim == 1 else K)

    def family(self):
        """Which program family the criterion compiles to: 'DK', 'AK' or 'G'."""
        return {"D": "DK", "DK": "DK", "A": "AK", "AK": "AK", "c": "AK", "I": "AK", "G": "G"}[self.kind]

    def resolve_K(self, model):
        if self.kind in ("D", "A"):
            return np.eye(model.m)
        if self.kind == "I":
            return i_to_ak(model)
        if self.kind == "G":
            return None
        if self.K.shape[0] != model.m:
            raise ValueError(f"K has {self.K.shape[0]} rows, model has m={model.m}")
        if np.linalg.matrix_rank(self.K) < self.K.shape[1]:
            raise ValueError("K must have full column rank")
        return self.K

    def phi(self, model, w):
        return phi_direct(self.kind, model, w, self.K)


@dataclass
class CriterionProgram:
    """A compiled criterion: program plus recovery of the criterion value."""

    program: ConicProgram
    w: object
    criterion: Criterion
    model: object
    domain: object
    family: str
    aux: dict = field(default_factory=dict)

    def phi_recovery(self, objective):
        """Criterion value from the program's maximisation objective."""
        if self.family == "AK":
            # objective = -sum(mu)
            return math.inf if objective >= 0 else -1.0 / objective
        return objective

    def conic_objective(self, objective):
        """Objective in the natural sense of the program (sum mu, rho or geomean)."""
        return -objective if self.family in ("AK", "G") else objective


def add_domain(p, w, domain):
    """Add the weight-domain rows of ``domain`` on variables ``w``."""
    for i in range(domain.s):
        hi = domain.upper[i]
        if hi == domain.lower[i]:
            p.add_equality(w.expr(i), float(hi))
            continue
        p.add_nonneg([w.expr(i) - float(domain.lower[i])])
        if np.isfinite(hi) and not (domain.total is not None and hi >= domain.total):
            p.add_nonneg([Expr.constant(hi) - w.expr(i)])
    for a, r, sense in domain.rows():
        nz = np.flatnonzero(a)
        p.add_linear(a[nz], [w[int(j)] for j in nz], r, sense)


def _lhs_rows(model, blocks, ncols):
    """Terms of ``sum_i A_i X_i`` for matrix-shaped handles X_i (l_i x ncols)."""
    rows = [[{} for _ in range(ncols)] for _ in range(model.m)]
    for A, X in zip(model.matrices, blocks):
        for r in range(model.m):
            for l in np.flatnonzero(A[r]):
                a = float(A[r, l])
                for j in range(ncols):
                    rows[r][j][X[int(l), j]] = a
    return rows


def compile_dk(model, K, domain):
    """D_K program; with K = I it is the D-criterion."""
    K = np.asarray(K, dtype=float)
    m, k = K.shape
    p = ConicProgram()
    w = p.add_variables(model.s, "w")
    Z = [p.add_variables(A.shape[1] * k, f"Z{i}", (A.shape[1], k)) for i, A in enumerate(model.matrices)]
    t = p.add_variables(model.s * k, "t", (model.s, k))
    J = p.add_variables(k * k, "J", (k, k))
    g = p.add_variables(1, "phi")
    rows = _lhs_rows(model, Z, k)
    for r in range(m):
        for j in range(k):
            terms = dict(rows[r][j])
            for c in range(j, k):  # (K J)[r, j] with J lower triangular
                if K[r, c] != 0.0:
                    terms[J[c, j]] = terms.get(J[c, j], 0.0) - K[r, c]
            p.add_equality(Expr(terms), 0.0)
    for a in range(k):
        for b in range(a + 1, k):
            p.add_equality(J.expr((a, b)), 0.0)
    for i, A in enumerate(model.matrices):
        for j in range(k):
            col = [Z[i].expr((l, j)) for l in range(A.shape[1])]
            p.add_rotated_cone(col, t.expr((i, j)), w.expr(i))
    for j in range(k):
        s = Expr({t[i, j]: 1.0 for i in range(model.s)})
        p.add_nonneg([J.expr((j, j)) - s])
    add_domain(p, w, domain)
    p.add_geomean_hypograph([J.expr((j, j)) for j in range(k)], g.expr())
    p.set_objective(g.expr(), "max")
    return p, w, {"Z": Z, "t": t, "J": J, "phi": g}


def compile_ak(model, K, domain):
    """A_K program (also A, c and I after the appropriate choice of K)."""
    K = np.asarray(K, dtype=float)
    m, k = K.shape
    p = ConicProgram()
    w = p.add_variables(model.s, "w")
    Y = [p.add_variables(A.shape[1] * k, f"Y{i}", (A.shape[1], k)) for i, A in enumerate(model.matrices)]
    mu = p.add_variables(model.s, "mu")
    rows = _lhs_rows(model, Y, k)
    for r in range(m):
        for j in range(k):
            p.add_equality(Expr(rows[r][j]), float(K[r, j]))
    for i in range(model.s):
        p.add_rotated_cone(Y[i].exprs(), mu.expr(i), w.expr(i))
    add_domain(p, w, domain)
    p.set_objective(Expr({int(v): 1.0 for v in mu.indices}), "min")
    return p, w, {"Y": Y, "mu": mu}


def compile_g(model, domain, support=None):
    """G program; the number of blocks H_i^j grows like s^2.

    ``support`` restricts the blocks H_i^j to the listed points j (the
    variance is still bounded at every point i).  Used when the weights
    outside the support are known to be zero.
    """
    s = model.s
    support = list(range(s)) if support is None else sorted(int(j) for j in support)
    sub = type(model)([model.matrices[j] for j in support])
    p = ConicProgram()
    w = p.add_variables(s, "w")
    u = p.add_variables(s * len(support), "u", (s, len(support)))
    rho = p.add_variables(1, "rho")
    H = {}
    for i, Ai in enumerate(model.matrices):
        li = Ai.shape[1]
        blocks = [p.add_variables(model.matrices[j].shape[1] * li, f"H{i}_{j}", (model.matrices[j].shape[1], li))
                  for j in support]
        rows = _lhs_rows(sub, blocks, li)
        for r in range(model.m):
            for c in range(li):
                p.add_equality(Expr(rows[r][c]), float(Ai[r, c]))
        for k, j in enumerate(support):
            p.add_rotated_cone(blocks[k].exprs(), u.expr((i, k)), w.expr(j))
            H[i, j] = blocks[k]
        p.add_nonneg([rho.expr() - Expr({u[i, k]: 1.0 for k in range(len(support))})])
    add_domain(p, w, domain)
    p.set_objective(rho.expr(), "min")
    return p, w, {"H": H, "u": u, "rho": rho}


def compile_criterion(criterion, model, domain, support=None):
    """Build the program for any supported criterion.

    ``support`` is passed on to :func:`compile_g` and ignored otherwise.
    """
    if isinstance(criterion, str):
        criterion = Criterion(criterion)
    if domain.s != model.s:
        raise ValueError("domain and model disagree on the number of points")
    fam = criterion.family()
    if fam == "DK":
        p, w, aux = compile_dk(model, criterion.resolve_K(model), domain)
    elif fam == "AK":
        p, w, aux = compile_ak(model, criterion.resolve_K(model), domain)
    else:
        p, w, aux = compile_g(model, domain, support)
    return CriterionProgram(p, w, criterion, model, domain, fam, aux)


@dataclass
class DesignResult:
    """Weights and criterion value obtained from a solved program."""

    weights: np.ndarray
    phi: float
    phi_direct: float
    bound: float
    conic_objective: float
    status: str
    solver_status: str
    cross_check: float
    iterations: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self):
        f = lambda v: None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v
        return {"weights": np.asarray(self.weights).tolist(), "phi": f(self.phi),
                "phi_direct": f(self.phi_direct), "bound": f(self.bound),
                "conic_objective": f(self.conic_objective), "status": self.status,
                "solver_status": self.solver_status, "cross_check": f(self.cross_check),
                "iterations": self.iterations, "notes": self.notes}


def _relative(a, b):
    if a == b:
        return 0.0
    if not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    return abs(a - b) / max(1.0, abs(b))


def extract_design(cp, sol):
    """Read weights from a solution and cross-check against the direct formula.

    A mismatch above 1e-5 (relative) is noted; above 1e-3 the result is
    marked NumericalFailure.
    """
    x = sol.x
    w = np.asarray(x[cp.w.indices], dtype=float)
    w = np.where(w < 0, 0.0, w)
    status = sol.status.value
    notes = []
    phi = cp.phi_recovery(sol.objective)
    bound = cp.phi_recovery(max(sol.objective, sol.dual_objective)) if sol.optimal else math.nan
    direct = phi_direct(cp.criterion.kind, cp.model, w, cp.criterion.K)
    err = _relative(phi, direct)
    if sol.optimal:
        if err > CROSS_CHECK_FAIL:
            status = Status.NUMERICAL_FAILURE.value
            notes.append(f"program value {phi:.10g} disagrees with direct value {direct:.10g}")
        elif err > CROSS_CHECK_WARN:
            notes.append(f"cross-check deviation {err:.2e}")
    return DesignResult(w, phi, direct, bound, cp.conic_objective(sol.objective), status,
                        sol.status.value, err, sol.iterations, notes)


def solve_criterion(criterion, model, domain, cfg=None):
    """Optimal approximate design for ``criterion`` over a continuous domain."""
    cp = compile_criterion(criterion, model, domain.relaxed() if domain.integer else domain)
    sol = solve(cp.program, cfg or SolverConfig(rel_gap_tol=APPROX_TOL, feas_tol=APPROX_TOL))
    if sol.status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE):
        return DesignResult(np.full(model.s, np.nan), math.nan, math.nan, math.nan, math.nan,
                            "Infeasible" if sol.status == Status.PRIMAL_INFEASIBLE else sol.status.value,
                            sol.status.value, math.nan, sol.iterations)
    return extract_design(cp, sol)


def _fixed_domain(w):
    from .workbench import WeightDomain
    w = np.asarray(w, dtype=float)
    return WeightDomain(len(w), lower=w, upper=w)


def _dk_estimability_probe(model, K):
    """Linear part of the D_K program with ``J_jj >= 1`` and no cones.

    Feasible iff range(K) lies in the span of the observation matrices:
    the last column of ``K J`` forces the last column of K into the span,
    and so on backwards.
    """
    m, k = K.shape
    p = ConicProgram()
    Z = [p.add_variables(A.shape[1] * k, f"Z{i}", (A.shape[1], k)) for i, A in enumerate(model.matrices)]
    J = p.add_variables(k * k, "J", (k, k))
    rows = _lhs_rows(model, Z, k)
    for r in range(m):
        for j in range(k):
            terms = dict(rows[r][j])
            for c in range(j, k):
                if K[r, c] != 0.0:
                    terms[J[c, j]] = terms.get(J[c, j], 0.0) - K[r, c]
            p.add_equality(Expr(terms), 0.0)
    for a in range(k):
        for b in range(a + 1, k):
            p.add_equality(J.expr((a, b)), 0.0)
    p.add_nonneg([J.expr((j, j)) - 1.0 for j in range(k)])
    p.set_objective(Expr(), "max")
    return p


def evaluate_fixed(criterion, model, w, cfg=None):
    """Criterion value at fixed weights computed through the cone program.

    Points with zero weight get no auxiliary variables: otherwise the
    program is only weakly infeasible when estimability fails (weights
    close to zero come arbitrarily close to feasibility) and no
    infeasibility certificate exists.  With the support removed, failures
    show up as infeasibility (A_K, G) or as a zero optimum (D_K).  For D_K
    a near-zero or inaccurate optimum is settled by the linear estimability
    probe: if that is infeasible the value is exactly 0.
    """
    if isinstance(criterion, str):
        criterion = Criterion(criterion)
    w = np.asarray(w, dtype=float)
    support = np.flatnonzero(w > 0)
    fam = criterion.family()
    if len(support) == 0:
        return (-math.inf if fam == "G" else 0.0), Status.PRIMAL_INFEASIBLE
    if fam == "G":
        cp = compile_criterion(criterion, model, _fixed_domain(w), support)
    else:
        K = criterion.resolve_K(model)
        sub = type(model)([model.matrices[j] for j in support])
        kind = "DK" if fam == "DK" else "AK"
        cp = compile_criterion(Criterion(kind, K), sub, _fixed_domain(w[support]))
    sol = solve(cp.program, cfg)
    if sol.status == Status.PRIMAL_INFEASIBLE:
        return (-math.inf if fam == "G" else 0.0), sol.status
    if fam == "DK" and (sol.status != Status.OPTIMAL or sol.objective <= ZERO_PHI_TOL):
        psol = solve(_dk_estimability_probe(sub, K), cfg)
        if psol.status == Status.PRIMAL_INFEASIBLE:
            return 0.0, Status.OPTIMAL
    if not sol.optimal:
        return math.nan, sol.status
    return cp.phi_recovery(sol.objective), sol.status


def default_config():
    return SolverConfig()
