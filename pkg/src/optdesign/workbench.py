"""Observation models, weight domains and the standard example problems."""

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .linalg import integer_determinant


@dataclass
class ObservationModel:
    """Design points ``i = 1..s``, each with an m x l_i observation matrix."""

    matrices: list
    labels: list = None

    def __post_init__(self):
        mats = []
        for A in self.matrices:
            A = np.asarray(A, dtype=float)
            if A.ndim == 1:
                A = A[:, None]
            if A.ndim != 2:
                raise ValueError("observation matrices must be 1- or 2-dimensional")
            mats.append(A)
        if not mats:
            raise ValueError("an observation model needs at least one point")
        m = mats[0].shape[0]
        if any(A.shape[0] != m for A in mats):
            raise ValueError("all observation matrices must have the same number of rows")
        if not all(np.all(np.isfinite(A)) for A in mats):
            raise ValueError("observation matrices must be finite")
        self.matrices = mats
        if self.labels is None:
            self.labels = [str(i) for i in range(len(mats))]
        if len(self.labels) != len(mats):
            raise ValueError("one label per design point is required")

    @property
    def m(self):
        return self.matrices[0].shape[0]

    @property
    def s(self):
        return len(self.matrices)

    @property
    def ells(self):
        return [A.shape[1] for A in self.matrices]

    def transformed(self, T):
        """Model with every A_i replaced by ``T @ A_i``."""
        T = np.asarray(T, dtype=float)
        return ObservationModel([T @ A for A in self.matrices], list(self.labels))

    def to_dict(self):
        return {"m": self.m,
                "points": [{"label": lab, "matrix": A.tolist()} for lab, A in zip(self.labels, self.matrices)]}

    @classmethod
    def from_dict(cls, d):
        pts = d["points"]
        model = cls([np.asarray(p["matrix"], dtype=float) for p in pts], [p.get("label", str(i)) for i, p in enumerate(pts)])
        if "m" in d and int(d["m"]) != model.m:
            raise ValueError(f"declared m={d['m']} but matrices have {model.m} rows")
        return model


@dataclass
class WeightDomain:
    """Linear description of the permissible weights.

    ``eq`` holds ``(coeffs, rhs)`` rows, ``ineq`` holds ``(coeffs, rhs, sense)``
    with sense ``"<="`` or ``">="``.  ``total`` adds ``sum(w) == total``;
    ``integer`` marks an exact (integer) design problem.
    """

    s: int
    eq: list = field(default_factory=list)
    ineq: list = field(default_factory=list)
    lower: np.ndarray = None
    upper: np.ndarray = None
    total: float = None
    integer: bool = False

    def __post_init__(self):
        self.lower = np.zeros(self.s) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(self.s, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (self.s,) or self.upper.shape != (self.s,):
            raise ValueError("bounds must have one entry per weight")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.lower < 0):
            raise ValueError("weights are nonnegative; lower bounds must be >= 0")
        self.eq = [(np.asarray(a, dtype=float), float(r)) for a, r in self.eq]
        self.ineq = [(np.asarray(a, dtype=float), float(r), sense) for a, r, sense in self.ineq]
        for row in [a for a, _ in self.eq] + [a for a, _, _ in self.ineq]:
            if row.shape != (self.s,):
                raise ValueError(f"constraint row has length {row.shape}, expected {self.s}")
        if any(sense not in ("<=", ">=") for _, _, sense in self.ineq):
            raise ValueError("inequality sense must be '<=' or '>='")

    @classmethod
    def simplex(cls, s):
        return cls(s, total=1.0)

    @classmethod
    def exact(cls, s, N):
        return cls(s, total=int(N), integer=True, upper=np.full(s, float(N)))

    def relaxed(self):
        """Same constraints without integrality."""
        return WeightDomain(self.s, list(self.eq), list(self.ineq), self.lower.copy(),
                            self.upper.copy(), self.total, False)

    def add_eq(self, coeffs, rhs):
        self.eq.append((np.asarray(coeffs, dtype=float), float(rhs)))
        return self

    def add_ineq(self, coeffs, rhs, sense="<="):
        if sense not in ("<=", ">="):
            raise ValueError("inequality sense must be '<=' or '>='")
        self.ineq.append((np.asarray(coeffs, dtype=float), float(rhs), sense))
        return self

    def rows(self):
        """All constraints as (coeffs, rhs, sense) including the total."""
        out = [(a, r, "=") for a, r in self.eq]
        if self.total is not None:
            out.append((np.ones(self.s), float(self.total), "="))
        out.extend(self.ineq)
        return out

    def integer_bounds(self):
        """Finite integer bounds per weight, needed for branching."""
        hi = self.upper.copy()
        if self.total is not None:
            hi = np.minimum(hi, self.total)
        if not np.all(np.isfinite(hi)):
            raise ValueError("integer weights need finite upper bounds (set total or upper)")
        return np.ceil(self.lower - 1e-9).astype(int), np.floor(hi + 1e-9).astype(int)

    def contains(self, w, tol=1e-9):
        """Feasibility check; exact rational arithmetic for integer vectors."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.s,):
            return False
        if self.integer and np.any(np.abs(w - np.round(w)) > 0):
            return False
        if np.all(w == np.round(w)):
            wi = [int(v) for v in w]
            for lo, hi, v in zip(self.lower, self.upper, wi):
                if v < Fraction(lo) or (np.isfinite(hi) and v > Fraction(hi)):
                    return False
            for a, r, sense in self.rows():
                lhs = sum(Fraction(float(c)) * v for c, v in zip(a, wi) if c != 0)
                rhs = Fraction(r)
                if (sense == "=" and lhs != rhs) or (sense == "<=" and lhs > rhs) or (sense == ">=" and lhs < rhs):
                    return False
            return True
        if np.any(w < self.lower - tol) or np.any(w > self.upper + tol):
            return False
        for a, r, sense in self.rows():
            lhs = float(a @ w)
            slack = tol * (1.0 + abs(r))
            if (sense == "=" and abs(lhs - r) > slack) or (sense == "<=" and lhs > r + slack) \
                    or (sense == ">=" and lhs < r - slack):
                return False
        return True

    def tightened(self):
        """Equivalent integer domain with every rational row divided by its gcd.

        For integer weights a row ``a.w <= r`` with integer ``a`` of gcd g
        holds iff ``(a/g).w <= floor(r/g)``; likewise for ``>=`` (ceil) and
        for equalities (which become contradictory when ``r/g`` is not an
        integer).  Continuous domains are returned unchanged.
        """
        if not self.integer:
            return self
        eq, ineq = [], []
        for a, r in self.eq:
            scaled = _integer_row(a)
            if scaled is None:
                eq.append((a, r))
                continue
            row, den = scaled
            g = math.gcd(*[abs(v) for v in row if v]) if any(row) else 1
            val = Fraction(r).limit_denominator(10**9) * den / g
            c = np.array(row, dtype=float) / g
            if val.denominator == 1:
                eq.append((c, float(val)))
            else:
                ineq.append((c, float(math.floor(val)), "<="))
                ineq.append((c, float(math.ceil(val)), ">="))
        for a, r, sense in self.ineq:
            scaled = _integer_row(a)
            if scaled is None:
                ineq.append((a, r, sense))
                continue
            row, den = scaled
            g = math.gcd(*[abs(v) for v in row if v]) if any(row) else 1
            val = Fraction(r).limit_denominator(10**9) * den / g
            c = np.array(row, dtype=float) / g
            ineq.append((c, float(math.floor(val) if sense == "<=" else math.ceil(val)), sense))
        lower = np.ceil(self.lower - 1e-9)
        upper = np.where(np.isfinite(self.upper), np.floor(self.upper + 1e-9), self.upper)
        return WeightDomain(self.s, eq, ineq, lower, upper, self.total, True)

    def implied_total(self):
        """Total number of trials: ``total`` if set, else implied by equality rows.

        The rows must have 0/1 coefficients and partition the points (as the
        marginal constraints of a grid do).  Returns None otherwise.
        """
        if self.total is not None:
            return self.total
        cover = np.zeros(self.s)
        rhs = 0.0
        for a, r in self.eq:
            if np.all((a == 0) | (a == 1)):
                cover += a
                rhs += r
        return rhs if np.all(cover == 1) else None

    def partial_ok(self, w):
        """Whether a partial integer design can still be completed.

        Only monotone restrictions are checked: upper bounds, and rows with
        nonnegative coefficients and sense ``<=`` or ``=``.
        """
        if np.any(w > self.upper + 1e-9):
            return False
        if self.total is not None and w.sum() > self.total + 1e-9:
            return False
        for a, r, sense in self.rows():
            if sense in ("=", "<=") and np.all(a >= 0) and float(a @ w) > r + 1e-9:
                return False
        return True

    def to_dict(self):
        fin = lambda v: [None if not np.isfinite(x) else float(x) for x in v]
        return {
            "s": self.s,
            "eq": [{"coeffs": a.tolist(), "rhs": r} for a, r in self.eq],
            "ineq": [{"coeffs": a.tolist(), "rhs": r, "sense": sense} for a, r, sense in self.ineq],
            "lower": self.lower.tolist(),
            "upper": fin(self.upper),
            "total": self.total,
            "integer": self.integer,
        }

    @classmethod
    def from_dict(cls, d):
        upper = d.get("upper")
        if upper is not None:
            upper = [np.inf if v is None else v for v in upper]
        return cls(int(d["s"]),
                   [(r["coeffs"], r["rhs"]) for r in d.get("eq", [])],
                   [(r["coeffs"], r["rhs"], r["sense"]) for r in d.get("ineq", [])],
                   d.get("lower"), upper, d.get("total"), bool(d.get("integer", False)))


def _integer_row(a, max_den=10**6):
    """``(ints, den)`` with ``a == ints / den`` exactly, or None for irrational-looking rows."""
    fr = [Fraction(float(v)).limit_denominator(max_den) for v in a]
    if any(abs(float(f) - float(v)) > 1e-12 * max(1.0, abs(float(v))) for f, v in zip(fr, a)):
        return None
    den = 1
    for f in fr:
        den = den * f.denominator // math.gcd(den, f.denominator)
    return [int(f * den) for f in fr], den


# ---------------------------------------------------------------- examples

def section2_model():
    """Three unit regression vectors at 120 degrees in the plane."""
    r = math.sqrt(3.0) / 2.0
    return ObservationModel([[1.0, 0.0], [-0.5, r], [-0.5, -r]], ["A1", "A2", "A3"])


def section2_domain(constrained=False):
    dom = WeightDomain.simplex(3)
    if constrained:
        dom.add_ineq([1.0, -1.0, 0.0], 0.25, ">=")
    return dom


def pairs(t):
    """Treatment pairs (i, j), i < j, in lexicographic order (0-based)."""
    return [(i, j) for i in range(t) for j in range(i + 1, t)]


def block_model(t):
    """Two-block design model: A_ij = first t-1 coordinates of e_i - e_j."""
    if t < 2:
        raise ValueError("block designs need at least two treatments")
    mats, labels = [], []
    for i, j in pairs(t):
        v = np.zeros(t)
        v[i], v[j] = 1.0, -1.0
        mats.append(v[:-1])
        labels.append(f"{i + 1}-{j + 1}")
    return ObservationModel(mats, labels)


def replication_rows(t):
    """Incidence rows r_i(w) = sum_{j != i} w_ij for each treatment."""
    P = pairs(t)
    rows = np.zeros((t, len(P)))
    for k, (i, j) in enumerate(P):
        rows[i, k] = 1.0
        rows[j, k] = 1.0
    return rows


def equireplicate_domain(t, N):
    """Exact domain of size N where replications lie in [floor(2N/t), ceil(2N/t)]."""
    dom = WeightDomain.exact(t * (t - 1) // 2, N)
    lo, hi = (2 * N) // t, -((-2 * N) // t)
    for row in replication_rows(t):
        if lo == hi:
            dom.add_eq(row, lo)
        else:
            dom.add_ineq(row, lo, ">=")
            dom.add_ineq(row, hi, "<=")
    return dom


def replication_domain(t, N, spec):
    """Exact domain of size N with replication constraints.

    ``spec`` is a list of ``(treatments, sense, bound)``; ``treatments`` are
    0-based indices whose replication numbers are summed.  ``sense`` is one
    of ``"<="``, ``">="``, ``"="``.
    """
    dom = WeightDomain.exact(t * (t - 1) // 2, N)
    R = replication_rows(t)
    for treatments, sense, bound in spec:
        row = R[list(treatments)].sum(axis=0)
        if sense in ("=", "=="):
            dom.add_eq(row, bound)
        else:
            dom.add_ineq(row, bound, sense)
    return dom


URANIUM_X1 = [94.9] + [round(95.1 + 0.1 * k, 1) for k in range(17)]
URANIUM_X2 = [0.0, 10.0, 20.0]
URANIUM_MARGINS = [1, 3, 14, 59, 52, 29, 25, 32, 36, 29, 36, 38, 12, 10, 8, 2, 3, 3]
URANIUM_BUDGET = 1965.0


def uranium_grid_transform():
    """Centring map of the grid as (shift, scale) per factor.

    Density is centred at the mid-range 95.8 and left in its units, so the
    levels lie in [-0.9, 0.9]; the additive percentage is mapped onto
    {-1, 0, 1}.  The optimal designs do not depend on this choice, only the
    criterion values do (by a constant factor).
    """
    lo1, hi1 = min(URANIUM_X1), max(URANIUM_X1)
    lo2, hi2 = min(URANIUM_X2), max(URANIUM_X2)
    return (round((lo1 + hi1) / 2, 10), 1.0), ((lo2 + hi2) / 2, (hi2 - lo2) / 2)


def quadratic_regressors(x1, x2):
    return np.array([1.0, x1, x2, x1 * x1, x2 * x2, x1 * x2])


def quadratic_grid_model(rescale=False):
    """Two-factor quadratic model on the 18 x 3 grid (points ordered level-major)."""
    (c1, h1), (c2, h2) = uranium_grid_transform()
    mats, labels = [], []
    for x1 in URANIUM_X1:
        for x2 in URANIUM_X2:
            u1, u2 = ((x1 - c1) / h1, (x2 - c2) / h2) if rescale else (x1, x2)
            mats.append(quadratic_regressors(u1, u2))
            labels.append(f"({x1:g}, {x2:g})")
    return ObservationModel(mats, labels)


def quadratic_grid_rescaling_matrix():
    """T with A_rescaled(x) = T @ A_original(x) for every grid point."""
    (c1, h1), (c2, h2) = uranium_grid_transform()
    # u = (x - c)/h; expand monomials of u in monomials of x
    a1, b1 = 1.0 / h1, -c1 / h1
    a2, b2 = 1.0 / h2, -c2 / h2
    # basis order: 1, x1, x2, x1^2, x2^2, x1 x2
    T = np.zeros((6, 6))
    T[0, 0] = 1.0
    T[1, [0, 1]] = [b1, a1]
    T[2, [0, 2]] = [b2, a2]
    T[3, [0, 1, 3]] = [b1 * b1, 2 * a1 * b1, a1 * a1]
    T[4, [0, 2, 4]] = [b2 * b2, 2 * a2 * b2, a2 * a2]
    T[5, [0, 1, 2, 5]] = [b1 * b2, a1 * b2, b1 * a2, a1 * a2]
    return T


def uranium_domain(with_cost=False, integer=True):
    """Marginal constraints on the 18 density levels, optionally with the budget."""
    s = len(URANIUM_X1) * len(URANIUM_X2)
    N = sum(URANIUM_MARGINS)
    dom = WeightDomain(s, upper=np.full(s, float(N)), integer=integer)
    for j, a in enumerate(URANIUM_MARGINS):
        row = np.zeros(s)
        row[3 * j: 3 * j + 3] = 1.0
        dom.add_eq(row, a)
    if with_cost:
        dom.add_ineq(uranium_cost_row(), URANIUM_BUDGET, "<=")
    return dom


def uranium_cost_row():
    cost = np.zeros(len(URANIUM_X1) * len(URANIUM_X2))
    cost[1::3] = 10.0
    cost[2::3] = 20.0
    return cost


def helmert_basis(n):
    """Orthonormal basis (n x (n-1)) of the vectors orthogonal to the ones vector."""
    U = np.zeros((n, n - 1))
    for k in range(1, n):
        U[:k, k - 1] = 1.0
        U[k, k - 1] = -k
        U[:, k - 1] /= math.sqrt(k * (k + 1))
    return U


def block_ak_K(t):
    """K with K K^T = t I - 1 1^T on the t-1 retained coordinates."""
    if t < 2:
        raise ValueError("block designs need at least two treatments")
    U = helmert_basis(t - 1)
    return np.hstack([math.sqrt(t) * U, np.ones((t - 1, 1)) / math.sqrt(t - 1)])


def projected_block_model(t):
    """Alternative parametrisation A'_ij = U^T (e_i - e_j), U orthonormal basis of 1-perp."""
    U = helmert_basis(t)
    mats, labels = [], []
    for i, j in pairs(t):
        mats.append(U[i] - U[j])
        labels.append(f"{i + 1}-{j + 1}")
    return ObservationModel(mats, labels)


# --------------------------------------------------------- concurrence graph

@dataclass
class ConcurrenceGraph:
    """Multigraph on t treatments; ``edges[(i, j)]`` is the multiplicity (i < j)."""

    t: int
    edges: dict

    def degrees(self):
        deg = [0] * self.t
        for (i, j), k in self.edges.items():
            deg[i] += k
            deg[j] += k
        return deg

    def laplacian(self):
        L = [[0] * self.t for _ in range(self.t)]
        for (i, j), k in self.edges.items():
            L[i][i] += k
            L[j][j] += k
            L[i][j] -= k
            L[j][i] -= k
        return L

    def spanning_trees(self):
        L = self.laplacian()
        return integer_determinant([row[:-1] for row in L[:-1]])


def concurrence_graph(w, t):
    w = np.asarray(w)
    P = pairs(t)
    if w.shape != (len(P),):
        raise ValueError(f"expected {len(P)} pair weights for t={t}")
    if np.any(w < 0):
        raise ValueError("negative edge multiplicity")
    if np.any(w != np.round(w)):
        raise ValueError("concurrence graphs need integer weights")
    return ConcurrenceGraph(t, {p: int(k) for p, k in zip(P, w) if k})


# ------------------------------------------------------------ problem files

CRITERIA = ("D", "A", "G", "I", "c", "DK", "AK")


@dataclass
class DesignProblem:
    """A model, a criterion specification and a weight domain."""

    model: ObservationModel
    criterion: str = "D"
    K: np.ndarray = None
    domain: WeightDomain = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}; expected one of {CRITERIA}")
        if self.domain is None:
            self.domain = WeightDomain.simplex(self.model.s)
        if self.domain.s != self.model.s:
            raise ValueError("domain and model disagree on the number of points")

    def to_dict(self):
        crit = {"kind": self.criterion}
        if self.K is not None:
            crit["K"] = np.asarray(self.K).tolist()
        d = self.model.to_dict()
        d["criterion"] = crit
        d["domain"] = self.domain.to_dict()
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d):
        crit = d.get("criterion", {"kind": "D"})
        K = crit.get("K")
        return cls(ObservationModel.from_dict(d), crit.get("kind", "D"),
                   None if K is None else np.asarray(K, dtype=float),
                   WeightDomain.from_dict(d["domain"]) if "domain" in d else None,
                   d.get("meta", {}))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())
            fh.write("\n")
