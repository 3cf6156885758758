"""Second-order cone programs in builder form.

A :class:`ConicProgram` maximizes a linear objective over variables subject
to linear equalities and cone memberships of affine expressions::

    maximize    c^T x
    subject to  A x = b
                (g_1^T x + h_1, ..., g_d^T x + h_d) in K_j   for every cone j

where each ``K_j`` is either the nonnegative half-line (d = 1) or a
second-order cone ``{(u, v): ||v|| <= u}``.  Inequalities are stored as
nonnegative cone rows, so the solver sees a single canonical form.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

NONNEG = "nonneg"
SOC = "soc"


@dataclass(frozen=True)
class VarHandle:
    """A contiguous block of program variables, optionally matrix-shaped."""

    start: int
    size: int
    label: str = ""
    shape: tuple = ()

    @property
    def indices(self):
        return np.arange(self.start, self.start + self.size)

    def __len__(self):
        return self.size

    def __getitem__(self, key):
        if isinstance(key, tuple):
            if len(self.shape) != 2:
                raise IndexError(f"{self.label!r} is not matrix-shaped")
            i, j = key
            rows, cols = self.shape
            if not (0 <= i < rows and 0 <= j < cols):
                raise IndexError(f"index {key} out of range for shape {self.shape}")
            return self.start + i * cols + j
        if key < 0:
            key += self.size
        if not 0 <= key < self.size:
            raise IndexError(f"index {key} out of range for {self.label!r}")
        return self.start + key

    def expr(self, key=0, coef=1.0):
        return Expr({self[key]: float(coef)})

    def exprs(self):
        return [Expr({int(i): 1.0}) for i in self.indices]


class Expr:
    """Sparse affine expression ``sum coef_i x_i + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = {} if terms is None else dict(terms)
        self.const = float(const)

    @classmethod
    def constant(cls, value):
        return cls({}, value)

    @classmethod
    def lift(cls, obj):
        if isinstance(obj, Expr):
            return obj
        if isinstance(obj, VarHandle):
            if obj.size != 1:
                raise ValueError(f"handle {obj.label!r} is not scalar")
            return obj.expr(0)
        if isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
            raise TypeError("ambiguous integer: use Expr.constant or a handle")
        return cls.constant(float(obj))

    def __add__(self, other):
        other = Expr.lift(other)
        out = Expr(self.terms, self.const + other.const)
        for k, v in other.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        return out

    __radd__ = __add__

    def __neg__(self):
        return Expr({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-Expr.lift(other))

    def __rsub__(self, other):
        return Expr.lift(other) - self

    def __mul__(self, scalar):
        scalar = float(scalar)
        return Expr({k: scalar * v for k, v in self.terms.items()}, scalar * self.const)

    __rmul__ = __mul__

    def __repr__(self):
        parts = [f"{v:+g}*x{k}" for k, v in sorted(self.terms.items())]
        if self.const or not parts:
            parts.append(f"{self.const:+g}")
        return " ".join(parts)


def _as_exprs(obj):
    if isinstance(obj, VarHandle):
        return obj.exprs()
    if isinstance(obj, Expr):
        return [obj]
    return [Expr.lift(o) for o in obj]


class ConicProgram:
    """Mutable builder for an SOCP; see the module docstring for the form."""

    def __init__(self):
        self.nvars = 0
        self.handles = []
        self.objective = {}
        self.eq_rows = []  # list of (terms dict, rhs)
        self.cones = []  # list of (kind, [Expr, ...])
        self._compiled = None

    # ------------------------------------------------------------------ vars
    def add_variables(self, size, label="", shape=()):
        if size < 0:
            raise ValueError("variable block size must be nonnegative")
        shape = tuple(shape)
        if shape and int(np.prod(shape)) != size:
            raise ValueError(f"shape {shape} does not match size {size}")
        h = VarHandle(self.nvars, int(size), label, shape)
        self.nvars += int(size)
        self.handles.append(h)
        self._compiled = None
        return h

    def _check_expr(self, e):
        for k in e.terms:
            if not 0 <= k < self.nvars:
                raise ValueError(f"variable index {k} not in program (nvars={self.nvars})")

    # ------------------------------------------------------------ objective
    def set_objective(self, expr, sense="max"):
        expr = Expr.lift(expr)
        self._check_expr(expr)
        if sense not in ("max", "min"):
            raise ValueError("sense must be 'max' or 'min'")
        sign = 1.0 if sense == "max" else -1.0
        self.objective = {k: sign * v for k, v in expr.terms.items()}
        self._compiled = None

    # ---------------------------------------------------------- constraints
    def add_equality(self, expr, rhs=0.0):
        """Constrain ``expr == rhs``; returns the row id."""
        expr = Expr.lift(expr)
        self._check_expr(expr)
        self.eq_rows.append(({k: v for k, v in expr.terms.items() if v != 0.0}, float(rhs) - expr.const))
        self._compiled = None
        return ("eq", len(self.eq_rows) - 1)

    def add_nonneg(self, exprs):
        """Constrain each affine expression to be >= 0; returns cone ids."""
        ids = []
        for e in _as_exprs(exprs):
            self._check_expr(e)
            self.cones.append((NONNEG, [e]))
            ids.append(len(self.cones) - 1)
        self._compiled = None
        return ids

    def add_soc(self, head, tail):
        """Constrain ``||tail|| <= head``; returns the cone id."""
        head = Expr.lift(head)
        tail = _as_exprs(tail)
        for e in [head, *tail]:
            self._check_expr(e)
        self.cones.append((SOC, [head, *tail]))
        self._compiled = None
        return len(self.cones) - 1

    def add_linear(self, coeffs, vars, rhs, sense="="):
        """Add ``sum coeffs_i * x_{vars_i} (sense) rhs`` with sense in <=, =, >=."""
        vars = list(vars.indices) if isinstance(vars, VarHandle) else list(vars)
        coeffs = list(np.asarray(coeffs, dtype=float).ravel())
        rhs = float(rhs)
        if len(coeffs) != len(vars):
            raise ValueError(f"{len(coeffs)} coefficients for {len(vars)} variables")
        expr = Expr()
        for c, v in zip(coeffs, vars):
            expr = expr + Expr({int(v): c})
        if sense in ("=", "=="):
            return self.add_equality(expr, rhs)
        if sense == "<=":
            return ("cone", self.add_nonneg([Expr.constant(rhs) - expr])[0])
        if sense == ">=":
            return ("cone", self.add_nonneg([expr - rhs])[0])
        raise ValueError(f"unknown sense {sense!r}")

    def add_rotated_cone(self, x, t, u):
        """Constrain ``||x||^2 <= t*u`` with ``t, u >= 0``.

        Stored as the standard cone ``||(2x, t - u)|| <= t + u``.
        """
        xs = _as_exprs(x)
        t = Expr.lift(t)
        u = Expr.lift(u)
        return self.add_soc(t + u, [2.0 * e for e in xs] + [t - u])

    def add_geomean_hypograph(self, x, t):
        """Constrain ``0 <= t <= (prod x_i)^(1/n)`` by a tree of rotated cones.

        The n factors are padded with copies of ``t`` up to the next power of
        two q, so that ``t^q <= x_1 ... x_n t^(q-n)``.  Pairs consisting of two
        copies of ``t`` are collapsed to ``t`` itself.  Returns the cone ids.
        """
        xs = _as_exprs(x)
        t = Expr.lift(t)
        n = len(xs)
        if n == 0:
            raise ValueError("geometric mean of zero factors")
        if n == 1:
            return self.add_nonneg([xs[0] - t])
        q = 1
        while q < n:
            q *= 2
        # None marks a padding copy of t
        level = list(xs) + [None] * (q - n)
        ids = []
        while len(level) > 2:
            nxt = []
            for a, b in zip(level[::2], level[1::2]):
                if a is None and b is None:
                    nxt.append(None)
                    continue
                v = self.add_variables(1, "geomean_aux")
                ids.append(self.add_rotated_cone(
                    v.expr(), t if a is None else a, t if b is None else b))
                nxt.append(v.expr())
            level = nxt
        a, b = level
        ids.append(self.add_rotated_cone(t, t if a is None else a, t if b is None else b))
        return ids

    # ------------------------------------------------------------- compiled
    def copy(self):
        out = ConicProgram()
        out.nvars = self.nvars
        out.handles = list(self.handles)
        out.objective = dict(self.objective)
        out.eq_rows = list(self.eq_rows)
        out.cones = list(self.cones)
        return out

    def with_bounds(self, lower=None, upper=None):
        """Copy of the program with extra bounds ``lower[i] <= x_i <= upper[i]``.

        ``lower`` and ``upper`` map variable indices to values.  A variable
        with equal bounds is fixed by an equality row.
        """
        lower = dict(lower or {})
        upper = dict(upper or {})
        out = self.copy()
        for i in sorted(set(lower) | set(upper)):
            lo, hi = lower.get(i), upper.get(i)
            if lo is not None and hi is not None and lo == hi:
                out.add_equality(Expr({i: 1.0}), lo)
                continue
            if lo is not None:
                out.add_nonneg([Expr({i: 1.0}, -lo)])
            if hi is not None:
                out.add_nonneg([Expr({i: -1.0}, hi)])
        return out

    def compile(self):
        """Return solver matrices for ``min c^T x, Ax=b, Gx+s=h, s in K``.

        The cone rows are reordered: all nonnegative rows first, then the
        second-order cones in program order.  Result keys: c, A, b, G, h,
        dims (dict with 'l' and 'q').
        """
        if self._compiled is not None:
            return self._compiled
        n = self.nvars
        c = np.zeros(n)
        for k, v in self.objective.items():
            c[k] = -v

        ri, ci, vi, b = [], [], [], []
        for r, (terms, rhs) in enumerate(self.eq_rows):
            for k, v in terms.items():
                ri.append(r)
                ci.append(k)
                vi.append(v)
            b.append(rhs)
        A = sp.csr_matrix((vi, (ri, ci)), shape=(len(self.eq_rows), n))

        lin = [cone[1][0] for cone in self.cones if cone[0] == NONNEG]
        socs = [cone[1] for cone in self.cones if cone[0] == SOC]
        rows = lin + [e for cone in socs for e in cone]
        gi, gj, gv = [], [], []
        h = np.empty(len(rows))
        for r, e in enumerate(rows):
            for k, v in e.terms.items():
                gi.append(r)
                gj.append(k)
                gv.append(-v)
            h[r] = e.const
        G = sp.csr_matrix((gv, (gi, gj)), shape=(len(rows), n))
        self._compiled = {
            "c": c,
            "A": A,
            "b": np.asarray(b, dtype=float),
            "G": G,
            "h": h,
            "dims": {"l": len(lin), "q": [len(cone) for cone in socs]},
        }
        return self._compiled

    # --------------------------------------------------------- serialization
    def to_dict(self):
        enc = lambda e: {"terms": [[k, v] for k, v in sorted(e.terms.items())], "const": e.const}
        return {
            "nvars": self.nvars,
            "handles": [[h.start, h.size, h.label, list(h.shape)] for h in self.handles],
            "objective": [[k, v] for k, v in sorted(self.objective.items())],
            "equalities": [{"terms": [[k, v] for k, v in sorted(t.items())], "rhs": r}
                           for t, r in self.eq_rows],
            "cones": [{"kind": kind, "rows": [enc(e) for e in rows]} for kind, rows in self.cones],
        }

    @classmethod
    def from_dict(cls, d):
        dec = lambda r: Expr({int(k): float(v) for k, v in r["terms"]}, r["const"])
        p = cls()
        p.nvars = int(d["nvars"])
        p.handles = [VarHandle(int(s), int(n), lab, tuple(shape)) for s, n, lab, shape in d["handles"]]
        p.objective = {int(k): float(v) for k, v in d["objective"]}
        p.eq_rows = [({int(k): float(v) for k, v in e["terms"]}, float(e["rhs"])) for e in d["equalities"]]
        p.cones = [(c["kind"], [dec(r) for r in c["rows"]]) for c in d["cones"]]
        return p

    def dumps(self):
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def listing(self):
        """Human-readable dump, one constraint per line."""
        lines = [f"# {self.nvars} variables, {len(self.eq_rows)} equalities, {len(self.cones)} cones"]
        for h in self.handles:
            lines.append(f"var {h.label or '_'} [{h.start}:{h.start + h.size}] shape={h.shape or (h.size,)}")
        obj = " ".join(f"{v:+g}*x{k}" for k, v in sorted(self.objective.items())) or "0"
        lines.append(f"maximize {obj}")
        for terms, rhs in self.eq_rows:
            lhs = " ".join(f"{v:+g}*x{k}" for k, v in sorted(terms.items())) or "0"
            lines.append(f"eq   {lhs} = {rhs:g}")
        for kind, rows in self.cones:
            if kind == NONNEG:
                lines.append(f"nneg {rows[0]!r} >= 0")
            else:
                tail = ", ".join(repr(e) for e in rows[1:])
                lines.append(f"soc  ||({tail})|| <= {rows[0]!r}")
        return "\n".join(lines)


def append_bounds(data, lower=None, upper=None):
    """Compiled data with extra variable bounds prepended to the linear cone rows.

    Cheaper than :meth:`ConicProgram.with_bounds` followed by ``compile``
    when many bound sets are applied to one base program.  Equal bounds
    become equality rows.
    """
    lower = dict(lower or {})
    upper = dict(upper or {})
    n = data["c"].shape[0]
    eq_idx, eq_val, gi, gv, hv = [], [], [], [], []
    for i in sorted(set(lower) | set(upper)):
        lo, hi = lower.get(i), upper.get(i)
        if lo is not None and hi is not None and lo == hi:
            eq_idx.append(i)
            eq_val.append(lo)
            continue
        if lo is not None:  # -x_i + s = -lo
            gi.append(i)
            gv.append(-1.0)
            hv.append(-lo)
        if hi is not None:  # x_i + s = hi
            gi.append(i)
            gv.append(1.0)
            hv.append(hi)
    out = dict(data)
    if eq_idx:
        E = sp.csr_matrix((np.ones(len(eq_idx)), (np.arange(len(eq_idx)), eq_idx)), shape=(len(eq_idx), n))
        out["A"] = sp.vstack([data["A"], E], format="csr")
        out["b"] = np.concatenate([data["b"], eq_val])
    if gi:
        B = sp.csr_matrix((gv, (np.arange(len(gi)), gi)), shape=(len(gi), n))
        out["G"] = sp.vstack([B, data["G"]], format="csr")
        out["h"] = np.concatenate([hv, data["h"]])
        out["dims"] = {"l": data["dims"]["l"] + len(gi), "q": list(data["dims"]["q"])}
    return out
