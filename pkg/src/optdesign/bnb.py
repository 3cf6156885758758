"""Branch-and-bound over cone relaxations for exact (integer) designs."""

import csv
import heapq
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conic import SolverConfig, Status, append_bounds, solve_data
from .criteria import Criterion, compile_criterion
from .oracle import phi_direct

logger = logging.getLogger(__name__)

PROVED_OPTIMAL = "ProvedOptimal"
GAP_REACHED = "GapReached"
NODE_LIMIT = "NodeLimit"
TIME_LIMIT = "TimeLimit"
INFEASIBLE = "Infeasible"

INTEGRALITY_TOL = 1e-6
REDUCED_CACHE = 256


@dataclass(frozen=True)
class BnBConfig:
    """Search settings.

    ``epsilon`` is the relative gap at which a node is pruned: a node whose
    bound is at most ``incumbent + epsilon * |incumbent|`` cannot improve
    the incumbent enough to matter.  ``slack`` is a small additional
    tolerance covering the accuracy of the relaxation solves.
    ``integer_power`` optionally declares that ``Phi^p`` is integral on
    every feasible design (p = m for D-optimal block designs); pruned nodes
    then count as proofs whenever their bound admits no larger integer.
    """

    epsilon: float = 1e-4
    node_limit: int = None
    time_limit: float = None
    branch_rule: str = "MostFractional"
    node_order: str = "BestBound"
    threads: int = 1
    slack: float = 1e-7
    integer_power: int = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.branch_rule not in ("MostFractional", "MaxWeight"):
            raise ValueError(f"unknown branch rule {self.branch_rule!r}")
        if self.node_order not in ("BestBound", "DepthFirst"):
            raise ValueError(f"unknown node order {self.node_order!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive")


@dataclass
class BnBResult:
    incumbent: np.ndarray
    incumbent_value: float
    best_bound: float
    gap: float
    status: str
    nodes_explored: int
    wall_time: float
    root_bound: float
    trace: list = field(default_factory=list)
    failed_nodes: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self):
        f = lambda v: None if v is None or not math.isfinite(v) else float(v)
        return {
            "incumbent": None if self.incumbent is None else [int(v) for v in self.incumbent],
            "incumbent_value": f(self.incumbent_value),
            "best_bound": f(self.best_bound),
            "gap": f(self.gap),
            "status": self.status,
            "nodes_explored": self.nodes_explored,
            "wall_time": self.wall_time,
            "root_bound": f(self.root_bound),
            "failed_nodes": self.failed_nodes,
            "notes": self.notes,
        }


def relative_gap(bound, value):
    """``(bound - value) / |value|``; infinite without an incumbent."""
    if value is None or not math.isfinite(value) or not math.isfinite(bound):
        return math.inf if bound != value else 0.0
    if value == 0:
        return 0.0 if bound <= 0 else math.inf
    return max(0.0, (bound - value) / abs(value))


def block_design_epsilon(m, T_upper):
    """Gap ``(1 + 1/T)^(1/m) - 1`` below which tree-count integrality proves optimality."""
    if T_upper < 1 or m < 1:
        raise ValueError("need m >= 1 and T_upper >= 1")
    return (1.0 + 1.0 / T_upper) ** (1.0 / m) - 1.0


def tree_count_upper_bound(t, N):
    """Upper bound ``(1/t) (2N/(t-1))^(t-1)`` on the spanning trees of a t-vertex, N-edge graph."""
    if t < 2:
        raise ValueError("need at least two treatments")
    return max(1, int(math.floor((2.0 * N / (t - 1)) ** (t - 1) / t + 1e-9)))


def round_incumbent(w, domain):
    """Integer design near ``w`` by largest-remainder apportionment, or None.

    Starts from the floors, then adds units to the variables with the
    largest fractional parts while every monotone constraint stays
    satisfiable, until the equality rows and the total are met.
    """
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        return None
    w = np.clip(w, 0.0, None)
    near = np.round(w)
    if np.all(np.abs(w - near) <= INTEGRALITY_TOL) and domain.contains(near):
        return near.astype(int)
    lo, hi = domain.integer_bounds()
    n = np.clip(np.floor(w + INTEGRALITY_TOL), lo, hi).astype(float)
    frac = w - n
    order = sorted(range(domain.s), key=lambda i: (-frac[i], i))
    eq_rows = [(a, r) for a, r, sense in domain.rows() if sense == "=" and np.all(a >= 0)]

    def deficit(v):
        return [r - float(a @ v) for a, r in eq_rows]

    for sweep in range(int(max(hi.max(), 1)) + 1):
        need = deficit(n)
        if all(d <= 1e-9 for d in need):
            break
        progress = False
        for i in order:
            need = deficit(n)
            if all(d <= 1e-9 for d in need):
                break
            helps = any(a[i] > 0 and d > 1e-9 for (a, _), d in zip(eq_rows, need))
            if not helps or n[i] + 1 > hi[i]:
                continue
            trial = n.copy()
            trial[i] += 1
            if domain.partial_ok(trial):
                n = trial
                progress = True
        if not progress:
            break
    if domain.contains(n):
        return n.astype(int)
    return None


class PairSymmetry:
    """Treatment permutations acting on pair weights of a two-block design.

    At a node, two treatments a and b are twins when swapping them maps the
    current bounds and the domain onto themselves.  Twin classes generate a
    product of symmetric groups; the orbit of pair {u, v} under it contains
    every pair {u', v'} with u' a twin of u and v' a twin of v.  Using this
    subgroup of the full symmetry group keeps orbital branching valid.

    The criterion must be invariant under treatment relabelling, which
    holds for the block model and the D, A (with the block K), G and I
    criteria.
    """

    def __init__(self, t, domain):
        from .workbench import pairs
        self.t = t
        self.pairs = pairs(t)
        if domain.s != len(self.pairs):
            raise ValueError("domain size does not match the number of pairs")
        self.index = {p: k for k, p in enumerate(self.pairs)}
        self.allowed = np.zeros((t, t), dtype=bool)
        rows = domain.rows()
        base = self._row_set(rows, np.arange(domain.s), domain)
        for a in range(t):
            for b in range(a + 1, t):
                perm = self.permutation(a, b)
                if self._row_set(rows, perm, domain) == base:
                    self.allowed[a, b] = self.allowed[b, a] = True

    @staticmethod
    def _row_set(rows, perm, domain):
        key = [("b", tuple(domain.lower[perm]), tuple(domain.upper[perm]))]
        key += sorted((sense, r, tuple(a[perm])) for a, r, sense in rows)
        return key

    def permutation(self, a, b):
        """Index map of pair weights under the transposition (a b)."""
        swap = lambda v: b if v == a else a if v == b else v
        out = np.empty(len(self.pairs), dtype=int)
        for k, (u, v) in enumerate(self.pairs):
            u2, v2 = sorted((swap(u), swap(v)))
            out[k] = self.index[(u2, v2)]
        return out

    def classes(self, lo, hi):
        t = self.t
        label = [-1] * t
        for a in range(t):
            if label[a] >= 0:
                continue
            label[a] = a
            for b in range(a + 1, t):
                if label[b] < 0 and self.allowed[a, b]:
                    perm = self.permutation(a, b)
                    if np.array_equal(lo[perm], lo) and np.array_equal(hi[perm], hi):
                        label[b] = a
        return label

    def orbit(self, j, lo, hi):
        label = self.classes(lo, hi)
        u, v = self.pairs[j]
        cu, cv = label[u], label[v]
        out = [k for k, (x, y) in enumerate(self.pairs)
               if (label[x], label[y]) in ((cu, cv), (cv, cu))]
        return np.array(out, dtype=int)


@dataclass(order=True)
class _Node:
    key: tuple
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    bound: float = field(compare=False)
    depth: int = field(compare=False)


class _Search:
    def __init__(self, cp, domain, cfg, symmetry=None):
        self.symmetry = symmetry
        self.cp = cp
        self.domain = domain
        self.cfg = cfg
        self.base = cp.program.compile()
        self.widx = cp.w.indices
        self.lo0, self.hi0 = domain.integer_bounds()
        self.counter = 0
        self.inc = None
        self.inc_value = -math.inf
        self.t0 = time.perf_counter()
        self.trace = []
        self.upper_seen = math.inf
        self.lower_seen = -math.inf
        self.proof_clean = True
        self.pruned_max = -math.inf
        self.failed = 0
        self._reduced = {}

    def phi(self, w):
        return phi_direct(self.cp.criterion.kind, self.cp.model, w, self.cp.criterion.K)

    def offer(self, n):
        """Consider an integer vector as incumbent."""
        n = np.asarray(n, dtype=float)
        if not self.domain.contains(n):
            return False
        v = self.phi(n)
        if self.inc is None or v > self.inc_value:
            self.inc, self.inc_value = n.astype(int), v
            return True
        return False

    def prune(self, bound):
        """Whether a node can be discarded; keeps track of the proof state."""
        drop, proved = self.prunable(bound)
        if drop:
            self.proof_clean &= proved
            if math.isfinite(bound):
                self.pruned_max = max(self.pruned_max, bound)
        return drop

    def global_bound(self, heap):
        open_bound = max([nd.bound for nd in heap], default=-math.inf)
        return max(open_bound, self.pruned_max, self.inc_value)

    def prunable(self, bound):
        """(prune?, proved?) for a node with the given bound."""
        if self.inc is None or not math.isfinite(self.inc_value):
            return bound == -math.inf, True
        mag = abs(self.inc_value)
        tight = self.inc_value + self.cfg.slack * max(mag, 1e-9)
        if bound <= tight:
            return True, True
        if bound <= self.inc_value + self.cfg.epsilon * mag:
            p = self.cfg.integer_power
            proved = p is not None and self.inc_value > 0 and \
                math.floor(bound ** p * (1.0 + 1e-12)) <= round(self.inc_value ** p)
            return True, proved
        return False, False

    def record(self, upper):
        lower = self.inc_value if self.inc is not None else -math.inf
        upper = min(upper, self.upper_seen)
        if self.inc is not None:
            upper = max(upper, lower)
        if lower != self.lower_seen or upper != self.upper_seen:
            self.lower_seen = max(lower, self.lower_seen)
            self.upper_seen = upper
            self.trace.append((time.perf_counter() - self.t0, self.lower_seen, self.upper_seen))

    def relax(self, lo, hi):
        """Solve a node relaxation; returns (status, bound, w)."""
        if np.all(lo == hi):
            n = lo.astype(float)
            if not self.domain.contains(n):
                return "infeasible", -math.inf, None
            return "leaf", self.phi(n), n
        keep, base, widx = self.reduced(hi)
        lower = {int(widx[k]): float(lo[i]) for k, i in enumerate(keep) if lo[i] > self.lo0[i] or lo[i] == hi[i]}
        upper = {int(widx[k]): float(hi[i]) for k, i in enumerate(keep) if hi[i] < self.hi0[i] or lo[i] == hi[i]}
        data = append_bounds(base, lower, upper)
        sol = solve_data(data, self.cfg.solver)
        if sol.status == Status.PRIMAL_INFEASIBLE:
            return "infeasible", -math.inf, None
        w = np.zeros(len(lo))
        w[keep] = sol.x[widx]
        if not np.all(np.isfinite(w)):
            return "failed", math.nan, None
        if not sol.optimal:
            return "failed", math.nan, w
        ub = max(sol.objective, sol.dual_objective)
        return "ok", self.cp.phi_recovery(ub), w

    def reduced(self, hi):
        """Program without auxiliary blocks for points whose weight is fixed at zero.

        A zero weight forces the matching blocks of the cone program to
        vanish, and leaving them in produces cones without interior.  For
        D_K and A_K the points are dropped from the model; G keeps every
        point (the maximal variance runs over all of them) and only drops
        the blocks H_i^j of the zero-weight points j.
        """
        keep = np.flatnonzero(hi > 0)
        if len(keep) == len(hi) or len(keep) == 0:
            return np.arange(len(hi)), self.base, self.widx
        key = tuple(keep)
        if key in self._reduced:
            return self._reduced[key]
        from .workbench import ObservationModel, WeightDomain
        d = self.domain
        crit = self.cp.criterion
        if crit.family() == "G":
            cp = compile_criterion(crit, self.cp.model, d.relaxed(), support=keep)
            out = np.arange(len(hi)), cp.program.compile(), cp.w.indices
        else:
            sub = ObservationModel([self.cp.model.matrices[i] for i in keep])
            dom = WeightDomain(len(keep), [(a[keep], r) for a, r in d.eq],
                               [(a[keep], r, sense) for a, r, sense in d.ineq],
                               d.lower[keep], d.upper[keep], d.total, False)
            K = crit.resolve_K(self.cp.model)
            crit = Criterion("DK" if crit.family() == "DK" else "AK", K)
            cp = compile_criterion(crit, sub, dom)
            out = keep, cp.program.compile(), cp.w.indices
        if len(self._reduced) < REDUCED_CACHE:
            self._reduced[key] = out
        return out

    def branch_var(self, w, lo, hi):
        free = [i for i in range(len(w)) if lo[i] < hi[i]]
        frac = [(i, w[i] - math.floor(w[i])) for i in free]
        frac = [(i, f) for i, f in frac if INTEGRALITY_TOL < f < 1 - INTEGRALITY_TOL]
        if not frac:
            return None
        if self.cfg.branch_rule == "MaxWeight":
            return max(frac, key=lambda it: (w[it[0]], -it[0]))[0]
        return min(frac, key=lambda it: (abs(it[1] - 0.5), it[0]))[0]

    def push_key(self, bound, depth, prefer):
        self.counter += 1
        if self.cfg.node_order == "DepthFirst":
            return (-depth, prefer, self.counter)
        return (-bound, self.counter)


def solve_misocp(criterion, model, domain, cfg=None, initial=None, symmetry=None):
    """Exact optimal design over an integer weight domain.

    Rational constraint rows are first divided by their gcd and their
    right-hand sides rounded, which leaves the integer points unchanged.
    ``initial`` optionally supplies a feasible integer design (for example
    from the exchange heuristic) to seed the incumbent.  ``symmetry``
    optionally supplies a :class:`PairSymmetry` (or any object with an
    ``orbit(j, lo, hi)`` method) describing permutations of the weights
    that leave both the criterion and the domain unchanged; branching then
    discards symmetric copies of the down branch.
    """
    cfg = cfg or BnBConfig()
    if isinstance(criterion, str):
        criterion = Criterion(criterion)
    if not domain.integer:
        raise ValueError("solve_misocp needs an integer domain")
    # same integer points, tighter relaxation
    domain = domain.tightened()
    cp = compile_criterion(criterion, model, domain.relaxed())
    S = _Search(cp, domain, cfg, symmetry)
    lo, hi = domain.integer_bounds()
    if initial is not None:
        if not S.offer(initial):
            logger.info("initial design rejected (infeasible or not better)")

    if np.all(lo == hi):
        status, bound, w = S.relax(lo, hi)
        if status == "leaf":
            S.offer(w)
        return _finish(S, PROVED_OPTIMAL if S.inc is not None else INFEASIBLE, 1, bound, bound)

    status, root_bound, w = S.relax(lo, hi)
    if status == "infeasible":
        return _finish(S, INFEASIBLE, 1, -math.inf, -math.inf)
    if status == "failed":
        S.failed += 1
        root_bound = math.inf
    if w is not None:
        guess = round_incumbent(w, domain)
        if guess is not None:
            S.offer(guess)
    S.record(root_bound)

    heap = []
    nodes = 1
    _expand(S, heap, lo, hi, w, root_bound, 0, status)
    limit = None
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        while heap:
            if cfg.node_limit is not None and nodes >= cfg.node_limit:
                limit = NODE_LIMIT
                break
            if cfg.time_limit is not None and time.perf_counter() - S.t0 >= cfg.time_limit:
                limit = TIME_LIMIT
                break
            batch = []
            while heap and len(batch) < cfg.threads:
                node = heapq.heappop(heap)
                if S.prune(node.bound):
                    continue
                batch.append(node)
            if not batch:
                continue
            if pool is None:
                results = [S.relax(nd.lo, nd.hi) for nd in batch]
            else:
                results = list(pool.map(lambda nd: S.relax(nd.lo, nd.hi), batch))
            for node, (st, bound, w) in zip(batch, results):
                nodes += 1
                if st == "infeasible":
                    continue
                if st == "leaf":
                    S.offer(w)
                    continue
                if st == "failed":
                    S.failed += 1
                    bound = node.bound
                else:
                    bound = min(bound, node.bound)
                if w is not None:
                    near = np.round(w)
                    if st == "ok" and np.all(np.abs(w - near) <= INTEGRALITY_TOL):
                        if S.offer(near) or S.domain.contains(near):
                            continue
                    guess = round_incumbent(w, domain)
                    if guess is not None:
                        S.offer(guess)
                if S.prune(bound):
                    continue
                _expand(S, heap, node.lo, node.hi, w, bound, node.depth + 1, st)
            S.record(S.global_bound(heap))
    finally:
        if pool is not None:
            pool.shutdown()

    best = min(S.global_bound(heap), S.upper_seen)
    if limit is None:
        if S.inc is None:
            return _finish(S, INFEASIBLE, nodes, -math.inf, root_bound)
        status = PROVED_OPTIMAL if S.proof_clean else GAP_REACHED
        return _finish(S, status, nodes, best, root_bound)
    gap = relative_gap(best, S.inc_value if S.inc is not None else None)
    if S.inc is not None and gap <= cfg.epsilon:
        limit = GAP_REACHED
    return _finish(S, limit, nodes, best, root_bound)


def _expand(S, heap, lo, hi, w, bound, depth, status):
    if status == "failed" or w is None:
        free = [i for i in range(len(lo)) if lo[i] < hi[i]]
        if not free:
            return
        j = max(free, key=lambda i: (hi[i] - lo[i], -i))
        cut = (lo[j] + hi[j]) // 2
        frac = 0.5
    else:
        j = S.branch_var(w, lo, hi)
        if j is None:
            # integral relaxation that is infeasible after exact checking:
            # split the first free variable at its value
            free = [i for i in range(len(lo)) if lo[i] < hi[i]]
            if not free:
                return
            j = free[0]
            cut = int(min(max(round(w[j]), lo[j]), hi[j] - 1))
            frac = 0.5
        else:
            cut = int(math.floor(w[j]))
            frac = w[j] - cut
    down_hi = hi.copy()
    if S.symmetry is not None:
        # orbital branching: the down child bounds the whole orbit of j
        orbit = S.symmetry.orbit(j, lo, hi)
        down_hi[orbit] = np.minimum(down_hi[orbit], cut)
    down_hi[j] = cut
    up_lo = lo.copy()
    up_lo[j] = cut + 1
    # in depth-first order the child closer to the relaxation is explored first
    up_first = frac >= 0.5
    for child_lo, child_hi, first in ((lo, down_hi, not up_first), (up_lo, hi, up_first)):
        if np.any(child_lo > child_hi):
            continue
        heapq.heappush(heap, _Node(S.push_key(bound, depth, 0 if first else 1), child_lo.copy(),
                                   child_hi.copy(), bound, depth))


def _finish(S, status, nodes, bound, root_bound):
    value = S.inc_value if S.inc is not None else -math.inf
    if S.inc is not None:
        bound = max(bound, value)
    S.record(bound if math.isfinite(bound) else S.upper_seen)
    gap = relative_gap(bound, value if S.inc is not None else None)
    res = BnBResult(S.inc, value, bound, gap, status, nodes, time.perf_counter() - S.t0, root_bound,
                    list(S.trace), S.failed)
    if S.failed:
        res.notes.append(f"{S.failed} relaxations failed; parent bounds reused")
    return res


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["wall_seconds", "lower", "upper"])
        for t, lo, up in trace:
            out.writerow([f"{t:.6f}", repr(lo), repr(up)])
