"""Exchange heuristic for exact designs.

Each run builds a start design (a few random trials completed greedily)
and then repeatedly swaps one trial for another, picking the best swap
among a pool of K candidate additions (largest variance) and L candidate
deletions (smallest variance), until no swap improves the criterion.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .criteria import Criterion
from .oracle import phi_direct

IMPROVE_TOL = 1e-10
TIE_TOL = 1e-9
REGULARISATION = 1e-4
COMPLETION_RETRIES = 50


@dataclass(frozen=True)
class ExchangeConfig:
    """``K`` and ``L`` fix the pool sizes; None draws them per run (1..s, 1..N)."""

    runs: int = 20
    seed: int = 0
    K: int = None
    L: int = None
    max_iter: int = 10_000

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.K is not None and self.K < 1 or self.L is not None and self.L < 1:
            raise ValueError("pool sizes must be positive")


@dataclass
class ExchangeResult:
    design: np.ndarray
    value: float
    run_values: list = field(default_factory=list)
    run_designs: list = field(default_factory=list)

    def success_frequency(self, target, rel_tol=1e-9):
        hits = sum(1 for v in self.run_values if v >= target - rel_tol * max(1.0, abs(target)))
        return hits / len(self.run_values)


class _Scorer:
    """Vectorised criterion evaluation on stacks of information matrices.

    Scores are pairs (rank, value); singular matrices are compared by the
    log pseudo-determinant, full-rank ones by the criterion itself.
    """

    def __init__(self, criterion, model):
        self.kind = criterion.kind
        self.m = model.m
        self.mats = model.matrices
        self.outer = np.stack([A @ A.T for A in model.matrices])
        K = criterion.resolve_K(model)
        self.KKt = None if K is None else K @ K.T

    def score(self, Ms):
        lam, V = np.linalg.eigh(Ms)
        top = np.maximum(np.abs(lam).max(axis=1, keepdims=True), 1e-300)
        keep = lam > self.m * 1e-12 * top
        rank = keep.sum(axis=1)
        logp = np.where(keep, np.log(np.where(keep, lam, 1.0)), 0.0).sum(axis=1)
        val = logp.copy()
        full = rank == self.m
        if self.kind != "D" and np.any(full):
            Vf, lf = V[full], lam[full]
            inv = np.einsum("pij,pj,pkj->pik", Vf, 1.0 / lf, Vf)
            if self.kind == "G":
                var = np.einsum("pij,sji->ps", inv, self.outer)
                val[full] = -var.max(axis=1)
            else:
                val[full] = -np.einsum("pij,ji->p", inv, self.KKt)
        elif self.kind == "D":
            val = logp / self.m
        return rank, val

    def variances(self, M):
        lam, V = np.linalg.eigh(M)
        keep = lam > self.m * 1e-12 * max(abs(lam).max(), 1e-300)
        Mp = (V[:, keep] / lam[keep]) @ V[:, keep].T
        return np.einsum("ij,sji->s", Mp, self.outer)


def _better(r1, v1, r0, v0):
    if r1 != r0:
        return r1 > r0
    return v1 > v0 + IMPROVE_TOL * max(1.0, abs(v0))


def _best_index(rank, val):
    """Index of the best (rank, value) pair; near-ties go to the lowest index."""
    r = rank.max()
    cand = np.flatnonzero(rank == r)
    top = val[cand].max()
    return int(cand[np.flatnonzero(val[cand] >= top - TIE_TOL * max(1.0, abs(top)))[0]])


class _Rows:
    """Linear rows of a domain for fast feasibility checks of unit moves."""

    def __init__(self, domain):
        rows = domain.rows()
        self.A = np.array([a for a, _, _ in rows]).reshape(len(rows), domain.s)
        self.r = np.array([r for _, r, _ in rows])
        self.sense = np.array([sense for _, _, sense in rows])
        self.lo, self.hi = domain.integer_bounds()

    def ok(self, lhs):
        eq = self.sense == "="
        le = self.sense == "<="
        ge = self.sense == ">="
        return bool(np.all(np.abs(lhs[eq] - self.r[eq]) <= 1e-9) and np.all(lhs[le] <= self.r[le] + 1e-9)
                    and np.all(lhs[ge] >= self.r[ge] - 1e-9))


def _complete(n, N, scorer, domain):
    """Greedy forward completion of a partial design up to N trials.

    Each step adds the trial with the largest gain in log det of the
    regularised matrix ``M + delta I``, which stays informative while M is
    still singular.
    """
    M = np.einsum("s,sij->ij", n, scorer.outer)
    delta = REGULARISATION * max(np.trace(scorer.outer.mean(axis=0)) / scorer.m, 1e-12)
    reg = delta * np.eye(scorer.m)
    while n.sum() < N:
        cand = [i for i in range(domain.s) if domain.partial_ok(n + np.eye(domain.s)[i])]
        if not cand:
            return None, None
        _, gain = np.linalg.slogdet(M + reg + scorer.outer[cand])
        i = cand[_best_index(np.zeros(len(cand), dtype=int), gain)]
        n[i] += 1
        M = M + scorer.outer[i]
    return n, M


def _start(scorer, domain, N, rng):
    s = domain.s
    for _ in range(COMPLETION_RETRIES):
        n = np.zeros(s)
        n2 = int(rng.integers(0, min(scorer.m // 2, N) + 1))
        for _ in range(n2):
            for _ in range(100):
                i = int(rng.integers(0, s))
                trial = n.copy()
                trial[i] += 1
                if domain.partial_ok(trial):
                    n = trial
                    break
        n, M = _complete(n, N, scorer, domain)
        if n is not None and domain.contains(n):
            return n, M
    return None, None


def exchange_run(scorer, domain, N, rng, cfg):
    """One start-plus-exchange run; returns the integer design or None."""
    n, M = _start(scorer, domain, N, rng)
    if n is None:
        return None
    s = domain.s
    K = cfg.K if cfg.K is not None else int(rng.integers(1, s + 1))
    L = cfg.L if cfg.L is not None else int(rng.integers(1, max(N, 1) + 1))
    rows = _Rows(domain)
    lhs = rows.A @ n
    r0, v0 = scorer.score(M[None])
    cur_rank, cur_val = int(r0[0]), float(v0[0])
    for _ in range(cfg.max_iter):
        d = scorer.variances(M)
        adds = sorted(range(s), key=lambda i: (-d[i], i))[:min(K, s)]
        support = [j for j in range(s) if n[j] > 0]
        dels = sorted(support, key=lambda j: (d[j], j))[:min(L, len(support))]
        pairs = []
        for i in sorted(adds):
            for j in sorted(dels):
                if i == j or n[i] + 1 > rows.hi[i] or n[j] - 1 < rows.lo[j]:
                    continue
                if rows.ok(lhs + rows.A[:, i] - rows.A[:, j]):
                    pairs.append((i, j))
        if not pairs:
            break
        P = np.array(pairs)
        Ms = M[None] + scorer.outer[P[:, 0]] - scorer.outer[P[:, 1]]
        rank, val = scorer.score(Ms)
        b = _best_index(rank, val)
        if not _better(int(rank[b]), float(val[b]), cur_rank, cur_val):
            break
        i, j = pairs[b]
        n[i] += 1
        n[j] -= 1
        lhs = lhs + rows.A[:, i] - rows.A[:, j]
        M = M + scorer.outer[i] - scorer.outer[j]
        cur_rank, cur_val = int(rank[b]), float(val[b])
    return n.astype(int)


def kl_exchange(criterion, model, domain, cfg=None):
    """Best design over ``cfg.runs`` independent exchange runs.

    Run r uses its own generator seeded with ``(cfg.seed, r)``, so results
    do not depend on how runs are scheduled.
    """
    cfg = cfg or ExchangeConfig()
    if isinstance(criterion, str):
        criterion = Criterion(criterion)
    total = domain.implied_total()
    if total is None:
        raise ValueError("exchange needs a fixed number of trials")
    N = int(round(total))
    scorer = _Scorer(criterion, model)
    best, best_val, values, designs = None, -math.inf, [], []
    for r in range(cfg.runs):
        rng = np.random.default_rng([cfg.seed, r])
        n = exchange_run(scorer, domain, N, rng, cfg)
        if n is None:
            values.append(-math.inf)
            designs.append(None)
            continue
        v = phi_direct(criterion.kind, model, n, criterion.K)
        values.append(v)
        designs.append(n)
        if best is None or v > best_val:
            best, best_val = n, v
    return ExchangeResult(best, best_val, values, designs)
