"""Primal-dual interior-point method for second-order cone programs.

Works on the standard pair::

    primal:  minimize c^T x   s.t.  A x = b,  G x + s = h,  s in K
    dual:    maximize -b^T y - h^T z   s.t.  A^T y + G^T z + c = 0,  z in K

with K a product of a nonnegative orthant and second-order cones.  The
iteration follows the homogeneous self-dual embedding (variables tau and
kappa), uses Nesterov-Todd scaling and a Mehrotra predictor-corrector step.
Each Newton system is solved in its scaled augmented form with SuperLU
after a small static regularisation (symmetric minimum-degree ordering,
diagonal pivots), then polished by iterative refinement against the
unregularised system.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

STEP_FRACTION = 0.99
STATIC_REG = 1e-9
REFINE_STEPS = 5
# residual (relative to the right-hand side) accepted from the diagonal-pivot factor
REFINE_ACCEPT = 1e-11
# a failed or stalled run returns its best iterate when residuals and gap
# are within this factor of the requested tolerances
INACCURATE_FACTOR = 1e3


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    OPTIMAL_INACCURATE = "OptimalInaccurate"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    ITER_LIMIT = "IterLimit"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class SolverConfig:
    rel_gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 200
    verbose: bool = False

    def __post_init__(self):
        if self.rel_gap_tol <= 0 or self.feas_tol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class ConicSolution:
    """Result of :func:`solve`.

    ``objective`` and ``dual_objective`` are in the program's own sense
    (maximisation).  For infeasible statuses ``y``/``z`` (primal
    infeasibility) or ``x`` (dual infeasibility) hold the certificate ray.
    """

    status: Status
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    objective: float
    dual_objective: float
    iterations: int
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    gap: float = np.nan
    trace: list = field(default_factory=list)

    @property
    def duals(self):
        return np.concatenate([self.y, self.z])

    @property
    def optimal(self):
        return self.status in (Status.OPTIMAL, Status.OPTIMAL_INACCURATE)


class _Cones:
    """Vectorised cone arithmetic for a nonnegative block plus SOC groups."""

    def __init__(self, dims):
        self.l = int(dims["l"])
        q = [int(d) for d in dims["q"]]
        if any(d < 1 for d in q):
            raise ValueError("second-order cones need dimension >= 1")
        self.n = self.l + sum(q)
        self.degree = self.l + len(q)
        groups = {}
        off = self.l
        for d in q:
            groups.setdefault(d, []).append(off)
            off += d
        # each group: (d, index array of shape (count, d))
        self.groups = [(d, np.asarray(starts)[:, None] + np.arange(d)[None, :])
                       for d, starts in sorted(groups.items())]

    def unit(self):
        e = np.zeros(self.n)
        e[: self.l] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def jprod(self, u, v):
        out = np.empty(self.n)
        out[: self.l] = u[: self.l] * v[: self.l]
        for _, idx in self.groups:
            U, V = u[idx], v[idx]
            out[idx[:, 0]] = np.sum(U * V, axis=1)
            out[idx[:, 1:]] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
        return out

    def jdiv(self, lam, v):
        """Solve ``lam o u = v`` for u."""
        out = np.empty(self.n)
        out[: self.l] = v[: self.l] / lam[: self.l]
        for _, idx in self.groups:
            L, V = lam[idx], v[idx]
            l0, l1 = L[:, 0], L[:, 1:]
            nrm = np.sqrt(np.sum(l1 * l1, axis=1))
            det = (l0 - nrm) * (l0 + nrm)
            u0 = (l0 * V[:, 0] - np.sum(l1 * V[:, 1:], axis=1)) / det
            out[idx[:, 0]] = u0
            out[idx[:, 1:]] = (V[:, 1:] - u0[:, None] * l1) / l0[:, None]
        return out

    def interior_margin(self, u):
        """Smallest Jordan eigenvalue over all cones (positive iff interior)."""
        m = np.inf
        if self.l:
            m = min(m, float(np.min(u[: self.l])))
        for _, idx in self.groups:
            U = u[idx]
            m = min(m, float(np.min(U[:, 0] - np.linalg.norm(U[:, 1:], axis=1))))
        return m

    def max_step(self, x, d):
        """Largest alpha with x + alpha d in the (closed) cone; inf if unbounded."""
        inv = 0.0
        if self.l:
            r = -d[: self.l] / x[: self.l]
            inv = max(inv, float(np.max(r)))
        for _, idx in self.groups:
            X, D = x[idx], d[idx]
            xn = np.sqrt(np.maximum(X[:, 0] ** 2 - np.sum(X[:, 1:] ** 2, axis=1), 1e-300))
            xb = X / xn[:, None]
            jd = xb[:, 0] * D[:, 0] - np.sum(xb[:, 1:] * D[:, 1:], axis=1)
            rho0 = jd / xn
            coef = (jd + D[:, 0]) / (xb[:, 0] + 1.0)
            rho1 = (D[:, 1:] - coef[:, None] * xb[:, 1:]) / xn[:, None]
            inv = max(inv, float(np.max(np.linalg.norm(rho1, axis=1) - rho0)))
        return np.inf if inv <= 0 else 1.0 / inv

    def scaling(self, s, z):
        """Nesterov-Todd scaling at (s, z).

        Returns a dict holding the orthant diagonal, the normalised scaling
        point and factor of every SOC, and ``lam = W z = W^{-1} s``.  ``W`` is
        symmetric.
        """
        sc = {"diag": np.sqrt(s[: self.l] / z[: self.l]), "soc": []}
        for d, idx in self.groups:
            S, Z = s[idx], z[idx]
            sn = np.sqrt(S[:, 0] ** 2 - np.sum(S[:, 1:] ** 2, axis=1))
            zn = np.sqrt(Z[:, 0] ** 2 - np.sum(Z[:, 1:] ** 2, axis=1))
            sb = S / sn[:, None]
            zb = Z / zn[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.sum(sb * zb, axis=1)))
            wb = sb.copy()
            wb[:, 0] += zb[:, 0]
            wb[:, 1:] -= zb[:, 1:]
            wb /= (2.0 * gamma)[:, None]
            beta = np.sqrt(sn / zn)
            sc["soc"].append((d, idx, wb, beta))
        sc["lam"] = self.apply_w(sc, z)
        return sc

    def apply_w(self, sc, u, inverse=False):
        out = np.empty(self.n)
        dg = sc["diag"]
        out[: self.l] = u[: self.l] / dg if inverse else u[: self.l] * dg
        for d, idx, wb, beta in sc["soc"]:
            U = u[idx]
            w0, w1 = wb[:, 0], wb[:, 1:]
            if inverse:
                w1 = -w1
            dot = np.sum(w1 * U[:, 1:], axis=1)
            o0 = w0 * U[:, 0] + dot
            o1 = U[:, 1:] + w1 * (U[:, :1] + (dot / (1.0 + w0))[:, None])
            scale = 1.0 / beta if inverse else beta
            out[idx[:, 0]] = scale * o0
            out[idx[:, 1:]] = scale[:, None] * o1
        return out

    def winv_matrix(self, sc):
        """Sparse ``W^{-1}`` (block diagonal, symmetric)."""
        rows = [np.arange(self.l)]
        cols = [np.arange(self.l)]
        vals = [1.0 / sc["diag"]]
        for d, idx, wb, beta in sc["soc"]:
            cnt = idx.shape[0]
            w0, w1 = wb[:, 0], -wb[:, 1:]
            Wi = np.empty((cnt, d, d))
            Wi[:, 0, 0] = w0
            Wi[:, 0, 1:] = w1
            Wi[:, 1:, 0] = w1
            Wi[:, 1:, 1:] = np.eye(d - 1)[None] + w1[:, :, None] * w1[:, None, :] / (1.0 + w0)[:, None, None]
            Wi /= beta[:, None, None]
            rows.append(np.repeat(idx, d, axis=1).ravel())
            cols.append(np.tile(idx, (1, d)).ravel())
            vals.append(Wi.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.n))


class _KKT:
    """Factorisation of the scaled system ``[[0, A^T, Gs^T], [A, 0, 0], [Gs, 0, -I]]``.

    ``Gs = W^{-1} G``; the unknowns are ``(dx, dy, W dz)``.  Solving this
    augmented form avoids squaring the scaling, which keeps the steps
    accurate when the iterates approach the cone boundary.
    """

    def __init__(self, A, G, cones, sc, reg=STATIC_REG):
        n, p, q = G.shape[1], A.shape[0], G.shape[0]
        self.A, self.G, self.cones, self.sc = A, G, cones, sc
        self.n, self.p, self.q = n, p, q
        Winv = cones.winv_matrix(sc)
        Gs = (Winv @ G).tocsc()
        M = sp.bmat([[reg * sp.eye(n), A.T, Gs.T],
                     [A, -reg * sp.eye(p), None],
                     [Gs, None, -sp.eye(q)]], format="csc")
        # the regularised matrix is quasi-definite, so a symmetric ordering
        # with diagonal pivots exists; it is much sparser than partial
        # pivoting but can lose accuracy, in which case solve() switches
        self.M = M
        self.pivoting = False
        try:
            self.lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError:
            self._use_pivoting()

    def _use_pivoting(self):
        self.lu = spla.splu(self.M, permc_spec="COLAMD")
        self.pivoting = True

    def _raw(self, r1, r2, r3):
        rhs = np.concatenate([r1, r2, self.cones.apply_w(self.sc, r3, inverse=True)])
        sol = self.lu.solve(rhs)
        n, p = self.n, self.p
        dz = self.cones.apply_w(self.sc, sol[n + p:], inverse=True)
        return sol[:n], sol[n:n + p], dz

    def solve(self, r1, r2, r3):
        """Solve ``A^T dy + G^T dz = r1, A dx = r2, G dx - W^T W dz = r3``."""
        W = lambda v: self.cones.apply_w(self.sc, v)
        scale = 1.0 + max(np.max(np.abs(r1), initial=0), np.max(np.abs(r2), initial=0),
                          np.max(np.abs(r3), initial=0))

        def residual(dx, dy, dz):
            e1 = r1 - (self.A.T @ dy + self.G.T @ dz)
            e2 = r2 - self.A @ dx
            e3 = r3 - (self.G @ dx - W(W(dz)))
            err = max(np.max(np.abs(e1), initial=0), np.max(np.abs(e2), initial=0),
                      np.max(np.abs(e3), initial=0))
            return e1, e2, e3, err

        while True:
            dx, dy, dz = self._raw(r1, r2, r3)
            err = np.inf
            for _ in range(REFINE_STEPS):
                e1, e2, e3, err = residual(dx, dy, dz)
                if not np.isfinite(err) or err <= 1e-14 * scale:
                    break
                cx, cy, cz = self._raw(e1, e2, e3)
                dx, dy, dz = dx + cx, dy + cy, dz + cz
            else:
                err = residual(dx, dy, dz)[3]
            if self.pivoting or (np.isfinite(err) and err <= REFINE_ACCEPT * scale):
                return dx, dy, dz
            self._use_pivoting()
        return dx, dy, dz


def solve_standard(c, A, b, G, h, dims, cfg=None):
    """Solve the standard-form pair described in the module docstring."""
    cfg = cfg or SolverConfig()
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    h = np.asarray(h, dtype=float)
    A = sp.csr_matrix(A)
    G = sp.csr_matrix(G)
    n, p = c.shape[0], b.shape[0]
    K = _Cones(dims)
    if G.shape != (K.n, n) or A.shape != (p, n) or h.shape[0] != K.n:
        raise ValueError("inconsistent problem dimensions")

    resx0 = max(1.0, np.linalg.norm(c))
    resy0 = max(1.0, np.linalg.norm(b))
    resz0 = max(1.0, np.linalg.norm(h))

    x, y = np.zeros(n), np.zeros(p)
    s, z = K.unit(), K.unit()
    tau, kappa = 1.0, 1.0
    e = K.unit()
    trace = []

    best = None  # (merit, iteration, x, y, z, s, tau, pres, dres, gap)

    def finish(status, it, pres=np.nan, dres=np.nan, gap=np.nan):
        nonlocal x, y, z, s, tau
        if status in (Status.ITER_LIMIT, Status.NUMERICAL_FAILURE) and best is not None \
                and best[0] <= INACCURATE_FACTOR:
            _, it, x, y, z, s, tau, pres, dres, gap = best
            status = Status.OPTIMAL_INACCURATE
        if status in (Status.OPTIMAL, Status.OPTIMAL_INACCURATE, Status.ITER_LIMIT, Status.NUMERICAL_FAILURE):
            xs, ys, zs, ss = x / tau, y / tau, z / tau, s / tau
        else:
            xs, ys, zs, ss = x, y, z, s
        return ConicSolution(status, xs, ys, zs, ss, float(-c @ xs), float(b @ ys + h @ zs),
                             it, pres, dres, gap, trace)

    pres = dres = gap = np.nan
    for it in range(cfg.max_iters + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = b * tau - A @ x
        rz = s + G @ x - h * tau
        rt = kappa + c @ x + b @ y + h @ z
        sz = s @ z
        mu = (sz + tau * kappa) / (K.degree + 1)

        pcost = c @ x / tau
        dcost = -(b @ y + h @ z) / tau
        pres = max(np.linalg.norm(ry) / resy0, np.linalg.norm(rz) / resz0) / tau
        dres = np.linalg.norm(rx) / resx0 / tau
        gap = sz / tau ** 2
        trace.append((it, -pcost, -dcost, gap, pres, dres))
        if cfg.verbose:
            logger.info("it %3d  pobj % .8e  dobj % .8e  gap %.2e  pres %.2e  dres %.2e",
                        it, -pcost, -dcost, gap, pres, dres)

        if not np.all(np.isfinite([pres, dres, gap, tau, kappa])):
            return finish(Status.NUMERICAL_FAILURE, it, pres, dres, gap)

        gap_ok = gap <= cfg.rel_gap_tol * (1.0 + abs(pcost)) and \
            abs(pcost - dcost) <= cfg.rel_gap_tol * (1.0 + abs(pcost))
        if pres <= cfg.feas_tol and dres <= cfg.feas_tol and gap_ok:
            return finish(Status.OPTIMAL, it, pres, dres, gap)
        scale = 1.0 + abs(pcost)
        merit = max(pres / cfg.feas_tol, dres / cfg.feas_tol,
                    max(gap, abs(pcost - dcost)) / scale / cfg.rel_gap_tol)
        if best is None or merit < best[0]:
            best = (merit, it, x.copy(), y.copy(), z.copy(), s.copy(), tau, pres, dres, gap)

        hz_by = h @ z + b @ y
        if hz_by < 0:
            pinf = np.linalg.norm(A.T @ y + G.T @ z) / resx0 / (-hz_by)
            if pinf <= cfg.feas_tol:
                scale = -hz_by
                x, y, z, s = x, y / scale, z / scale, s
                return finish(Status.PRIMAL_INFEASIBLE, it, pres, dres, gap)
        cx = c @ x
        if cx < 0:
            dinf = max(np.linalg.norm(A @ x) / resy0, np.linalg.norm(G @ x + s) / resz0) / (-cx)
            if dinf <= cfg.feas_tol:
                x = x / (-cx)
                return finish(Status.DUAL_INFEASIBLE, it, pres, dres, gap)
        if it == cfg.max_iters:
            break

        try:
            sc = K.scaling(s, z)
            lam = sc["lam"]
            kkt = _KKT(A, G, K, sc)
        except (RuntimeError, FloatingPointError, ValueError) as exc:
            logger.debug("factorisation failed at iteration %d: %s", it, exc)
            return finish(Status.NUMERICAL_FAILURE, it, pres, dres, gap)
        u1 = kkt.solve(-c, b, h)
        cbh_u1 = c @ u1[0] + b @ u1[1] + h @ u1[2]

        def direction(sigma, corr_s, corr_k):
            eta = 1.0 - sigma
            ds = -K.jprod(lam, lam) + sigma * mu * e - corr_s
            dk = -tau * kappa + sigma * mu - corr_k
            lds = K.jdiv(lam, ds)
            r3 = -eta * rz - K.apply_w(sc, lds)
            u0 = kkt.solve(-eta * rx, eta * ry, r3)
            cbh_u0 = c @ u0[0] + b @ u0[1] + h @ u0[2]
            dtau = (-eta * rt - dk / tau - cbh_u0) / (-kappa / tau + cbh_u1)
            dx = u0[0] + dtau * u1[0]
            dy = u0[1] + dtau * u1[1]
            dz = u0[2] + dtau * u1[2]
            ds_ = K.apply_w(sc, lds - K.apply_w(sc, dz))
            dkappa = (dk - kappa * dtau) / tau
            return dx, dy, dz, ds_, dtau, dkappa

        def steplen(dz, ds_, dtau, dkappa):
            a = min(K.max_step(s, ds_), K.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # a degenerate scaling point yields 0/0 in the cone division; the
        # resulting non-finite direction is reported as a numerical failure
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            aff = direction(0.0, 0.0, 0.0)
            a_aff = min(1.0, steplen(aff[2], aff[3], aff[4], aff[5]))
            sigma = (1.0 - a_aff) ** 3
            dsa = K.apply_w(sc, aff[3], inverse=True)
            dza = K.apply_w(sc, aff[2])
            corr_s = K.jprod(dsa, dza)
            corr_k = aff[4] * aff[5]
            dx, dy, dz, ds_, dtau, dkappa = direction(sigma, corr_s, corr_k)
            alpha = min(1.0, STEP_FRACTION * steplen(dz, ds_, dtau, dkappa))
        finite = all(np.all(np.isfinite(d)) for d in (dx, dy, dz, ds_, dtau, dkappa))
        if not finite or not np.isfinite(alpha) or alpha < 1e-12:
            return finish(Status.NUMERICAL_FAILURE, it, pres, dres, gap)

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds_
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if K.interior_margin(s) <= 0 or K.interior_margin(z) <= 0 or tau <= 0 or kappa <= 0:
            return finish(Status.NUMERICAL_FAILURE, it + 1, pres, dres, gap)

    return finish(Status.ITER_LIMIT, cfg.max_iters, pres, dres, gap)


def solve(program, cfg=None):
    """Solve a :class:`~optdesign.conic.model.ConicProgram` (maximisation)."""
    data = program.compile()
    return solve_standard(data["c"], data["A"], data["b"], data["G"], data["h"], data["dims"], cfg)
