"""Dense linear algebra used across the package.

Everything here works on small dense numpy arrays (dimensions up to a few
hundred).  The one non-standard routine is :func:`cholesky_information`,
which obtains a Cholesky factor of the information matrix ``C_K(H H^T)``
for a parameter subsystem from a QR factorization with a zero-row
normalisation.
"""

import numpy as np

ZERO_ROW_TOL = 1e-12


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def information_matrix(model, w):
    """Return ``sum_i w_i A_i A_i^T`` for an observation model.

    ``model`` is anything exposing ``matrices`` (a list of m x l_i arrays)
    and ``m``; the result is symmetrised explicitly.
    """
    w = np.asarray(w, dtype=float).ravel()
    mats = model.matrices
    if w.shape[0] != len(mats):
        raise ValueError(f"weight vector has length {w.shape[0]}, model has {len(mats)} points")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    M = np.zeros((model.m, model.m))
    for wi, A in zip(w, mats):
        if wi != 0.0:
            M += wi * (A @ A.T)
    return 0.5 * (M + M.T)


def rank_tolerance(eigvals, dim):
    top = float(np.max(np.abs(eigvals))) if len(eigvals) else 0.0
    return dim * np.finfo(float).eps * top


def pseudo_inverse(M):
    """Moore-Penrose inverse of a symmetric PSD matrix via eigh."""
    M = _as_matrix(M, "M")
    M = 0.5 * (M + M.T)
    lam, V = np.linalg.eigh(M)
    tol = rank_tolerance(lam, M.shape[0])
    inv = np.zeros_like(lam)
    keep = lam > tol
    inv[keep] = 1.0 / lam[keep]
    return (V * inv) @ V.T


def psd_rank(M):
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))
    return int(np.sum(lam > rank_tolerance(lam, M.shape[0])))


def range_contains(M, K, tol=1e-8):
    """True iff every column of ``K`` lies in range(M), up to ``tol`` relative."""
    M = _as_matrix(M, "M")
    K = _as_matrix(K, "K")
    if K.shape[0] != M.shape[0]:
        raise ValueError(f"K has {K.shape[0]} rows, M is {M.shape[0]}x{M.shape[1]}")
    nk = np.linalg.norm(K)
    if nk == 0.0:
        return True
    resid = K - M @ (pseudo_inverse(M) @ K)
    return bool(np.linalg.norm(resid) <= tol * nk)


def givens(a, b):
    """Return (c, s, r) with [[c, s], [-s, c]] @ [a, b] = [r, 0] and r >= 0."""
    r = np.hypot(a, b)
    if r == 0.0:
        return 1.0, 0.0, 0.0
    return a / r, b / r, r


def qr_zero_row(X):
    """QR factorization of an n x m matrix (m <= n) with the zero-row property.

    Returns ``Q`` (n x m, orthonormal columns) and ``R`` (m x m, upper
    triangular) with ``Q @ R == X``, ``R[i, i] >= 0``, and every row ``i``
    with ``R[i, i] == 0`` identically zero.  A row whose diagonal vanishes is
    swept downwards by Givens rotations, each one annihilating the next
    entry of that row against the diagonal of a lower row; the ordering of
    unknowns stays fixed, so no column permutation is needed.
    """
    X = _as_matrix(X, "X")
    n, m = X.shape
    if m > n:
        raise ValueError("qr_zero_row expects at least as many rows as columns")
    Q, R = np.linalg.qr(X, mode="reduced")
    sgn = np.where(np.diag(R) < 0, -1.0, 1.0)
    R = sgn[:, None] * R
    Q = Q * sgn[None, :]
    scale = max(1.0, float(np.max(np.abs(R))) if R.size else 1.0)
    tol = ZERO_ROW_TOL * scale

    for i in range(m):
        if R[i, i] > tol:
            continue
        R[i, i] = 0.0
        # move the remainder of row i into lower rows
        for j in range(i + 1, m):
            if abs(R[i, j]) <= tol:
                R[i, j] = 0.0
                continue
            # rotate rows (j, i) so that entry (i, j) vanishes; row j keeps
            # zeros left of column j because both rows do
            c, s, r = givens(R[j, j], R[i, j])
            rj, ri = R[j, j:].copy(), R[i, j:].copy()
            R[j, j:] = c * rj + s * ri
            R[i, j:] = -s * rj + c * ri
            R[i, j] = 0.0
            R[j, j] = r
            qj, qi = Q[:, j].copy(), Q[:, i].copy()
            Q[:, j] = c * qj + s * qi
            Q[:, i] = -s * qj + c * qi
        R[i, np.abs(R[i]) <= tol] = 0.0
    # diagonal zero test once more after the sweeps
    for i in range(m):
        if abs(R[i, i]) <= tol:
            R[i, i] = 0.0
            R[i, :] = 0.0
    return Q, R


def orthogonal_completion(K):
    """Orthonormal basis (m x (m-k)) of the orthogonal complement of range(K)."""
    K = _as_matrix(K, "K")
    m, k = K.shape
    if k == m:
        return np.zeros((m, 0))
    Qfull, _ = np.linalg.qr(K, mode="complete")
    return Qfull[:, k:]


def cholesky_information(H, K, V=None):
    """Lower-triangular ``L`` with ``L @ L.T == C_K(H @ H.T)``.

    ``H`` is m x n and ``K`` m x k with full column rank.  ``V`` optionally
    supplies the completion making ``U = [V, K]`` nonsingular; by default an
    orthonormal basis of range(K)'s complement is used.  The factor is read
    off the trailing k x k block of the zero-row QR factor of ``H^T U^{-T}``.
    """
    H = _as_matrix(H, "H")
    K = _as_matrix(K, "K")
    m, k = K.shape
    if H.shape[0] != m:
        raise ValueError(f"H has {H.shape[0]} rows but K has {m}")
    if k > m:
        raise ValueError("K must have at most as many columns as rows")
    if np.linalg.matrix_rank(K) < k:
        raise ValueError("K must have full column rank")
    if V is None:
        V = orthogonal_completion(K)
    U = np.hstack([np.asarray(V, dtype=float).reshape(m, m - k), K])
    if np.linalg.matrix_rank(U) < m:
        raise ValueError("completion V does not make [V, K] nonsingular")
    X = np.linalg.solve(U, H).T  # H^T U^{-T}
    n = X.shape[0]
    if n < m:
        X = np.vstack([X, np.zeros((m - n, m))])
    _, R = qr_zero_row(X)
    return R[m - k:, m - k:].T.copy()


def integer_determinant(M):
    """Exact determinant of an integer matrix (Bareiss elimination).

    Python integers are unbounded, so no overflow can occur; non-integer
    input raises ``ValueError``.
    """
    rows = [list(r) for r in np.asarray(M, dtype=object)]
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise ValueError("integer_determinant needs a square matrix")
    a = []
    for r in rows:
        out = []
        for v in r:
            iv = int(v)
            if iv != v:
                raise ValueError(f"non-integer entry {v!r}")
            out.append(iv)
        a.append(out)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        akk = a[k][k]
        for i in range(k + 1, n):
            aik = a[i][k]
            row_i, row_k = a[i], a[k]
            for j in range(k + 1, n):
                row_i[j] = (row_i[j] * akk - aik * row_k[j]) // prev
            row_i[k] = 0
        prev = akk
    return sign * a[n - 1][n - 1]
