"""Input checks shared by the estimators and the command line."""

import numbers

import numpy as np

from .workbench import ObservationModel, WeightDomain


def check_observations(X):
    """Return an :class:`ObservationModel` from the accepted input forms.

    Accepted: an ObservationModel; a 2-d array of shape (s, m) holding one
    regression vector per row; a 3-d array of shape (s, m, l); or a list of
    m x l_i arrays.
    """
    if isinstance(X, ObservationModel):
        return X
    if isinstance(X, (list, tuple)) and X and not np.isscalar(X[0]) and np.ndim(X[0]) == 2:
        return ObservationModel([np.asarray(A, dtype=float) for A in X])
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2:
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"need at least one point and one parameter, got shape {arr.shape}")
        return ObservationModel(list(arr))
    if arr.ndim == 3:
        return ObservationModel(list(arr))
    raise ValueError(f"expected a 2-d or 3-d array of observation matrices, got shape {arr.shape}")


def check_weights(w, s, integer=False):
    w = np.asarray(w, dtype=float)
    if w.shape != (s,):
        raise ValueError(f"expected {s} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if integer and np.any(w != np.round(w)):
        raise ValueError("exact designs need integer weights")
    return w


def check_K(K, m):
    if K is None:
        return None
    K = np.asarray(K, dtype=float)
    if K.ndim == 1:
        K = K[:, None]
    if K.ndim != 2 or K.shape[0] != m:
        raise ValueError(f"K must have {m} rows, got shape {K.shape}")
    if K.shape[1] > m or np.linalg.matrix_rank(K) < K.shape[1]:
        raise ValueError("K must have full column rank")
    return K


def check_positive_int(value, name, allow_zero=False):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'nonnegative' if allow_zero else 'positive'}")
    return int(value)


def check_domain(domain, s, exact=False, N=None):
    """Domain to use for ``s`` points; defaults to the simplex or to size N."""
    if domain is None:
        if exact:
            if N is None:
                raise ValueError("exact designs need N or an integer domain")
            return WeightDomain.exact(s, check_positive_int(N, "N", allow_zero=True))
        return WeightDomain.simplex(s)
    if domain.s != s:
        raise ValueError(f"domain has {domain.s} weights but the model has {s} points")
    if exact and not domain.integer:
        raise ValueError("exact designs need an integer domain")
    return domain
