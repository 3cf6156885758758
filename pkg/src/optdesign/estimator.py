"""Estimator-style front end: fit a design to a set of candidate points.

``fit`` takes the candidate observation matrices (one regression vector
per row for single-response models) and computes the optimal weights;
``predict`` returns the variance function of the fitted design at new
points, which is what the equivalence theorem and G-optimality look at.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_domain, check_K, check_observations
from .bnb import BnBConfig, solve_misocp
from .conic import SolverConfig
from .criteria import APPROX_TOL, Criterion, solve_criterion
from .heuristics import ExchangeConfig, kl_exchange
from .linalg import information_matrix, pseudo_inverse


class _DesignBase(BaseEstimator):
    def _model(self, X):
        model = check_observations(X)
        self.n_points_ = model.s
        self.n_features_in_ = model.m
        return model

    def information_matrix(self):
        check_is_fitted(self, "weights_")
        return information_matrix(self.model_, self.weights_)

    def predict(self, X):
        """Variance ``trace(A^T M^+ A)`` of each candidate in X under the fitted design."""
        check_is_fitted(self, "weights_")
        model = check_observations(X)
        if model.m != self.n_features_in_:
            raise ValueError(f"X has {model.m} parameters, design was fitted with {self.n_features_in_}")
        Mp = pseudo_inverse(self.information_matrix())
        return np.array([float(np.trace(A.T @ Mp @ A)) for A in model.matrices])

    def score(self, X=None, y=None):
        """Criterion value of the fitted design."""
        check_is_fitted(self, "weights_")
        return self.criterion_value_


class OptimalDesign(_DesignBase):
    """Optimal approximate or exact design by cone programming.

    Parameters
    ----------
    criterion : one of "D", "A", "G", "I", "c", "DK", "AK"
    K : coefficient matrix for the c, DK and AK criteria
    exact : if True, solve the integer problem by branch-and-bound
    N : number of trials for exact designs without an explicit domain
    epsilon : relative gap for branch-and-bound
    time_limit, node_limit : branch-and-bound budgets
    tol : relative gap tolerance of the cone solver (None: 1e-9 approximate, 1e-8 exact)
    heuristic_runs : exchange runs used to seed the incumbent (0 disables)
    random_state : seed for the exchange heuristic
    """

    def __init__(self, criterion="D", K=None, exact=False, N=None, epsilon=1e-4, time_limit=None,
                 node_limit=None, tol=None, heuristic_runs=0, random_state=0):
        self.criterion = criterion
        self.K = K
        self.exact = exact
        self.N = N
        self.epsilon = epsilon
        self.time_limit = time_limit
        self.node_limit = node_limit
        self.tol = tol
        self.heuristic_runs = heuristic_runs
        self.random_state = random_state

    def fit(self, X, y=None, domain=None, symmetry=None):
        model = self._model(X)
        crit = Criterion(self.criterion, check_K(self.K, model.m))
        domain = check_domain(domain, model.s, self.exact, self.N)
        tol = self.tol if self.tol is not None else (1e-8 if self.exact else APPROX_TOL)
        solver = SolverConfig(rel_gap_tol=tol, feas_tol=tol)
        self.model_ = model
        if not self.exact:
            res = solve_criterion(crit, model, domain, solver)
            self.weights_ = res.weights
            self.criterion_value_ = res.phi_direct
            self.bound_ = res.bound
            self.status_ = res.status
            self.result_ = res
            return self
        initial = None
        if self.heuristic_runs:
            ex = kl_exchange(crit, model, domain, ExchangeConfig(runs=self.heuristic_runs, seed=self.random_state))
            initial = ex.design
        cfg = BnBConfig(epsilon=self.epsilon, time_limit=self.time_limit, node_limit=self.node_limit,
                        solver=solver)
        res = solve_misocp(crit, model, domain, cfg, initial=initial, symmetry=symmetry)
        self.weights_ = None if res.incumbent is None else res.incumbent.astype(float)
        self.criterion_value_ = res.incumbent_value
        self.bound_ = res.best_bound
        self.status_ = res.status
        self.result_ = res
        if self.weights_ is None:
            raise ValueError(f"no feasible exact design ({res.status})")
        return self


class ExchangeDesign(_DesignBase):
    """Exact design from repeated runs of the pairwise exchange heuristic."""

    def __init__(self, criterion="D", K=None, N=None, runs=20, pool_add=None, pool_delete=None, random_state=0):
        self.criterion = criterion
        self.K = K
        self.N = N
        self.runs = runs
        self.pool_add = pool_add
        self.pool_delete = pool_delete
        self.random_state = random_state

    def fit(self, X, y=None, domain=None):
        model = self._model(X)
        crit = Criterion(self.criterion, check_K(self.K, model.m))
        domain = check_domain(domain, model.s, True, self.N)
        cfg = ExchangeConfig(runs=self.runs, seed=self.random_state, K=self.pool_add, L=self.pool_delete)
        res = kl_exchange(crit, model, domain, cfg)
        if res.design is None:
            raise ValueError("the exchange heuristic found no feasible design")
        self.model_ = model
        self.weights_ = res.design.astype(float)
        self.criterion_value_ = res.value
        self.run_values_ = np.array(res.run_values)
        self.status_ = "Heuristic"
        self.bound_ = math.nan
        return self
