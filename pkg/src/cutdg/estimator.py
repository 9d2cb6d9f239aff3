"""Estimator-style wrapper: ``fit`` discretises and solves, ``predict`` evaluates u_h."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .harness import ExperimentConfig, discretize
from .space import InactiveCellError
from .solver import solve


class CutDGSolver(BaseEstimator):
    """Stabilised cut DG solve of the manufactured advection-reaction problem.

    ``fit`` ignores its arguments beyond the usual signature; all inputs come
    from the hyperparameters. ``predict`` takes points of shape (n, 3) that
    lie in active cells and returns the discrete solution there.
    """

    def __init__(self, geometry="sphere", degree=1, level=0, epsilon=1.0, gamma0=None,
                 gamma1=0.5, gamman=1.0, delta=0.0, solver="direct", tol=1e-10, maxit=10_000):
        self.geometry = geometry
        self.degree = degree
        self.level = level
        self.epsilon = epsilon
        self.gamma0 = gamma0
        self.gamma1 = gamma1
        self.gamman = gamman
        self.delta = delta
        self.solver = solver
        self.tol = tol
        self.maxit = maxit

    def _config(self) -> ExperimentConfig:
        return ExperimentConfig(geometry=self.geometry, degree=self.degree, epsilon=self.epsilon,
                                levels=[self.level], gamma0=self.gamma0, gamma1=self.gamma1,
                                gamman=self.gamman, solver=self.solver, tol=self.tol,
                                maxit=self.maxit).validate()

    def fit(self, X=None, y=None):
        config = self._config()
        d = discretize(config, self.level, self.delta)
        kwargs = {"tol": self.tol}
        if self.solver == "bicgstab":
            kwargs["maxit"] = self.maxit
        report = solve(d.system, self.solver, **kwargs)
        self.discretization_ = d
        self.coef_ = report.solution
        self.solve_report_ = report
        self.n_dofs_ = d.space.n_dofs
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 3:
            raise ValueError(f"expected points of shape (n, 3), got {X.shape}")
        d = self.discretization_
        cells = d.mesh.locate(X)
        pos = d.space.active.position(cells)
        if np.any(pos < 0):
            raise InactiveCellError("some points lie outside the active mesh")
        phi = d.space.basis_values(pos, X)
        return np.einsum("qi,qi->q", phi, self.coef_[d.space.local_dofs(pos)])

    def score(self, X=None, y=None):
        """Negative L2 error on the discrete surface."""
        from .analysis import error_norms

        check_is_fitted(self, "coef_")
        d = self.discretization_
        return -error_norms(d.system, self.coef_, d.problem, d.geometry).l2_error
