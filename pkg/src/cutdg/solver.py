"""Linear solves and extreme singular value estimates for sparse systems."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_ORACLE_LIMIT = 2000


@dataclass
class SolveReport:
    solution: np.ndarray
    method: str
    iterations: int
    residual: float
    converged: bool
    tol: float
    message: str = ""


@dataclass
class SpectrumReport:
    sigma_max: float
    sigma_min: float | None
    iterations_max: int = 0
    iterations_min: int = 0
    converged_max: bool = True
    converged_min: bool = True
    method: str = ""
    message: str = ""

    @property
    def cond(self) -> float | None:
        if self.sigma_min is None or not self.converged_min or self.sigma_min <= 0:
            return None
        return self.sigma_max / self.sigma_min


def _matrix(system):
    return system.A if hasattr(system, "A") else system


def _relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def solve_direct(system, rhs=None, tol: float = 1e-10) -> SolveReport:
    """Sparse LU with partial pivoting; singular systems are reported, not raised."""
    A = sp.csc_matrix(_matrix(system))
    b = system.rhs if rhs is None else rhs
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
    except RuntimeError as err:
        return SolveReport(np.full(A.shape[0], np.nan), "direct", 0, np.inf, False, tol, str(err))
    if not np.all(np.isfinite(x)):
        return SolveReport(x, "direct", 0, np.inf, False, tol, "non-finite solution")
    res = _relative_residual(A, x, b)
    return SolveReport(x, "direct", 1, res, res <= tol, tol)


def solve_bicgstab(system, rhs=None, tol: float = 1e-10, maxit: int = 10_000) -> SolveReport:
    """Jacobi-preconditioned BiCGStab; returns the best iterate seen."""
    if maxit < 1:
        raise ValueError("maxit must be >= 1")
    A = sp.csr_matrix(_matrix(system))
    b = system.rhs if rhs is None else rhs
    d = A.diagonal()
    d = np.where(np.abs(d) > 1e-300, d, 1.0)
    M = spla.LinearOperator(A.shape, matvec=lambda v: v / d, dtype=float)
    nb = np.linalg.norm(b) or 1.0
    state = {"it": 0, "best": np.zeros_like(b), "best_res": 1.0}

    def track(xk):
        state["it"] += 1
        res = np.linalg.norm(A @ xk - b) / nb
        if res < state["best_res"]:
            state["best"], state["best_res"] = xk.copy(), res

    with np.errstate(all="ignore"):
        x, info = spla.bicgstab(A, b, rtol=tol, atol=0.0, maxiter=maxit, M=M, callback=track)
    res = _relative_residual(A, x, b) if np.all(np.isfinite(x)) else np.inf
    if res > state["best_res"]:
        x, res = state["best"], state["best_res"]
    msg = {0: ""}.get(info, "breakdown" if info < 0 else "maximum iterations reached")
    return SolveReport(x, "bicgstab", state["it"], float(res), info == 0 and res <= tol, tol, msg)


def solve(system, method: str = "direct", **kwargs) -> SolveReport:
    if method == "direct":
        return solve_direct(system, **kwargs)
    if method == "bicgstab":
        return solve_bicgstab(system, **kwargs)
    raise ValueError(f"unknown solver {method!r}")


def dense_singular_values(matrix) -> tuple[float, float]:
    A = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    s = scipy.linalg.svdvals(A)
    return float(s[0]), float(s[-1])


def _power(apply, n, rng, tol, maxit):
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, maxit + 1):
        w = apply(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0 or not np.isfinite(nw):
            return lam_new, it, False
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new, it, True
        lam = lam_new
    return lam, maxit, False


def estimate_condition(system, method: str = "lanczos", tol: float = 1e-8,
                       maxit: int = 100_000, seed: int = 0) -> SpectrumReport:
    """Largest and smallest singular values of a square sparse matrix.

    ``sigma_max`` from the top eigenvalue of ``A^T A``; ``sigma_min`` from the
    top eigenvalue of ``(A^T A)^{-1}`` applied through one LU factorisation of
    ``A``.  ``method='power'`` runs plain (inverse) power iteration,
    ``'lanczos'`` hands the same operators to ARPACK, ``'dense'`` computes a
    full SVD (n <= DENSE_ORACLE_LIMIT).
    """
    A = sp.csc_matrix(_matrix(system)).astype(float)
    n, m = A.shape
    if n != m:
        raise ValueError("matrix must be square")
    if method == "dense":
        if n > DENSE_ORACLE_LIMIT:
            raise ValueError("dense oracle limited to n <= %d" % DENSE_ORACLE_LIMIT)
        smax, smin = dense_singular_values(A)
        return SpectrumReport(smax, smin, method="dense")
    rng = np.random.default_rng(seed)
    At = A.T.tocsc()

    def normal_op(v):
        return At @ (A @ v)

    try:
        lu = spla.splu(A)
    except RuntimeError as err:
        lu, lu_error = None, str(err)
    else:
        lu_error = ""

    def inverse_op(v):
        return lu.solve(lu.solve(v, trans="T"))

    if method == "power":
        lmax, it_max, ok_max = _power(normal_op, n, rng, tol, maxit)
        if lu is None:
            return SpectrumReport(np.sqrt(lmax), None, it_max, 0, ok_max, False, "power", lu_error)
        with np.errstate(all="ignore"):
            lmin_inv, it_min, ok_min = _power(inverse_op, n, rng, tol, maxit)
        ok_min = ok_min and np.isfinite(lmin_inv) and lmin_inv > 0
        smin = 1.0 / np.sqrt(lmin_inv) if ok_min else None
        return SpectrumReport(float(np.sqrt(lmax)), smin, it_max, it_min, ok_max, ok_min, "power")
    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")

    counter = {"max": 0, "min": 0}

    def counted(op, key):
        def apply(v):
            counter[key] += 1
            return op(v)
        return spla.LinearOperator((n, n), matvec=apply, dtype=float)

    def top_eig(op, key):
        v0 = rng.standard_normal(n)
        if n <= 2:
            dense = np.column_stack([op(e) for e in np.eye(n)])
            return float(np.linalg.eigvalsh(0.5 * (dense + dense.T))[-1]), True
        try:
            val = spla.eigsh(counted(op, key), k=1, which="LA", v0=v0, tol=tol * 1e-2,
                             maxiter=maxit, return_eigenvectors=False)
            return float(val[0]), True
        except spla.ArpackNoConvergence as err:
            vals = err.eigenvalues
            return (float(vals[0]) if len(vals) else np.nan), False

    lmax, ok_max = top_eig(normal_op, "max")
    if lu is None:
        return SpectrumReport(float(np.sqrt(lmax)), None, counter["max"], 0, ok_max, False,
                              "lanczos", lu_error)
    with np.errstate(all="ignore"):
        lmin_inv, ok_min = top_eig(inverse_op, "min")
    ok_min = ok_min and np.isfinite(lmin_inv) and lmin_inv > 0
    smin = float(1.0 / np.sqrt(lmin_inv)) if ok_min else None
    return SpectrumReport(float(np.sqrt(lmax)), smin, counter["max"], counter["min"], ok_max,
                          ok_min, "lanczos")
