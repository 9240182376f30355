"""Sparse assembly and iterative solvers.

Storage is scipy CSR.  `assemble` turns an unordered contribution stream into
a canonical matrix: duplicate (row, col) entries are summed in value-sorted
order, so the result is bitwise independent of the stream order.  CG is
hand-rolled to expose the residual history; BiCGStab wraps scipy for the
nonsymmetric transport systems.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import bicgstab as _scipy_bicgstab

SparseMatrix = sparse.csr_matrix


class NoConvergenceError(RuntimeError):
    """Solver hit the iteration cap; carries the best iterate seen."""

    def __init__(self, message, best, report):
        super().__init__(message)
        self.best = best
        self.report = report


@dataclass
class SolverConfig:
    method: str = "cg"            # "cg" or "bicgstab"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iter: int | None = None   # default 10 * n
    preconditioner: str | None = None  # None or "jacobi"

    def __post_init__(self):
        if self.method not in ("cg", "bicgstab"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.preconditioner not in (None, "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    residual_history: list | None = None


def assemble(rows, cols, values, shape):
    """Assemble a CSR matrix from a contribution stream, summing duplicates.

    The stream is sorted by (row, col, value) before reduction, so assembly is
    deterministic and independent of the order contributions arrive in.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if not (rows.shape == cols.shape == values.shape):
        raise ValueError("rows, cols, values must have matching shapes")
    if rows.size == 0:
        return sparse.csr_matrix(shape)
    if rows.min() < 0 or rows.max() >= shape[0] or cols.min() < 0 or cols.max() >= shape[1]:
        raise IndexError("contribution index out of bounds")
    order = np.lexsort((values, cols, rows))
    r, c, v = rows[order], cols[order], values[order]
    first = np.empty(r.size, dtype=bool)
    first[0] = True
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    starts = np.flatnonzero(first)
    summed = np.add.reduceat(v, starts)
    return sparse.csr_matrix((summed, (r[starts], c[starts])), shape=shape)


def _jacobi_inverse(A):
    d = A.diagonal().copy()
    d[d == 0.0] = 1.0
    return 1.0 / d


def _cg(A, b, x0, rtol, atol, maxiter, minv):
    x = x0.copy()
    r = b - A @ x
    target = max(rtol * np.linalg.norm(b), atol)
    history = [float(np.linalg.norm(r))]
    z = r * minv if minv is not None else r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        if history[-1] <= target:
            return x, SolveReport(it - 1, history[-1], True, history)
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break  # matrix not SPD on this subspace; bail with best iterate
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = r * minv if minv is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        history.append(float(np.linalg.norm(r)))
    if history[-1] <= target:
        return x, SolveReport(len(history) - 1, history[-1], True, history)
    report = SolveReport(len(history) - 1, history[-1], False, history)
    raise NoConvergenceError(
        f"cg failed to reach {target:.3e} in {report.iterations} iterations "
        f"(residual {report.residual:.3e})", x, report)


def _bicgstab(A, b, x0, rtol, atol, maxiter, minv):
    count = [0]

    def cb(_xk):
        count[0] += 1

    M = sparse.diags(minv) if minv is not None else None
    # scipy's atol/rtol match the contract: converged when
    # ||r|| <= max(rtol * ||b||, atol).
    x, info = _scipy_bicgstab(A, b, x0=x0, rtol=rtol, atol=atol,
                              maxiter=maxiter, M=M, callback=cb)
    residual = float(np.linalg.norm(b - A @ x))
    report = SolveReport(count[0], residual, info == 0, None)
    if info != 0:
        raise NoConvergenceError(
            f"bicgstab failed after {count[0]} iterations "
            f"(residual {residual:.3e}, info={info})", x, report)
    return x, report


def solve(A, b, config=None, x0=None):
    """Solve A x = b per the solver config; returns (x, SolveReport)."""
    config = config or SolverConfig()
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match rhs length {n}")
    if n == 0:
        return np.zeros(0), SolveReport(0, 0.0, True, [0.0])
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    maxiter = config.max_iter if config.max_iter is not None else 10 * n
    minv = _jacobi_inverse(A) if config.preconditioner == "jacobi" else None
    if config.method == "cg":
        return _cg(A, b, x0, config.rel_tol, config.abs_tol, maxiter, minv)
    return _bicgstab(A, b, x0, config.rel_tol, config.abs_tol, maxiter, minv)
