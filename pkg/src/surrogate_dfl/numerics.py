"""Dense linear algebra kernel: symmetric solves, Cholesky, simplex projection.

Matrices are plain numpy float64 arrays in row-major (C) order; vectors are
1-d arrays.  Problem sizes in this package are at most a few hundred, so
everything is dense.
"""

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite, SingularMatrix

SYMMETRY_TOL = 1e-10
PIVOT_TOL = 1e-12


def as_matrix(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def as_vector(v) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector entries must be finite")
    return v


def solve_symmetric(A, B) -> np.ndarray:
    """Solve A X = B for symmetric (possibly indefinite) A.

    Uses the Bunch-Kaufman LDL^T factorization, which is valid for the
    indefinite KKT systems this package builds.  Raises SingularMatrix when a
    pivot block of D has magnitude below 1e-12.  B may be a vector or a
    matrix of stacked right-hand sides; the result has B's shape.
    """
    A = as_matrix(A)
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionMismatch("A must be square")
    if n and np.max(np.abs(A - A.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(A))):
        raise ValueError("A is not symmetric within tolerance")
    b_was_vector = np.asarray(B).ndim == 1
    B = as_vector(B)[:, None] if b_was_vector else as_matrix(B)
    if B.shape[0] != n:
        raise DimensionMismatch("B row count must match A")

    lu, d, perm = scipy.linalg.ldl(A, lower=True)
    # lu[perm] is unit lower triangular; A = lu @ d @ lu.T
    z = scipy.linalg.solve_triangular(lu[perm], B[perm], lower=True, unit_diagonal=True)
    w = _solve_block_diagonal(d, z)
    x = np.empty_like(B)
    x[perm] = scipy.linalg.solve_triangular(
        lu[perm].T, w, lower=False, unit_diagonal=True
    )

    # one step of iterative refinement to hold the residual contract
    resid = B - A @ x
    if np.max(np.abs(resid), initial=0.0) > 1e-10 * (1.0 + np.max(np.abs(B), initial=0.0)):
        z = scipy.linalg.solve_triangular(lu[perm], resid[perm], lower=True, unit_diagonal=True)
        w = _solve_block_diagonal(d, z)
        dx = np.empty_like(B)
        dx[perm] = scipy.linalg.solve_triangular(
            lu[perm].T, w, lower=False, unit_diagonal=True
        )
        x = x + dx
    return x[:, 0] if b_was_vector else x


def _solve_block_diagonal(d, z):
    """Solve D w = z where D is block diagonal with 1x1 and 2x2 blocks."""
    n = d.shape[0]
    w = np.empty_like(z)
    i = 0
    while i < n:
        if i + 1 < n and d[i, i + 1] != 0.0:
            blk = d[i : i + 2, i : i + 2]
            det = blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]
            # smaller eigenvalue magnitude of the symmetric 2x2 block
            tr = blk[0, 0] + blk[1, 1]
            disc = np.sqrt(max(tr * tr / 4.0 - det, 0.0))
            eigs = np.array([tr / 2.0 - disc, tr / 2.0 + disc])
            if np.min(np.abs(eigs)) < PIVOT_TOL:
                raise SingularMatrix("2x2 pivot block is numerically singular")
            inv = np.array([[blk[1, 1], -blk[0, 1]], [-blk[1, 0], blk[0, 0]]]) / det
            w[i : i + 2] = inv @ z[i : i + 2]
            i += 2
        else:
            if abs(d[i, i]) < PIVOT_TOL:
                raise SingularMatrix(f"pivot {i} has magnitude below {PIVOT_TOL}")
            w[i] = z[i] / d[i, i]
            i += 1
    return w


def cholesky(A) -> np.ndarray:
    """Lower-triangular L with L L^T = A for symmetric positive definite A.

    Raises NotPositiveDefinite when a diagonal pivot drops to 1e-12 or below.
    """
    A = as_matrix(A)
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionMismatch("A must be square")
    L = np.zeros_like(A)
    for j in range(n):
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= PIVOT_TOL:
            raise NotPositiveDefinite(f"diagonal pivot {j} is {pivot:.3e}")
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of v onto {w : w >= 0, sum(w) = total}.

    Sort-and-threshold rule: with u = sorted(v, descending) the threshold is
    tau = (total - cumsum(u)[rho]) / (rho + 1) at the last index rho where the
    shifted coordinate stays positive.
    """
    v = as_vector(v)
    if total <= 0:
        raise ValueError("total must be positive")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    js = np.arange(1, len(v) + 1)
    positive = u + (total - css) / js > 0
    rho = np.nonzero(positive)[0][-1]
    tau = (total - css[rho]) / (rho + 1.0)
    return np.maximum(v + tau, 0.0)


def matrix_to_csv(A, path) -> None:
    """Debug dump: one row per line, '.' decimal separator, no header."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w") as fh:
        for row in A:
            fh.write(",".join(format(x, ".12g") for x in row) + "\n")


def matrix_from_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = [
            [float(tok) for tok in line.strip().split(",")]
            for line in fh
            if line.strip()
        ]
    return np.asarray(rows, dtype=float)
