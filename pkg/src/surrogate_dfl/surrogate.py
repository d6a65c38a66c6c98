"""Learnable linear reparameterization x = P y of the decision space.

P is materialized from unconstrained raw parameters through a mode-specific
map (identity, softplus, or per-column softmax), so the training loop can run
plain gradient steps on P_raw while P keeps the structure each domain needs:
nonnegativity for diminishing-returns objectives, stochastic columns for
simplex feasible sets.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadDimensions, DimensionMismatch, EmptyFeasibleSet, Infeasible
from .numerics import as_matrix, as_vector, matrix_to_csv
from .optlayer import QuadraticProgram, find_feasible_point

MODES = ("free", "nonneg", "column-simplex")


@dataclass
class BaseProblem:
    """x-space constraints: Aeq x = beq plus inequality rows G x <= h."""

    n: int
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None

    def __post_init__(self):
        if self.Aeq is None:
            self.Aeq = np.zeros((0, self.n))
            self.beq = np.zeros(0)
        else:
            self.Aeq = as_matrix(self.Aeq)
            self.beq = as_vector(self.beq)
        if self.G is None:
            self.G = np.zeros((0, self.n))
            self.h = np.zeros(0)
        else:
            self.G = as_matrix(self.G)
            self.h = as_vector(self.h)

    def violation(self, x) -> float:
        """Worst constraint violation of a candidate x (0 when feasible)."""
        v = 0.0
        if self.Aeq.shape[0]:
            v = max(v, float(np.max(np.abs(self.Aeq @ x - self.beq))))
        if self.G.shape[0]:
            v = max(v, float(np.max(self.G @ x - self.h, initial=0.0)))
        return v


def simplex_base(n: int, total: float = 1.0) -> BaseProblem:
    """sum(x) = total, x >= 0."""
    return BaseProblem(
        n=n,
        Aeq=np.ones((1, n)),
        beq=np.array([total]),
        G=-np.eye(n),
        h=np.zeros(n),
    )


def box_budget_base(n: int, k: float, upper: float = 1.0) -> BaseProblem:
    """0 <= x <= upper, sum(x) <= k."""
    return BaseProblem(
        n=n,
        G=np.vstack([-np.eye(n), np.eye(n), np.ones((1, n))]),
        h=np.concatenate([np.zeros(n), np.full(n, upper), [float(k)]]),
    )


@dataclass
class Reparameterization:
    """Raw trainable matrix plus the mode that materializes P from it."""

    P_raw: np.ndarray
    mode: str
    n: int
    m: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.P_raw.shape != (self.n, self.m):
            raise BadDimensions("P_raw shape does not match (n, m)")


def default_m(n: int) -> int:
    """Surrogate dimension rule: 10% of the problem size, rounded up."""
    return max(1, math.ceil(0.1 * n))


def init_reparam(n: int, m: int = None, mode: str = "free", seed: int = 0) -> Reparameterization:
    if m is None:
        m = default_m(n)
    if not (1 <= m <= n):
        raise BadDimensions(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    return Reparameterization(
        P_raw=rng.uniform(-0.5, 0.5, size=(n, m)), mode=mode, n=n, m=m
    )


def identity_reparam(n: int) -> Reparameterization:
    return Reparameterization(P_raw=np.eye(n), mode="free", n=n, m=n)


def materialize(rep: Reparameterization) -> np.ndarray:
    """P from P_raw: identity for free, softplus for nonneg, column softmax
    for column-simplex (strictly positive entries, unit column sums)."""
    if rep.mode == "free":
        return rep.P_raw.copy()
    if rep.mode == "nonneg":
        return np.logaddexp(0.0, rep.P_raw)
    z = rep.P_raw - rep.P_raw.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def materialize_grad(rep: Reparameterization, dL_dP) -> np.ndarray:
    """Chain a gradient w.r.t. P back through the materialization to P_raw."""
    g = np.asarray(dL_dP, dtype=float)
    if g.shape != (rep.n, rep.m):
        raise DimensionMismatch("dL_dP shape does not match reparameterization")
    if rep.mode == "free":
        return g.copy()
    if rep.mode == "nonneg":
        return g / (1.0 + np.exp(-rep.P_raw))  # softplus' = sigmoid
    P = materialize(rep)
    # per-column softmax Jacobian: diag(p) - p p^T
    return P * g - P * np.sum(P * g, axis=0, keepdims=True)


def lift(P, y) -> np.ndarray:
    """x = P y."""
    P = as_matrix(P)
    y = as_vector(y)
    if P.shape[1] != y.shape[0]:
        raise DimensionMismatch("P columns must match len(y)")
    return P @ y


@dataclass
class SurrogateProblem:
    """y-space constraint data: base constraints composed with P, plus an
    optional trailing y >= 0 block that does not depend on P."""

    base: BaseProblem
    P: np.ndarray
    Aeq_y: np.ndarray
    beq: np.ndarray
    G_y: np.ndarray
    h_y: np.ndarray
    n_extra_rows: int = 0

    @property
    def m(self):
        return self.P.shape[1]


def transform_problem(
    base: BaseProblem, P, nonneg_y: bool = False, check_feasible: bool = True
) -> SurrogateProblem:
    """Compose the base constraints with x = P y.

    Equalities become (A P) y = b; each inequality row g x <= h becomes
    (g P) y <= h, so any feasible y lifts to a feasible x.  With nonneg_y,
    explicit y >= 0 rows are appended after the transformed rows.  Raises
    EmptyFeasibleSet when the y-space phase-one solve fails.
    """
    P = as_matrix(P)
    if P.shape[0] != base.n:
        raise DimensionMismatch("P rows must match the base dimension")
    m = P.shape[1]
    Aeq_y = base.Aeq @ P
    G_y = base.G @ P
    h_y = base.h.copy()
    extra = 0
    if nonneg_y:
        G_y = np.vstack([G_y, -np.eye(m)])
        h_y = np.concatenate([h_y, np.zeros(m)])
        extra = m
    sp = SurrogateProblem(
        base=base, P=P, Aeq_y=Aeq_y, beq=base.beq.copy(), G_y=G_y, h_y=h_y,
        n_extra_rows=extra,
    )
    if check_feasible:
        try:
            find_feasible_point(sp.Aeq_y, sp.beq, sp.G_y, sp.h_y, m)
        except Infeasible as exc:
            raise EmptyFeasibleSet(f"surrogate feasible set is empty: {exc}") from exc
    return sp


@dataclass
class SurrogateQp:
    """Quadratic objective married to a transformed constraint set.

    The y-space objective is 0.5 y^T (P^T H_x P + H_extra) y + (P^T c_x)^T y;
    H_extra covers y-native terms such as the movie-broadcast regularizer and
    is independent of P, so it drops out of d/dP.
    """

    H_x: np.ndarray
    c_x: np.ndarray
    sp: SurrogateProblem
    H_extra: np.ndarray = None

    @property
    def P(self):
        return self.sp.P

    @property
    def base_Aeq(self):
        return self.sp.base.Aeq

    @property
    def base_G(self):
        return self.sp.base.G

    @property
    def n_extra_rows(self):
        return self.sp.n_extra_rows

    def qp(self) -> QuadraticProgram:
        P = self.sp.P
        H_y = P.T @ self.H_x @ P
        if self.H_extra is not None:
            H_y = H_y + self.H_extra
        H_y = 0.5 * (H_y + H_y.T)  # squash matmul round-off asymmetry
        me = self.sp.Aeq_y.shape[0]
        mi = self.sp.G_y.shape[0]
        return QuadraticProgram(
            H=H_y,
            c=P.T @ self.c_x,
            Aeq=self.sp.Aeq_y if me else None,
            beq=self.sp.beq if me else None,
            Gineq=self.sp.G_y if mi else None,
            hineq=self.sp.h_y if mi else None,
        )


def grad_wrt_P(dL_dx, y_star, dy_dP, dL_dy, rep: Reparameterization) -> np.ndarray:
    """Total derivative of the loss w.r.t. P_raw.

    Combines the explicit term from x = P y at fixed y (outer product of
    dL_dx and y*) with the implicit term dL_dy . dy*/dP, then chains through
    the materialization mode.  dy_dP columns are row-major over P entries,
    matching kkt_jacobian_P.
    """
    dL_dx = as_vector(dL_dx)
    y_star = as_vector(y_star)
    dL_dy = as_vector(dL_dy)
    n, m = rep.n, rep.m
    if dL_dx.shape[0] != n or y_star.shape[0] != m or dL_dy.shape[0] != m:
        raise DimensionMismatch("gradient pieces do not match (n, m)")
    total = np.outer(dL_dx, y_star)
    if dy_dP is not None:
        dy_dP = as_matrix(dy_dP)
        if dy_dP.shape != (m, n * m):
            raise DimensionMismatch("dy_dP must be m x (n*m)")
        total = total + (dL_dy @ dy_dP).reshape(n, m)
    return materialize_grad(rep, total)


def export_reparam_csv(rep: Reparameterization, path) -> None:
    """Materialized P as an n x m CSV, the data behind weight visualizations."""
    matrix_to_csv(materialize(rep), path)
