"""Constrained solvers and implicit differentiation through KKT conditions.

solve_qp is a primal active-set method: exact active sets at the optimum are
what make the downstream KKT Jacobians well defined.  Feasibility comes from
a phase-one pass that minimizes the worst constraint violation as a
regularized QP.  Jacobians of the optimizer w.r.t. problem parameters are
obtained by linearizing the KKT system with the active set frozen.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    Infeasible,
    MaxIterations,
    NumericalBreakdown,
    SingularKKT,
    SingularMatrix,
)
from .numerics import as_matrix, as_vector, solve_symmetric

STEP_TOL = 1e-11
MULT_TOL = 1e-11
FEAS_TOL = 1e-9
ACTIVE_TOL = 1e-8
STRICT_COMPLEMENTARITY_TOL = 1e-8


@dataclass
class QuadraticProgram:
    """min_y 0.5 y^T H y + c^T y  s.t.  Aeq y = beq, Gineq y <= hineq.

    H must be symmetric; Aeq/Gineq may be None when a block is absent.
    """

    H: np.ndarray
    c: np.ndarray
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    Gineq: np.ndarray = None
    hineq: np.ndarray = None

    def __post_init__(self):
        self.H = as_matrix(self.H)
        self.c = as_vector(self.c)
        n = self.c.shape[0]
        if self.H.shape != (n, n):
            raise DimensionMismatch("H must be n x n with n = len(c)")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10 * max(
            1.0, np.max(np.abs(self.H), initial=0.0)
        ):
            raise ValueError("H is not symmetric within 1e-10")
        if self.Aeq is None:
            self.Aeq = np.zeros((0, n))
            self.beq = np.zeros(0)
        else:
            self.Aeq = as_matrix(self.Aeq)
            self.beq = as_vector(self.beq)
        if self.Gineq is None:
            self.Gineq = np.zeros((0, n))
            self.hineq = np.zeros(0)
        else:
            self.Gineq = as_matrix(self.Gineq)
            self.hineq = as_vector(self.hineq)
        if self.Aeq.shape != (self.beq.shape[0], n):
            raise DimensionMismatch("equality block dimensions do not chain")
        if self.Gineq.shape != (self.hineq.shape[0], n):
            raise DimensionMismatch("inequality block dimensions do not chain")

    @property
    def n(self):
        return self.c.shape[0]


@dataclass
class PrimalDualSolution:
    """KKT-certified solution: primal y, equality duals nu, inequality duals lam."""

    y: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    active_set: np.ndarray
    kkt_residual: float


def audit_kkt(qp: QuadraticProgram, sol: PrimalDualSolution) -> dict:
    """Residuals of the four KKT blocks, computed from (qp, sol) alone."""
    y, nu, lam = sol.y, sol.nu, sol.lam
    stat = qp.H @ y + qp.c
    if qp.Aeq.shape[0]:
        stat = stat + qp.Aeq.T @ nu
    if qp.Gineq.shape[0]:
        stat = stat + qp.Gineq.T @ lam
    slack = qp.Gineq @ y - qp.hineq if qp.Gineq.shape[0] else np.zeros(0)
    return {
        "stationarity": float(np.max(np.abs(stat), initial=0.0)),
        "primal_eq": float(
            np.max(np.abs(qp.Aeq @ y - qp.beq), initial=0.0) if qp.Aeq.shape[0] else 0.0
        ),
        "primal_ineq": float(np.max(slack, initial=0.0)),
        "dual": float(np.max(-lam, initial=0.0)),
        "comp_slack": float(np.max(np.abs(lam * slack), initial=0.0)),
    }


def _equality_solve(H, c, A, b):
    """Solve the equality-constrained QP via its KKT system.

    Working-set systems are solved with LU partial pivoting (LAPACK) for
    speed; the differentiation paths use the symmetric Bunch-Kaufman route in
    solve_symmetric, which exposes pivot-magnitude failures.
    """
    n = c.shape[0]
    me = A.shape[0]
    M = np.zeros((n + me, n + me))
    M[:n, :n] = H
    if me:
        M[:n, n:] = A.T
        M[n:, :n] = A
    rhs = np.concatenate([-c, b])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrix(str(exc)) from exc
    return sol[:n], sol[n:]


def _active_set_loop(H, c, Aeq, beq, G, h, x0, max_iter):
    """Primal active-set iterations from a feasible x0 with empty working set."""
    x = x0.copy()
    work = []  # sorted inequality indices treated as equalities
    mi = G.shape[0]
    for _ in range(max_iter):
        A_work = np.vstack([Aeq, G[work]]) if work else Aeq
        b_work = np.concatenate([beq, h[work]]) if work else beq
        try:
            x_hat, mult = _equality_solve(H, c, A_work, b_work)
        except SingularMatrix as exc:
            raise NumericalBreakdown(f"singular working-set KKT system: {exc}") from exc
        p = x_hat - x
        if np.max(np.abs(p), initial=0.0) <= STEP_TOL * (1.0 + np.max(np.abs(x), initial=0.0)):
            lam_work = mult[Aeq.shape[0] :]
            if lam_work.size == 0 or np.min(lam_work) >= -MULT_TOL:
                return x, mult[: Aeq.shape[0]], dict(zip(work, lam_work))
            # Bland-style anti-cycling: drop the lowest-index negative multiplier
            for pos, idx in enumerate(work):
                if lam_work[pos] < -MULT_TOL:
                    work.pop(pos)
                    break
            continue
        alpha = 1.0
        blocking = -1
        if mi:
            in_work = np.zeros(mi, dtype=bool)
            in_work[work] = True
            d = G @ p
            room = h - G @ x
            cand = ~in_work & (d > 1e-13 * (1.0 + np.abs(h)))
            if np.any(cand):
                ratios = np.full(mi, np.inf)
                ratios[cand] = np.maximum(room[cand], 0.0) / d[cand]
                j = int(np.argmin(ratios))  # argmin takes the lowest index on ties
                if ratios[j] < alpha - 1e-12:
                    alpha = ratios[j]
                    blocking = j
        x = x + alpha * p
        if blocking >= 0:
            work.append(blocking)
            work.sort()
    raise MaxIterations(f"active-set pivot cap {max_iter} reached")


def _phase_one(Aeq, beq, G, h, n, max_iter):
    """Feasible point via min s s.t. Gx - h <= s, s >= -1, regularized by 1e-8 I."""
    if Aeq.shape[0]:
        x0, *_ = np.linalg.lstsq(Aeq, beq, rcond=None)
        if np.max(np.abs(Aeq @ x0 - beq), initial=0.0) > 1e-8 * (
            1.0 + np.max(np.abs(beq), initial=0.0)
        ):
            raise Infeasible("equality constraints are inconsistent")
    else:
        x0 = np.zeros(n)
    if G.shape[0] == 0:
        return x0
    viol = np.max(G @ x0 - h)
    if viol <= 1e-12:
        return x0
    H1 = 1e-8 * np.eye(n + 1)
    c1 = np.zeros(n + 1)
    c1[n] = 1.0
    A1 = np.hstack([Aeq, np.zeros((Aeq.shape[0], 1))])
    G1 = np.vstack(
        [
            np.hstack([G, -np.ones((G.shape[0], 1))]),
            np.concatenate([np.zeros(n), [-1.0]])[None, :],
        ]
    )
    h1 = np.concatenate([h, [1.0]])
    start = np.concatenate([x0, [viol + 1.0]])
    x1, _, _ = _active_set_loop(H1, c1, A1, beq, G1, h1, start, max_iter)
    if x1[n] > FEAS_TOL:
        raise Infeasible(f"phase-one optimum leaves violation {x1[n]:.3e}")
    return x1[:n]


def solve_qp(qp: QuadraticProgram, max_iter: int = 200) -> PrimalDualSolution:
    """Solve a convex QP to a KKT-certified primal-dual pair.

    Phase one finds a feasible start (raising Infeasible when none exists),
    then primal active-set pivots run until the working-set multipliers are
    dual feasible.  MaxIterations is raised at the pivot cap, and
    NumericalBreakdown when a working-set system cannot be factorized.
    """
    n = qp.n
    x0 = _phase_one(qp.Aeq, qp.beq, qp.Gineq, qp.hineq, n, max_iter)
    x, nu, lam_map = _active_set_loop(
        qp.H, qp.c, qp.Aeq, qp.beq, qp.Gineq, qp.hineq, x0, max_iter
    )
    lam = np.zeros(qp.Gineq.shape[0])
    for idx, val in lam_map.items():
        lam[idx] = val
    if qp.Gineq.shape[0]:
        slack = qp.Gineq @ x - qp.hineq
        active = np.nonzero(np.abs(slack) <= ACTIVE_TOL)[0]
    else:
        active = np.zeros(0, dtype=int)
    sol = PrimalDualSolution(y=x, nu=nu, lam=lam, active_set=active, kkt_residual=0.0)
    sol.kkt_residual = max(audit_kkt(qp, sol).values())
    return sol


def find_feasible_point(Aeq, beq, Gineq, hineq, n, max_iter: int = 200) -> np.ndarray:
    """Standalone phase-one solve; raises Infeasible when the set is empty."""
    Aeq = as_matrix(Aeq) if Aeq is not None and np.size(Aeq) else np.zeros((0, n))
    beq = as_vector(beq) if beq is not None and np.size(beq) else np.zeros(0)
    G = as_matrix(Gineq) if Gineq is not None and np.size(Gineq) else np.zeros((0, n))
    h = as_vector(hineq) if hineq is not None and np.size(hineq) else np.zeros(0)
    return _phase_one(Aeq, beq, G, h, n, max_iter)


@dataclass
class QpDelta:
    """Derivative of the QP data w.r.t. one scalar parameter (None = zero block)."""

    dH: np.ndarray = None
    dc: np.ndarray = None
    dAeq: np.ndarray = None
    dbeq: np.ndarray = None
    dG: np.ndarray = None
    dh: np.ndarray = None


def strongly_active(sol: PrimalDualSolution, tol: float = STRICT_COMPLEMENTARITY_TOL):
    """Inequality indices frozen during differentiation: tight with lam > tol."""
    return np.nonzero(sol.lam > tol)[0]


def _independent_row_filter(Aeq, rows):
    """Positions of `rows` that stay linearly independent given Aeq.

    Degenerate optima (e.g. a budget row implied by tight bounds) would make
    the frozen KKT matrix singular; keeping a maximal independent prefix
    picks one differentiability branch.
    """
    basis = []

    def residual(v):
        r = v.astype(float).copy()
        for b in basis:  # two Gram-Schmidt passes for stability
            r -= (b @ r) * b
        for b in basis:
            r -= (b @ r) * b
        return r

    for row in Aeq:
        r = residual(row)
        nrm = np.linalg.norm(r)
        if nrm > 1e-12:
            basis.append(r / nrm)
    keep = []
    for pos, row in enumerate(rows):
        r = residual(row)
        nrm = np.linalg.norm(r)
        if nrm > 1e-10 * max(1.0, np.linalg.norm(row)):
            keep.append(pos)
            basis.append(r / nrm)
    return np.array(keep, dtype=int)


def _frozen_kkt_matrix(qp: QuadraticProgram, sol: PrimalDualSolution):
    act = strongly_active(sol)
    if len(act):
        act = act[_independent_row_filter(qp.Aeq, qp.Gineq[act])]
    Ga = qp.Gineq[act]
    n, me, ma = qp.n, qp.Aeq.shape[0], len(act)
    M = np.zeros((n + me + ma, n + me + ma))
    M[:n, :n] = qp.H
    if me:
        M[:n, n : n + me] = qp.Aeq.T
        M[n : n + me, :n] = qp.Aeq
    if ma:
        M[:n, n + me :] = Ga.T
        M[n + me :, :n] = Ga
    return M, act


def kkt_jacobian_theta(qp: QuadraticProgram, sol: PrimalDualSolution, dqp_dtheta) -> np.ndarray:
    """Jacobian dy*/dtheta (n x K) with the active set frozen.

    dqp_dtheta is a sequence of QpDelta, one per theta component; column k of
    the result solves the KKT system linearized along delta k.  Raises
    SingularKKT when the frozen system is singular (degenerate solution; the
    caller may perturb H by 1e-8 I and retry).
    """
    M, act = _frozen_kkt_matrix(qp, sol)
    n, me, ma = qp.n, qp.Aeq.shape[0], len(act)
    y, nu = sol.y, sol.nu
    lam_act = sol.lam[act]
    K = len(dqp_dtheta)
    rhs = np.zeros((n + me + ma, K))
    for k, d in enumerate(dqp_dtheta):
        top = np.zeros(n)
        if d.dH is not None:
            top -= d.dH @ y
        if d.dc is not None:
            top -= d.dc
        if d.dAeq is not None and me:
            top -= d.dAeq.T @ nu
        if d.dG is not None and ma:
            top -= d.dG[act].T @ lam_act
        rhs[:n, k] = top
        if me:
            mid = np.zeros(me)
            if d.dbeq is not None:
                mid += d.dbeq
            if d.dAeq is not None:
                mid -= d.dAeq @ y
            rhs[n : n + me, k] = mid
        if ma:
            bot = np.zeros(ma)
            if d.dh is not None:
                bot += d.dh[act]
            if d.dG is not None:
                bot -= d.dG[act] @ y
            rhs[n + me :, k] = bot
    try:
        X = solve_symmetric(M, rhs)
    except SingularMatrix as exc:
        raise SingularKKT(str(exc)) from exc
    return X[:n]


def kkt_adjoint(qp: QuadraticProgram, sol: PrimalDualSolution, dL_dy):
    """Adjoint solve of the frozen KKT system: z with M z = [dL_dy; 0; 0].

    For any QpDelta d, the loss derivative along that parameter equals
    z . rhs(d), with rhs as in kkt_jacobian_theta; z_y (the first block) is
    what the structured chain rules in the training pipelines consume.
    """
    M, act = _frozen_kkt_matrix(qp, sol)
    n = qp.n
    rhs = np.zeros(M.shape[0])
    rhs[:n] = dL_dy
    try:
        z = solve_symmetric(M, rhs)
    except SingularMatrix as exc:
        raise SingularKKT(str(exc)) from exc
    me = qp.Aeq.shape[0]
    return z[:n], z[n : n + me], z[n + me :], act


def kkt_jacobian_P(qp_of_P, sol: PrimalDualSolution, P: np.ndarray = None) -> np.ndarray:
    """Jacobian dy*/dP (m x (n*m)) for a P-transformed surrogate QP.

    qp_of_P must expose the x-space data the transform composed with P:
    attributes H_x, c_x (quadratic objective), base_Aeq, base_G (x-space
    constraint rows), n_extra_rows (trailing y-space rows independent of P),
    P, and qp() returning the materialized y-space QuadraticProgram.  Columns
    are ordered row-major over P entries: column i*m + j is d/dP[i, j].
    """
    if P is None:
        P = qp_of_P.P
    P = as_matrix(P)
    n, m = P.shape
    qp = qp_of_P.qp()
    M, act = _frozen_kkt_matrix(qp, sol)
    me = qp.Aeq.shape[0]
    ma = len(act)
    y = sol.y
    x_star = P @ y
    H_x = qp_of_P.H_x
    lam_act = sol.lam[act]
    n_base = qp_of_P.base_G.shape[0]
    act_is_base = act < n_base
    G_ab = qp_of_P.base_G[act[act_is_base]]
    lam_base = lam_act[act_is_base]

    # x-space stationarity-like vector; only P^T s_x vanishes at the optimum
    s_x = H_x @ x_star + qp_of_P.c_x
    if me:
        s_x = s_x + qp_of_P.base_Aeq.T @ sol.nu
    if G_ab.shape[0]:
        s_x = s_x + G_ab.T @ lam_base

    PtHx = P.T @ H_x
    rhs = np.zeros((m + me + ma, n * m))
    for i in range(n):
        cols = np.s_[i * m : (i + 1) * m]
        rhs[:m, cols] = -s_x[i] * np.eye(m) - np.outer(PtHx[:, i], y)
        if me:
            rhs[m : m + me, cols] = -np.outer(qp_of_P.base_Aeq[:, i], y)
        if ma:
            bot = np.zeros((ma, m))
            bot[act_is_base] = -np.outer(G_ab[:, i], y)
            rhs[m + me :, cols] = bot
    try:
        X = solve_symmetric(M, rhs)
    except SingularMatrix as exc:
        raise SingularKKT(str(exc)) from exc
    return X[:m]


def solve_qp_regularized(qp: QuadraticProgram, max_iter: int = 200, ridge: float = 1e-8):
    """solve_qp with a one-shot H + ridge*I retry on degenerate failures."""
    try:
        return solve_qp(qp, max_iter=max_iter), qp
    except (NumericalBreakdown, SingularMatrix):
        bumped = QuadraticProgram(
            H=qp.H + ridge * np.eye(qp.n),
            c=qp.c,
            Aeq=qp.Aeq if qp.Aeq.shape[0] else None,
            beq=qp.beq if qp.Aeq.shape[0] else None,
            Gineq=qp.Gineq if qp.Gineq.shape[0] else None,
            hineq=qp.hineq if qp.Gineq.shape[0] else None,
        )
        return solve_qp(bumped, max_iter=max_iter), bumped


def solve_box_budget_qp(c_lin, gamma: float, k: float) -> PrimalDualSolution:
    """Exact solution of max c^T x - gamma ||x||^2 over 0 <= x <= 1, sum x <= k.

    The problem is separable apart from the single budget row, so the optimum
    is water-filling: x(mu) = clip((c - mu) / (2 gamma), 0, 1) with mu >= 0
    the budget multiplier.  Returned duals follow the minimization form
    min gamma ||x||^2 - c^T x with inequality rows ordered [-I; I; ones^T].
    Used as a fast exact path for the movie-broadcast layer; agrees with
    solve_qp on the equivalent QuadraticProgram.
    """
    c = as_vector(c_lin)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    n = c.shape[0]
    two_g = 2.0 * gamma

    def total(mu):
        return float(np.sum(np.clip((c - mu) / two_g, 0.0, 1.0)))

    if total(0.0) <= k + 1e-12:
        mu = 0.0
    else:
        # breakpoints where coordinates saturate; total() is piecewise linear
        points = np.unique(np.concatenate([c, c - two_g, [0.0]]))
        points = np.sort(points[points >= 0.0])
        mu = points[-1]
        for lo, hi in zip(points[:-1], points[1:]):
            if total(hi) <= k <= total(lo):
                # coordinate states are constant on the open segment; classify
                # at the midpoint to dodge float ties at the breakpoints
                xm = (c - 0.5 * (lo + hi)) / two_g
                ones = int(np.sum(xm >= 1.0))
                interior = (xm > 0.0) & (xm < 1.0)
                cnt = int(np.sum(interior))
                if cnt == 0:
                    mu = hi
                else:
                    mu = (np.sum(c[interior]) - two_g * (k - ones)) / cnt
                break
    x = np.clip((c - mu) / two_g, 0.0, 1.0)
    lam_lower = np.maximum(mu - c, 0.0) * (x <= 0.0)
    lam_upper = np.maximum(c - two_g - mu, 0.0) * (x >= 1.0)
    lam = np.concatenate([lam_lower, lam_upper, [mu]])
    slack = np.concatenate([-x, x - 1.0, [np.sum(x) - k]])
    active = np.nonzero(np.abs(slack) <= ACTIVE_TOL)[0]
    sol = PrimalDualSolution(
        y=x, nu=np.zeros(0), lam=lam, active_set=active, kkt_residual=0.0
    )
    sol.kkt_residual = max(audit_kkt(box_budget_qp(c, gamma, k), sol).values())
    return sol


def box_budget_qp(c_lin, gamma: float, k: float) -> QuadraticProgram:
    """The QuadraticProgram solved by solve_box_budget_qp, in minimization form."""
    c = as_vector(c_lin)
    n = c.shape[0]
    G = np.vstack([-np.eye(n), np.eye(n), np.ones((1, n))])
    h = np.concatenate([np.zeros(n), np.ones(n), [float(k)]])
    return QuadraticProgram(H=2.0 * gamma * np.eye(n), c=-c, Gineq=G, hineq=h)


def projected_gradient_maximize(
    objective, gradient, projector, y0, steps: int = 500, step_size: float = 0.05
):
    """Projected (super)gradient ascent; returns the best iterate seen."""
    y = projector(np.asarray(y0, dtype=float))
    best_y, best_val = y, objective(y)
    for _ in range(steps):
        y = projector(y + step_size * gradient(y))
        val = objective(y)
        if val > best_val:
            best_y, best_val = y, val
    return best_y


def frank_wolfe_maximize(gradient, linear_oracle, y0, steps: int = 200):
    """Conditional gradient ascent with the 2/(t+2) step schedule.

    Every iterate is a convex combination of feasible points, hence feasible.
    """
    y = np.asarray(y0, dtype=float).copy()
    for t in range(steps):
        v = linear_oracle(gradient(y))
        y = y + (2.0 / (t + 2.0)) * (v - y)
    return y


def qp_to_text(qp: QuadraticProgram, path) -> None:
    """Regression-fixture format: dimensions header then CSV blocks.

    Blocks appear in the order H, c, Aeq, beq, Gineq, hineq; absent blocks
    (zero equality or inequality rows per the header) are simply omitted.
    """
    me, mi = qp.Aeq.shape[0], qp.Gineq.shape[0]
    with open(path, "w") as fh:
        fh.write(f"{qp.n},{me},{mi}\n")
        blocks = [qp.H, qp.c[None, :]]
        if me:
            blocks += [qp.Aeq, qp.beq[None, :]]
        if mi:
            blocks += [qp.Gineq, qp.hineq[None, :]]
        for block in blocks:
            for row in block:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def qp_from_text(path) -> QuadraticProgram:
    with open(path) as fh:
        lines = [l.strip() for l in fh if l.strip()]
    n, me, mi = (int(v) for v in lines[0].split(","))
    rows = iter(np.array([float(t) for t in l.split(",")]) for l in lines[1:])
    H = np.array([next(rows) for _ in range(n)])
    c = next(rows)
    Aeq = beq = Gineq = hineq = None
    if me:
        Aeq = np.array([next(rows) for _ in range(me)])
        beq = next(rows)
    if mi:
        Gineq = np.array([next(rows) for _ in range(mi)])
        hineq = next(rows)
    return QuadraticProgram(H=H, c=c, Aeq=Aeq, beq=beq, Gineq=Gineq, hineq=hineq)
