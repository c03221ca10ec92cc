"""Dense solvers for the three small convex programs used throughout:

- strictly convex QP with inequality constraints (dual active-set method),
- Chebyshev center/radius of a polytope (LP regularized into a QP),
- maximum-volume inscribed ellipsoid (log-barrier Newton).

All solvers are deterministic: identical inputs produce bit-identical
outputs. Problems here are tiny (a handful of variables, tens of rows),
so everything is dense and recomputed from scratch where that keeps the
code simple.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto

import numpy as np

# Regularization that turns the Chebyshev LP into a strictly convex QP so
# the center is unique (plain LP solutions jitter between optimal vertices).
CHEBYSHEV_REGULARIZATION = 1e-8
# Radius beyond which the regularized Chebyshev QP is reporting "the LP was
# unbounded" (the unconstrained optimum sits at 1/mu = 1e8).
UNBOUNDED_RADIUS = 1e7
# Duals above this are considered active (needed for dual-based gradients).
ACTIVITY_TOL = 1e-7
# Chebyshev radius at or below this means the polytope has (numerically)
# empty interior; the ellipsoid program refuses such inputs.
DEGENERATE_RADIUS = 1e-9


class QpStatus(Enum):
    OPTIMAL = auto()
    INFEASIBLE = auto()
    MAX_ITERATIONS = auto()


class ChebyshevStatus(Enum):
    OPTIMAL = auto()
    UNBOUNDED = auto()


class DegeneratePolytopeError(ValueError):
    """Raised by the ellipsoid solver when the polytope has no interior."""


class NotConvergedError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap."""


@dataclass
class QpProblem:
    """min 0.5 x'Qx + q'x  s.t.  A_in x <= b_in, with Q symmetric PD."""

    Q: np.ndarray
    q: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        A = np.asarray(self.A_in, dtype=float)
        self.A_in = A.reshape(-1, n) if A.size else np.zeros((0, n))
        self.b_in = np.asarray(self.b_in, dtype=float).ravel()
        if self.Q.shape != (n, n):
            raise ValueError(f"Q shape {self.Q.shape} inconsistent with q of size {n}")
        if self.b_in.size != self.A_in.shape[0]:
            raise ValueError("A_in/b_in row counts differ")
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")


@dataclass
class QpSolution:
    status: QpStatus
    x_opt: np.ndarray
    duals: np.ndarray
    active_set: np.ndarray
    iterations: int = 0


@dataclass
class ChebyshevResult:
    """Largest inscribed ball: maximize r s.t. a_i c + ||a_i|| r <= b_i."""

    center: np.ndarray
    radius: float
    duals: np.ndarray
    status: ChebyshevStatus = ChebyshevStatus.OPTIMAL


@dataclass
class EllipsoidResult:
    """Maximum-volume inscribed ellipsoid {B z + d : ||z|| <= 1}, B sym. PD."""

    B: np.ndarray
    d: np.ndarray
    log_det_B: float
    duals: np.ndarray
    gap: float = 0.0
    newton_iterations: int = 0


def solve_qp(problem: QpProblem, max_iter: int = 200,
             activity_tol: float = ACTIVITY_TOL) -> QpSolution:
    """Solve a strictly convex inequality-constrained QP.

    Dual active-set method (Goldfarb/Idnani): start at the unconstrained
    optimum and pull in violated constraints one at a time, taking combined
    primal-dual steps. Infeasibility shows up as an unbounded dual step.
    Small dense linear solves are redone per iteration, which is fine at
    this problem size and keeps the iteration exactly reproducible.
    """
    Q, q, A, b = problem.Q, problem.q, problem.A_in, problem.b_in
    n = q.size
    n_rows = A.shape[0]

    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Q must be positive definite") from exc

    def q_solve(rhs):
        # Q^{-1} rhs via the cached Cholesky factor.
        y = np.linalg.solve(L, rhs)
        return np.linalg.solve(L.T, y)

    x = q_solve(-q)
    duals = np.zeros(n_rows)
    if n_rows == 0:
        return QpSolution(QpStatus.OPTIMAL, x, duals, np.array([], dtype=int), 0)

    # Active set bookkeeping; normals kept in ">= form" n_i = -A[i].
    active: list[int] = []
    u_active: list[float] = []

    feas_tol = 1e-10
    iterations = 0
    p = -1
    u_plus = 0.0

    while iterations < max_iter:
        iterations += 1
        if p < 0:
            s = A @ x - b
            s[active] = -np.inf
            p = int(np.argmax(s))
            if s[p] <= feas_tol * (1.0 + abs(b[p])):
                p = -1
                break
            u_plus = 0.0

        n_plus = -A[p]
        y = q_solve(n_plus)
        if active:
            N = -A[active].T                      # n x k active normals
            QiN = q_solve(N)
            M = N.T @ QiN                         # k x k, SPD on lin. indep. set
            rhs = N.T @ y
            try:
                r = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                r = np.linalg.lstsq(M, rhs, rcond=None)[0]
            z = y - QiN @ r
        else:
            r = np.zeros(0)
            z = y

        # Dual step bound t1 and primal full-step t2.
        t1 = np.inf
        l_block = -1
        for k_idx, r_k in enumerate(r):
            if r_k > 1e-12:
                t_k = u_active[k_idx] / r_k
                if t_k < t1 - 1e-15:
                    t1, l_block = t_k, k_idx

        ztn = float(z @ n_plus)
        s_p = float(A[p] @ x - b[p])
        denom_scale = max(1.0, float(np.linalg.norm(y) * np.linalg.norm(n_plus)))
        if ztn > 1e-13 * denom_scale:
            t2 = s_p / ztn
        else:
            t2 = np.inf

        t = min(t1, t2)
        if not np.isfinite(t):
            # No progress possible in primal or dual: constraint p cannot be
            # satisfied jointly with the active set.
            duals[:] = 0.0
            return QpSolution(QpStatus.INFEASIBLE, x, duals,
                              np.array([], dtype=int), iterations)

        if np.isfinite(t2):
            x = x + t * z
        u_active = [u - t * r_k for u, r_k in zip(u_active, r)]
        u_plus += t

        if t == t2 and np.isfinite(t2):
            active.append(p)
            u_active.append(u_plus)
            p = -1
        else:
            del active[l_block]
            del u_active[l_block]

    if p >= 0 or iterations >= max_iter:
        s = A @ x - b
        if np.max(s, initial=-np.inf) > 1e-8:
            for idx, u in zip(active, u_active):
                duals[idx] = max(u, 0.0)
            return QpSolution(QpStatus.MAX_ITERATIONS, x, duals,
                              np.flatnonzero(duals > activity_tol), iterations)

    for idx, u in zip(active, u_active):
        duals[idx] = max(u, 0.0)

    # Polish: re-solve the equality-constrained QP on the final active set in
    # a null-space parameterization. GI accumulates its iterate through steps
    # that can pass far from the optimum (the regularized Chebyshev QP starts
    # at ||x|| ~ 1/mu), so one exact solve strips the accumulated roundoff.
    if active:
        x_p, duals_p = _polish_active_set(Q, q, A, b, active, q_solve)
        if x_p is not None:
            ok = np.all(A @ x_p - b <= 1e-9 * (1.0 + np.abs(b)))
            if ok and np.all(duals_p >= -1e-9):
                x = x_p
                duals = np.zeros(n_rows)
                duals[active] = np.maximum(duals_p, 0.0)

    active_set = np.flatnonzero(duals > activity_tol)
    return QpSolution(QpStatus.OPTIMAL, x, duals, active_set, iterations)


def _polish_active_set(Q, q, A, b, active, q_solve):
    """Exact solve of min 0.5 x'Qx + q'x s.t. A[active] x = b[active]."""
    A_act = A[active]
    b_act = b[active]
    x_unc = q_solve(-q)
    x_part = np.linalg.lstsq(A_act, b_act, rcond=None)[0]
    _, sing, vt = np.linalg.svd(A_act)
    rank = int(np.sum(sing > 1e-12 * max(1.0, sing[0] if sing.size else 0.0)))
    Z = vt[rank:].T
    if Z.shape[1]:
        red = Z.T @ Q @ Z
        try:
            v = np.linalg.solve(red, Z.T @ Q @ (x_unc - x_part))
        except np.linalg.LinAlgError:
            return None, None
        x = x_part + Z @ v
    else:
        x = x_part
    lam = np.linalg.lstsq(A_act.T, -(Q @ x + q), rcond=None)[0]
    return x, lam


def solve_chebyshev(A: np.ndarray, b: np.ndarray,
                    mu: float = CHEBYSHEV_REGULARIZATION) -> ChebyshevResult:
    """Chebyshev center and radius of {u : A u <= b}.

    Solved as the QP  min 0.5*mu*(||c||^2 + r^2) - r  subject to
    a_i c + ||a_i|| r <= b_i; the tiny quadratic term makes the optimizer
    unique. A negative radius means the polytope has empty interior. Rows
    with zero normal are dropped when vacuous (b_i >= 0); a zero row with
    b_i < 0 makes the whole set empty and short-circuits to radius -inf.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    n_rows, m = A.shape
    if n_rows == 0:
        raise ValueError("need at least one row")

    norms = np.linalg.norm(A, axis=1)
    zero = norms <= 0.0
    if np.any(zero & (b < 0.0)):
        return ChebyshevResult(np.zeros(m), -np.inf, np.zeros(n_rows))
    keep = ~zero

    A_k = A[keep]
    b_k = b[keep]
    if A_k.shape[0] == 0:
        return ChebyshevResult(np.zeros(m), np.inf, np.zeros(n_rows),
                               ChebyshevStatus.UNBOUNDED)

    # Decision vector z = (c, r).
    A_qp = np.hstack([A_k, norms[keep][:, None]])
    q = np.zeros(m + 1)
    q[-1] = -1.0
    problem = QpProblem(mu * np.eye(m + 1), q, A_qp, b_k)
    sol = solve_qp(problem)

    duals = np.zeros(n_rows)
    duals[keep] = sol.duals
    center = sol.x_opt[:m]
    radius = float(sol.x_opt[m])
    status = ChebyshevStatus.OPTIMAL
    if radius > UNBOUNDED_RADIUS:
        status = ChebyshevStatus.UNBOUNDED
    return ChebyshevResult(center, radius, duals, status)


def _vech_indices(m: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(m) for j in range(i, m)]


_VECH_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _vech_structures(m: int):
    """Cached (index array, symmetric basis tensor, scale vector) for size m."""
    if m not in _VECH_CACHE:
        idx = np.array(_vech_indices(m), dtype=int)
        E = np.zeros((len(idx), m, m))
        scale = np.ones(len(idx))
        for k, (i, j) in enumerate(idx):
            E[k, i, j] += 1.0
            if i != j:
                E[k, j, i] += 1.0
                scale[k] = 2.0
        _VECH_CACHE[m] = (idx, E, scale)
    return _VECH_CACHE[m]


def _vech_to_mat(v: np.ndarray, m: int) -> np.ndarray:
    idx, _, _ = _vech_structures(m)
    B = np.empty((m, m))
    B[idx[:, 0], idx[:, 1]] = v
    B[idx[:, 1], idx[:, 0]] = v
    return B


def _basis_apply(A: np.ndarray, m: int) -> np.ndarray:
    """T[i, k, :] = E_k a_i for the symmetric basis E_k of vech order."""
    _, E, _ = _vech_structures(m)
    return np.einsum("kmj,nj->nkm", E, A)


def _neg_logdet_grad_hess(B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of -log det B in vech coordinates."""
    m = B.shape[0]
    idx, E, scale = _vech_structures(m)
    Binv = np.linalg.inv(B)
    grad = -Binv[idx[:, 0], idx[:, 1]] * scale
    mats = np.einsum("ij,pjk->pik", Binv, E)
    hess = np.einsum("pik,qki->pq", mats, mats)
    return grad, hess


def solve_max_ellipsoid(A: np.ndarray, b: np.ndarray,
                        warm_start: EllipsoidResult | None = None,
                        max_iterations: int = 100,
                        gap_tol: float = 2e-7) -> EllipsoidResult:
    """Maximum-volume inscribed ellipsoid of a bounded polytope.

    Minimizes -log det B subject to ||B a_i|| + a_i d <= b_i by a standard
    log-barrier path: Newton steps on t*f0 + barrier, t increased
    geometrically until the duality gap (n_rows / t) is below gap_tol
    relative to the objective scale. Analytic gradients and Hessians; the
    iterate stays strictly feasible (and B strictly PD) throughout, so the
    returned ellipsoid is always contained in the polytope.

    Raises DegeneratePolytopeError when the Chebyshev radius is at or below
    the degeneracy floor and NotConvergedError when the Newton budget runs
    out before the gap target is met.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    m = A.shape[1]

    norms = np.linalg.norm(A, axis=1)
    keep = norms > 0.0
    if np.any(~keep & (b < 0.0)):
        raise DegeneratePolytopeError("zero row with negative offset: empty set")
    A_k, b_k = A[keep], b[keep]
    n_rows = A_k.shape[0]

    cheb = solve_chebyshev(A, b)
    if cheb.status is ChebyshevStatus.UNBOUNDED:
        raise ValueError("polytope is unbounded; include input bounds")
    if cheb.radius <= DEGENERATE_RADIUS:
        raise DegeneratePolytopeError(
            f"Chebyshev radius {cheb.radius:.3e} <= {DEGENERATE_RADIUS:.0e}")

    idx = _vech_indices(m)
    n_vech = len(idx)
    T = _basis_apply(A_k, m)

    def constraints(B, d):
        V = A_k @ B
        s = np.linalg.norm(V, axis=1)
        g = s + A_k @ d - b_k
        return V, s, g

    def pack(B, d):
        return np.concatenate([[B[i, j] for i, j in idx], d])

    def unpack(theta):
        return _vech_to_mat(theta[:n_vech], m), theta[n_vech:]

    def is_strictly_ok(B, d, margin=0.0):
        try:
            np.linalg.cholesky(B)
        except np.linalg.LinAlgError:
            return False
        _, _, g = constraints(B, d)
        return bool(np.all(g < -margin))

    B0 = 0.9 * cheb.radius * np.eye(m)
    d0 = cheb.center.copy()
    t_barrier = 1.0
    if warm_start is not None and is_strictly_ok(warm_start.B, warm_start.d,
                                                 margin=1e-12):
        B0, d0 = warm_start.B.copy(), warm_start.d.copy()
        # Resume the barrier path near where the warm point sits: its
        # surrogate gap sum(lam_i * -g_i) says how central it already is.
        if warm_start.duals.shape == (A.shape[0],):
            _, _, g0 = constraints(B0, d0)
            gap_est = float(warm_start.duals[keep] @ (-g0))
            gap_est = max(gap_est, 1e-6)
            t_barrier = max(1.0, n_rows / gap_est)

    theta = pack(B0, d0)
    mu_factor = 55.0
    total_newton = 0

    def evaluate(theta, t):
        """(phi, f0, state) at theta; phi = inf when infeasible."""
        B, d = unpack(theta)
        try:
            L = np.linalg.cholesky(B)
        except np.linalg.LinAlgError:
            return np.inf, None, None
        V, s, g = constraints(B, d)
        if np.any(g >= 0.0):
            return np.inf, None, None
        f0 = -2.0 * float(np.sum(np.log(np.diag(L))))
        return t * f0 + float(-np.sum(np.log(-g))), f0, (B, d, V, s, g)

    phi0, f0, state = evaluate(theta, t_barrier)
    if state is None:
        raise DegeneratePolytopeError("initial ellipsoid point infeasible")
    while True:
        # Newton loop at fixed barrier parameter. Intermediate stages only
        # need a roughly-central point; the last stage is polished hard.
        final_stage = n_rows / t_barrier <= gap_tol * mu_factor
        stage_tol = 1e-11 if final_stage else 1e-9
        for _ in range(50):
            if total_newton >= max_iterations:
                raise NotConvergedError(
                    f"ellipsoid solver exceeded {max_iterations} Newton iterations")
            B, d, V, s, g = state
            w = V / s[:, None]
            grad_f0, hess_f0 = _neg_logdet_grad_hess(B)

            Gv = np.einsum("nkm,nm->nk", T, w)          # d g_i / d vech(B)
            G = np.hstack([Gv, A_k])                     # rows: d g_i / d theta
            inv_g = 1.0 / (-g)

            grad = np.concatenate([t_barrier * grad_f0, np.zeros(m)])
            grad += G.T @ inv_g

            hess = np.zeros((n_vech + m, n_vech + m))
            hess[:n_vech, :n_vech] = t_barrier * hess_f0
            hess += (G * (inv_g ** 2)[:, None]).T @ G
            # curvature of ||B a_i|| itself: (E_k a)'(I - ww')(E_l a) / s
            hess[:n_vech, :n_vech] += (
                np.einsum("n,nkm,nlm->kl", inv_g / s, T, T)
                - np.einsum("n,nk,nl->kl", inv_g / s, Gv, Gv))

            try:
                Lh = np.linalg.cholesky(hess)
                step = np.linalg.solve(Lh.T, np.linalg.solve(Lh, -grad))
            except np.linalg.LinAlgError:
                damped = hess + 1e-8 * np.trace(hess) / hess.shape[0] * np.eye(hess.shape[0])
                step = np.linalg.solve(damped, -grad)

            decrement = float(-grad @ step)
            total_newton += 1
            if decrement / 2.0 <= stage_tol:
                break

            alpha = 1.0
            moved = False
            for _ in range(60):
                cand = theta + alpha * step
                phi_c, f0_c, state_c = evaluate(cand, t_barrier)
                if phi_c <= phi0 - 0.25 * alpha * decrement + 1e-14 * abs(phi0):
                    theta, phi0, f0, state = cand, phi_c, f0_c, state_c
                    moved = True
                    break
                alpha *= 0.5
            if not moved:
                break  # line search stalled; accept current point

        B, d, _, _, g = state
        gap = n_rows / t_barrier
        if gap <= gap_tol * max(1.0, abs(f0)):
            duals_k = 1.0 / (t_barrier * (-g))
            duals = np.zeros(A.shape[0])
            duals[keep] = duals_k
            return EllipsoidResult(B, d, float(-f0), duals, gap, total_newton)
        t_barrier *= mu_factor
        phi0 = t_barrier * f0 - float(np.sum(np.log(-g)))
