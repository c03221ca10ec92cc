"""Barrier bookkeeping and the two QP controllers.

A barrier of relative degree r contributes one halfspace row to the
feasible control set: for r = 1 the row comes straight from the barrier's
derivative condition, for r = 2 from the chained first-order barrier
psi1 = hdot + gain1 * h. The plain safety filter projects the reference
input onto that polytope; the volume-aware variant adds a soft row that
bounds the shrink rate of a differentiable volume proxy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Callable

import numpy as np

from .dynamics import DynamicsModel
from .solvers import QpProblem, QpStatus, solve_qp
from .volume import (
    Box,
    HPolytope,
    VolumeMethod,
    VolumeResult,
    cbf_tag,
    chebyshev_proxy,
    ellipsoid_proxy,
)


class DegenerateVolumeError(RuntimeError):
    """Volume proxy at or below the floor where gradients are meaningless."""


@dataclass(frozen=True)
class ClassKChain:
    """Linear class-K gains (alpha^k(s) = gain_k * s), one per chain level."""

    gains: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        if not self.gains or min(self.gains) <= 0.0:
            raise ValueError("class-K gains must be positive")

    def scaled(self, factor: float) -> "ClassKChain":
        return ClassKChain(tuple(g * factor for g in self.gains))

    def scaled_final(self, factor: float) -> "ClassKChain":
        gains = list(self.gains)
        gains[-1] *= factor
        return ClassKChain(tuple(gains))


@dataclass
class BarrierData:
    """Barrier value and the derivative data the row construction needs.

    For relative degree 2 the oracle also supplies the drift derivative
    hdot = dh/dt + dh/dx . f(x) together with its own state gradient and
    time rate (u enters only through hdot's gradient).
    """

    h: float
    h_x: np.ndarray
    h_t: float = 0.0
    hdot: float | None = None
    hdot_x: np.ndarray | None = None
    hdot_t: float | None = None


@dataclass
class BarrierSpec:
    relative_degree: int
    eval: Callable[[DynamicsModel, float, np.ndarray], BarrierData]
    chain: ClassKChain
    label: str = ""

    def __post_init__(self):
        if self.relative_degree not in (1, 2):
            raise ValueError("relative_degree must be 1 or 2")
        if len(self.chain.gains) != self.relative_degree:
            raise ValueError("chain length must equal the relative degree")

    def with_chain(self, chain: ClassKChain) -> "BarrierSpec":
        return BarrierSpec(self.relative_degree, self.eval, chain, self.label)


def hocbf_row(spec: BarrierSpec, model: DynamicsModel, t: float,
              x: np.ndarray) -> tuple[np.ndarray, float, list[float]]:
    """Halfspace row a.u <= b equivalent to the barrier's derivative condition.

    Also returns the chain values (psi^0 .. psi^{r-1}) for logging. The row
    can be vacuous (a = 0) when the control coefficient vanishes.
    """
    data = spec.eval(model, t, x)
    f = model.f(x)
    g = model.g(x)
    if spec.relative_degree == 1:
        gain1 = spec.chain.gains[0]
        a = -(data.h_x @ g)
        b = data.h_t + data.h_x @ f + gain1 * data.h
        return a, float(b), [data.h]

    if data.hdot is None or data.hdot_x is None or data.hdot_t is None:
        raise ValueError(f"barrier '{spec.label}' lacks second-order data")
    gain1, gain2 = spec.chain.gains
    psi1 = data.hdot + gain1 * data.h
    a = -(data.hdot_x @ g)
    b = data.hdot_t + data.hdot_x @ f + gain1 * data.hdot + gain2 * psi1
    return a, float(b), [data.h, float(psi1)]


def assemble_polytope(specs: list[BarrierSpec], bounds: Box,
                      model: DynamicsModel, t: float,
                      x: np.ndarray) -> HPolytope:
    """Feasible control polytope: one row per barrier, then the bound rows."""
    rows = np.zeros((len(specs), model.control_dim))
    offs = np.zeros(len(specs))
    for i, spec in enumerate(specs):
        a, b, _ = hocbf_row(spec, model, t, x)
        rows[i] = a
        offs[i] = b
    if not specs:
        return HPolytope.from_box(bounds)
    return HPolytope.from_box(bounds, rows, offs,
                              tuple(cbf_tag(i) for i in range(len(specs))))


def barrier_values(specs, model, t, x) -> list[list[float]]:
    """psi chains of every barrier at (t, x), for trace bookkeeping."""
    return [hocbf_row(s, model, t, x)[2] for s in specs]


class ControlStatus(Enum):
    OK = auto()
    INFEASIBLE = auto()


@dataclass
class FsCbfParams:
    """Knobs of the volume-aware controller."""

    alpha_v: float = 1.0
    slack_weight: float = 1e3
    epsilon_floor: float = 1e-3
    volume_method: VolumeMethod = VolumeMethod.CHEBYSHEV
    time_fd_step: float = 1e-3
    state_fd_step: float = 1e-5

    def __post_init__(self):
        if self.alpha_v <= 0.0:
            raise ValueError("alpha_v must be positive")
        if self.slack_weight < 1.0:
            raise ValueError("slack weight must be >= 1")
        if self.epsilon_floor <= 0.0:
            raise ValueError("epsilon floor must be positive")


@dataclass
class ControlDecision:
    u: np.ndarray
    status: ControlStatus
    delta: float = 0.0
    volume: VolumeResult | None = None
    active_rows: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    boundary_margin: float = math.inf
    diagnostics: dict = field(default_factory=dict)


@dataclass
class VolumeCache:
    """Single-owner warm-start holder for the ellipsoid proxy."""

    ellipsoid: object | None = None


def boundary_margin_of(p: HPolytope, u: np.ndarray) -> float:
    """Min over barrier rows of the normalized slack (b_i - a_i.u)/||a_i||."""
    mask = p.cbf_mask
    if not mask.any():
        return math.inf
    A, b = p.A[mask], p.b[mask]
    norms = np.linalg.norm(A, axis=1)
    nz = norms > 0.0
    if not nz.any():
        return math.inf
    return float(np.min((b[nz] - A[nz] @ u) / norms[nz]))


def cbf_qp_control(u_ref: np.ndarray, p: HPolytope) -> ControlDecision:
    """Project the reference input onto the feasible polytope (plain filter)."""
    u_ref = np.asarray(u_ref, dtype=float)
    m = p.dim
    if p.flagged_empty:
        return ControlDecision(u_ref.copy(), ControlStatus.INFEASIBLE)
    problem = QpProblem(2.0 * np.eye(m), -2.0 * u_ref, p.A, p.b)
    sol = solve_qp(problem)
    if sol.status is not QpStatus.OPTIMAL:
        return ControlDecision(u_ref.copy(), ControlStatus.INFEASIBLE,
                               diagnostics={"qp_status": sol.status.name})
    return ControlDecision(sol.x_opt, ControlStatus.OK,
                           active_rows=sol.active_set,
                           boundary_margin=boundary_margin_of(p, sol.x_opt))


def _proxy_result(p: HPolytope, params: FsCbfParams,
                  cache: VolumeCache | None) -> VolumeResult:
    if params.volume_method is VolumeMethod.ELLIPSOID:
        warm = cache.ellipsoid if cache is not None else None
        res = ellipsoid_proxy(p, warm_start=warm)
        if cache is not None:
            cache.ellipsoid = res.diagnostics.get("ellipsoid", None)
    else:
        res = chebyshev_proxy(p)
    if res.degenerate or res.value < params.epsilon_floor:
        res.value = 0.0
        res.degenerate = True
    return res


def volume_of_state(specs, bounds: Box, model: DynamicsModel,
                    params: FsCbfParams, t: float, x: np.ndarray,
                    cache: VolumeCache | None = None) -> VolumeResult:
    """Volume proxy of the feasible set at (t, x), clamped at the floor."""
    p = assemble_polytope(specs, bounds, model, t, x)
    return _proxy_result(p, params, cache)


def volume_state_time_gradients(specs, bounds: Box, model: DynamicsModel,
                                params: FsCbfParams, t: float, x: np.ndarray,
                                cache: VolumeCache | None = None,
                                ) -> tuple[VolumeResult, np.ndarray, float]:
    """Proxy value plus its state gradient and time rate at (t, x).

    Chain rule: dual-based dV/d(A,b) from the proxy, combined with finite
    differences of the polytope assembly map itself (central in each state
    coordinate, forward in time with moving agents propagated by their
    declared velocities). Raises DegenerateVolumeError at/below the floor.
    """
    x = np.asarray(x, dtype=float)
    base = assemble_polytope(specs, bounds, model, t, x)
    vres = _proxy_result(base, params, cache)
    if vres.degenerate:
        raise DegenerateVolumeError("volume proxy at or below the floor")
    dV_dA, dV_db = vres.grad_A, vres.grad_b

    s = params.state_fd_step
    grad_x = np.zeros(x.size)
    for j in range(x.size):
        xp = x.copy()
        xp[j] += s
        pp = assemble_polytope(specs, bounds, model, t, xp)
        xm = x.copy()
        xm[j] -= s
        pm = assemble_polytope(specs, bounds, model, t, xm)
        dA = (pp.A - pm.A) / (2.0 * s)
        db = (pp.b - pm.b) / (2.0 * s)
        grad_x[j] = float(np.sum(dV_dA * dA) + dV_db @ db)

    tau = params.time_fd_step
    pt = assemble_polytope(specs, bounds, model, t + tau, x)
    dV_dt = float(np.sum(dV_dA * (pt.A - base.A)) + dV_db @ (pt.b - base.b)) / tau
    return vres, grad_x, dV_dt


def fs_cbf_qp_control(u_ref: np.ndarray, specs, bounds: Box,
                      model: DynamicsModel, params: FsCbfParams, t: float,
                      x: np.ndarray,
                      cache: VolumeCache | None = None) -> ControlDecision:
    """Safety filter with a soft feasible-space-volume row.

    Solves over (u, delta): min ||u - u_ref||^2 + M delta^2 subject to the
    hard barrier and bound rows plus the soft volume row
        dV/dx . (f + g u) + dV/dt >= -alpha_v V + delta,
    with delta free in sign. When the volume is degenerate the soft row is
    dropped for the step and the plain filter behavior applies.
    """
    u_ref = np.asarray(u_ref, dtype=float)
    p = assemble_polytope(specs, bounds, model, t, x)
    if p.flagged_empty:
        return ControlDecision(u_ref.copy(), ControlStatus.INFEASIBLE)

    try:
        vres, grad_x, dV_dt = volume_state_time_gradients(
            specs, bounds, model, params, t, x, cache=cache)
    except DegenerateVolumeError:
        out = cbf_qp_control(u_ref, p)
        out.diagnostics["fs_row_dropped"] = "degenerate_volume"
        out.volume = _proxy_result(p, params, None)
        return out

    m = p.dim
    f = model.f(x)
    g = model.g(x)
    lie_g = grad_x @ g
    # Soft row over z = (u, delta): -lie_g.u + delta <= alpha_v V + dV_dt + gradV.f
    A_rows = np.hstack([p.A, np.zeros((p.n_rows, 1))])
    fs_row = np.concatenate([-lie_g, [1.0]])
    A_all = np.vstack([A_rows, fs_row])
    b_all = np.concatenate(
        [p.b, [params.alpha_v * vres.value + dV_dt + grad_x @ f]])

    Q = 2.0 * np.eye(m + 1)
    Q[m, m] = 2.0 * params.slack_weight
    q = np.concatenate([-2.0 * u_ref, [0.0]])
    sol = solve_qp(QpProblem(Q, q, A_all, b_all))
    if sol.status is not QpStatus.OPTIMAL:
        return ControlDecision(u_ref.copy(), ControlStatus.INFEASIBLE,
                               volume=vres,
                               diagnostics={"qp_status": sol.status.name})
    u = sol.x_opt[:m]
    delta = float(sol.x_opt[m])
    active = sol.active_set[sol.active_set < p.n_rows]
    return ControlDecision(u, ControlStatus.OK, delta=delta, volume=vres,
                           active_rows=active,
                           boundary_margin=boundary_margin_of(p, u),
                           diagnostics={"fs_row_active": bool(
                               np.any(sol.active_set == p.n_rows)),
                               "dV_dt": dV_dt})
