"""Control-affine plant models, Euler stepping, and reference controllers.

Planar convention: the first two state entries are the world position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .volume import Box

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return np.pi - (np.pi - np.asarray(a)) % TWO_PI


@dataclass
class DynamicsModel:
    """Control-affine system x' = f(x) + g(x) u with a named state layout."""

    name: str
    state_dim: int
    control_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    state_labels: tuple[str, ...]
    angle_indices: tuple[int, ...] = ()
    f_jac: Callable[[np.ndarray], np.ndarray] | None = None
    control_bounds: Box | None = None


def step_euler(model: DynamicsModel, x: np.ndarray, u: np.ndarray,
               dt: float) -> np.ndarray:
    """One explicit Euler step; angle coordinates wrapped to (-pi, pi]."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x_next = x + dt * (model.f(x) + model.g(x) @ u)
    for i in model.angle_indices:
        x_next[i] = wrap_angle(x_next[i])
    return x_next


def single_integrator_model(bounds: Box | None = None) -> DynamicsModel:
    """Planar single integrator: position is the state, velocity the input.

    Default input bounds are the 2x2 square [-1, 1]^2.
    """
    if bounds is None:
        bounds = Box([-1.0, -1.0], [1.0, 1.0])
    eye = np.eye(2)
    zero = np.zeros(2)
    return DynamicsModel(
        name="single_integrator", state_dim=2, control_dim=2,
        f=lambda x: zero.copy(), g=lambda x: eye,
        state_labels=("px", "py"),
        f_jac=lambda x: np.zeros((2, 2)),
        control_bounds=bounds)


def dubins_model(v_fixed: float = 1.0, omega_bound: float = 0.5) -> DynamicsModel:
    """Dubins car at fixed speed; the single input is the turn rate."""
    if v_fixed <= 0.0:
        raise ValueError("v_fixed must be > 0")

    def f(x):
        return np.array([v_fixed * math.cos(x[2]), v_fixed * math.sin(x[2]), 0.0])

    def f_jac(x):
        J = np.zeros((3, 3))
        J[0, 2] = -v_fixed * math.sin(x[2])
        J[1, 2] = v_fixed * math.cos(x[2])
        return J

    g_mat = np.array([[0.0], [0.0], [1.0]])
    return DynamicsModel(
        name="dubins", state_dim=3, control_dim=1,
        f=f, g=lambda x: g_mat, state_labels=("px", "py", "theta"),
        angle_indices=(2,), f_jac=f_jac,
        control_bounds=Box([-omega_bound], [omega_bound]))


def unicycle_model(accel_bound: float = 4.0,
                   omega_bound: float = 3.0) -> DynamicsModel:
    """Dynamic unicycle with state (px, py, v, psi) and input (accel, omega)."""

    def f(x):
        return np.array([x[2] * math.cos(x[3]), x[2] * math.sin(x[3]), 0.0, 0.0])

    def f_jac(x):
        J = np.zeros((4, 4))
        c, s = math.cos(x[3]), math.sin(x[3])
        J[0, 2] = c
        J[0, 3] = -x[2] * s
        J[1, 2] = s
        J[1, 3] = x[2] * c
        return J

    g_mat = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return DynamicsModel(
        name="unicycle", state_dim=4, control_dim=2,
        f=f, g=lambda x: g_mat, state_labels=("px", "py", "v", "psi"),
        angle_indices=(3,), f_jac=f_jac,
        control_bounds=Box([-accel_bound, -omega_bound],
                           [accel_bound, omega_bound]))


@dataclass
class ControllerGains:
    k_omega: float = 1.0
    k_x: float = 1.0
    k_v: float = 1.0

    def __post_init__(self):
        if min(self.k_omega, self.k_x, self.k_v) <= 0.0:
            raise ValueError("controller gains must be positive")


def saturate(u: np.ndarray, bounds: Box | None) -> np.ndarray:
    if bounds is None:
        return u
    return np.clip(u, bounds.lo, bounds.hi)


def unicycle_reference(x: np.ndarray, goal: np.ndarray, gains: ControllerGains,
                       bounds: Box | None = None) -> np.ndarray:
    """Goal-tracking reference (accel, omega) for the dynamic unicycle.

    Heading error is driven down by the turn rate; speed tracks a reference
    proportional to the remaining distance, projected on the heading error.
    """
    x = np.asarray(x, dtype=float)
    goal = np.asarray(goal, dtype=float)
    dx, dy = goal[0] - x[0], goal[1] - x[1]
    dist = math.hypot(dx, dy)
    if dist <= 1e-12:
        return np.zeros(2)
    psi_ref = math.atan2(dy, dx)
    psi_e = float(wrap_angle(x[3] - psi_ref))
    omega_ref = -gains.k_omega * psi_e
    v_ref = gains.k_x * dist * math.cos(psi_e)
    a_ref = -gains.k_v * (x[2] - v_ref)
    return saturate(np.array([a_ref, omega_ref]), bounds)


def single_integrator_reference(x: np.ndarray, goal: np.ndarray,
                                gains: ControllerGains,
                                bounds: Box | None = None) -> np.ndarray:
    """Proportional velocity command toward the goal."""
    u = gains.k_x * (np.asarray(goal, dtype=float) - np.asarray(x, dtype=float)[:2])
    return saturate(u, bounds)


def dubins_reference(x: np.ndarray, goal: np.ndarray, gains: ControllerGains,
                     bounds: Box | None = None) -> np.ndarray:
    """Turn-rate command steering the Dubins car toward the goal."""
    x = np.asarray(x, dtype=float)
    psi_ref = math.atan2(goal[1] - x[1], goal[0] - x[0])
    psi_e = float(wrap_angle(x[2] - psi_ref))
    return saturate(np.array([-gains.k_omega * psi_e]), bounds)
