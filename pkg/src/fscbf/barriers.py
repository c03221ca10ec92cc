"""Distance-based barrier factories for planar obstacles.

A circular keep-out zone contributes h(t, x) = ||p - c(t)||^2 - d_min^2
with p the robot position (first two state coordinates) and c(t) the zone
center, optionally translating at a declared constant velocity. Degree-1
barriers suit velocity-controlled robots; degree-2 barriers cover models
where the input only enters the second derivative of the distance.
"""
from __future__ import annotations

import numpy as np

from .cbf import BarrierData, BarrierSpec, ClassKChain
from .dynamics import DynamicsModel


def circle_barrier(center, radius_min: float, relative_degree: int,
                   chain: ClassKChain, moving_velocity=None, t_ref: float = 0.0,
                   label: str = "") -> BarrierSpec:
    """Keep-out barrier around a (possibly moving) circular zone."""
    if radius_min <= 0.0:
        raise ValueError("radius_min must be > 0")
    center0 = np.asarray(center, dtype=float).copy()
    vel = (np.zeros(2) if moving_velocity is None
           else np.asarray(moving_velocity, dtype=float).copy())
    r_sq = float(radius_min) ** 2

    def evaluate(model: DynamicsModel, t: float, x: np.ndarray) -> BarrierData:
        x = np.asarray(x, dtype=float)
        c = center0 + vel * (t - t_ref)
        rel = x[:2] - c
        h = float(rel @ rel - r_sq)
        h_x = np.zeros(x.size)
        h_x[:2] = 2.0 * rel
        h_t = float(-2.0 * rel @ vel)
        if relative_degree == 1:
            return BarrierData(h, h_x, h_t)
        if model.f_jac is None:
            raise ValueError("degree-2 circle barrier needs the drift Jacobian")
        pdot = model.f(x)[:2]
        rel_vel = pdot - vel
        hdot = float(2.0 * rel @ rel_vel)
        hdot_x = np.zeros(x.size)
        hdot_x[:2] = 2.0 * rel_vel
        hdot_x += 2.0 * rel @ model.f_jac(x)[:2, :]
        hdot_t = float(-2.0 * vel @ rel_vel)
        return BarrierData(h, h_x, h_t, hdot, hdot_x, hdot_t)

    return BarrierSpec(relative_degree, evaluate, chain,
                       label=label or f"circle@{center0.round(3).tolist()}")
