"""Pedestrians driven by a social force model.

Each human relaxes toward its desired velocity (unit vector to goal times
desired speed) and is repelled exponentially by other humans and, when
enabled, by the robot. Deterministic explicit Euler updates.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class SfmParams:
    relaxation_time: float = 0.5
    strength: float = 2.0
    interaction_range: float = 0.3
    radius: float = 0.3

    def __post_init__(self):
        if self.relaxation_time <= 0.0:
            raise ValueError("relaxation_time must be > 0")


@dataclass
class HumanAgent:
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    desired_speed: float = 1.0
    params: SfmParams = field(default_factory=SfmParams)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).copy()
        self.goal = np.asarray(self.goal, dtype=float).copy()
        if self.desired_speed <= 0.0:
            raise ValueError("desired_speed must be > 0")


def _repulsion(agent: HumanAgent, other_pos: np.ndarray,
               other_radius: float) -> np.ndarray:
    d = agent.position - other_pos
    dist = float(np.linalg.norm(d))
    if dist <= 1e-9:
        return np.zeros(2)
    p = agent.params
    magnitude = p.strength * np.exp(
        (p.radius + other_radius - dist) / p.interaction_range)
    return magnitude * d / dist


def social_force_step(humans: list[HumanAgent], dt: float,
                      robot_position=None, robot_radius: float = 0.3,
                      robot_as_agent: bool = True) -> list[HumanAgent]:
    """One Euler step of every human; returns new agent records."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    accels = []
    for i, h in enumerate(humans):
        to_goal = h.goal - h.position
        dist = float(np.linalg.norm(to_goal))
        desired_vel = (h.desired_speed * to_goal / dist if dist > 1e-9
                       else np.zeros(2))
        acc = (desired_vel - h.velocity) / h.params.relaxation_time
        for j, other in enumerate(humans):
            if j != i:
                acc = acc + _repulsion(h, other.position, other.params.radius)
        if robot_as_agent and robot_position is not None:
            acc = acc + _repulsion(h, np.asarray(robot_position, dtype=float),
                                   robot_radius)
        accels.append(acc)
    return [replace(h,
                    position=h.position + dt * h.velocity,
                    velocity=h.velocity + dt * acc)
            for h, acc in zip(humans, accels)]
