"""Shared fixtures/generators for the test suite."""
from __future__ import annotations

import numpy as np

from fscbf.volume import Box, HPolytope, cbf_tag

UNIT_BOX = Box([-1.0, -1.0], [1.0, 1.0])

# Unit right triangle {x >= 0, y >= 0, x + y <= 1} as barrier rows.
TRIANGLE_ROWS = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
TRIANGLE_OFFS = np.array([0.0, 0.0, 1.0])


def triangle_polytope() -> HPolytope:
    return HPolytope.from_box(UNIT_BOX, TRIANGLE_ROWS, TRIANGLE_OFFS,
                              tuple(cbf_tag(i) for i in range(3)))


def half_box_polytope() -> HPolytope:
    return HPolytope.from_box(UNIT_BOX, [[1.0, 0.0]], [0.0], (cbf_tag(0),))


def random_bounded_polytope(rng: np.random.Generator, m: int,
                            max_total_rows: int = 12,
                            box_half: float = 1.5) -> tuple[HPolytope, Box]:
    """Random full-dimensional bounded polytope: a box plus halfspaces that
    keep a neighborhood of an interior anchor point feasible."""
    box = Box(np.full(m, -box_half), np.full(m, box_half))
    k = int(rng.integers(1, max(2, max_total_rows - 2 * m + 1)))
    A = rng.normal(size=(k, m))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    x0 = rng.uniform(-0.4 * box_half, 0.4 * box_half, size=m)
    b = A @ x0 + rng.uniform(0.1, 1.2, size=k)
    poly = HPolytope.from_box(box, A, b, tuple(cbf_tag(i) for i in range(k)))
    return poly, box


def mc_sigma(value: float, box_volume: float, k: int) -> float:
    """Binomial standard deviation of the MC volume estimate."""
    p = min(max(value / box_volume, 0.0), 1.0)
    return box_volume * np.sqrt(p * (1.0 - p) / k)
