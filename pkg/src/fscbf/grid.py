"""Occupancy grids, PGM/JSON ingestion, and ray-cast obstacle barriers.

The grid follows the math convention: cells[iy, ix] with iy = 0 at the
bottom row, origin at the world position of the grid's lower-left corner.
PGM images store their first row at the top, so loading flips vertically.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .barriers import circle_barrier
from .cbf import BarrierSpec, ClassKChain


class RobotInCollision(RuntimeError):
    """The robot's own grid cell is occupied; no rays can be cast."""


@dataclass
class OccupancyGrid:
    resolution: float
    origin: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        if self.resolution <= 0.0:
            raise ValueError("resolution must be > 0")
        self.origin = np.asarray(self.origin, dtype=float).ravel()
        self.cells = np.asarray(self.cells, dtype=bool)

    @property
    def shape(self):
        return self.cells.shape

    def world_to_cell(self, p) -> tuple[int, int]:
        p = np.asarray(p, dtype=float)
        ix = int(math.floor((p[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((p[1] - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return self.origin + self.resolution * np.array([ix + 0.5, iy + 0.5])

    def in_bounds(self, ix: int, iy: int) -> bool:
        ny, nx = self.cells.shape
        return 0 <= ix < nx and 0 <= iy < ny

    def is_occupied(self, ix: int, iy: int) -> bool:
        return self.in_bounds(ix, iy) and bool(self.cells[iy, ix])

    @classmethod
    def from_json(cls, path) -> "OccupancyGrid":
        d = json.loads(Path(path).read_text())
        return cls(float(d["resolution"]), np.array(d["origin"], dtype=float),
                   np.array(d["cells"]))

    @classmethod
    def from_pgm(cls, path, resolution: float, origin=(0.0, 0.0),
                 occupied_threshold: int = 127) -> "OccupancyGrid":
        """Load a P2 (ASCII) or P5 (binary) PGM; dark pixels are occupied.

        A pixel counts as occupied when its gray value is at or below the
        threshold (map convention: black = obstacle).
        """
        raw = Path(path).read_bytes()
        magic = raw[:2]
        if magic not in (b"P2", b"P5"):
            raise ValueError(f"not a PGM file (magic {magic!r})")

        # Header tokens: magic, width, height, maxval; '#' starts a comment.
        tokens = []
        pos = 2
        while len(tokens) < 3:
            if pos >= len(raw):
                raise ValueError("truncated PGM header")
            ch = raw[pos:pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                start = pos
                while pos < len(raw) and not raw[pos:pos + 1].isspace():
                    pos += 1
                tokens.append(raw[start:pos])
        width, height, maxval = (int(t) for t in tokens)
        if maxval <= 0 or maxval > 255:
            raise ValueError("only 8-bit PGM supported")
        pos += 1  # single whitespace after maxval

        if magic == b"P5":
            data = np.frombuffer(raw[pos:pos + width * height], dtype=np.uint8)
        else:
            data = np.array(raw[pos:].split()[:width * height], dtype=int)
        if data.size != width * height:
            raise ValueError("PGM pixel data truncated")
        img = data.reshape(height, width)
        occupied = img <= occupied_threshold
        return cls(resolution, np.asarray(origin, dtype=float),
                   occupied[::-1, :])  # flip: PGM row 0 is the top


def ray_march(grid: OccupancyGrid, start, direction,
              max_range: float) -> tuple[int, int] | None:
    """First occupied cell along a ray (cell traversal), or None.

    The start cell itself is not reported. Marching stops at max_range or
    when the ray leaves the grid.
    """
    start = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float).copy()
    # Snap roundoff-level components (e.g. sin(2*pi)) so axis-aligned rays
    # from a cell boundary do not drift into the neighboring row.
    d[np.abs(d) < 1e-12] = 0.0
    norm = np.linalg.norm(d)
    if norm <= 0.0:
        raise ValueError("direction must be nonzero")
    d = d / norm
    ix, iy = grid.world_to_cell(start)
    res = grid.resolution

    step_x = 1 if d[0] > 0 else (-1 if d[0] < 0 else 0)
    step_y = 1 if d[1] > 0 else (-1 if d[1] < 0 else 0)

    def boundary_t(coord, cell_idx, step, dcomp, org):
        if step == 0:
            return math.inf
        edge = org + (cell_idx + (1 if step > 0 else 0)) * res
        return (edge - coord) / dcomp

    t_max_x = boundary_t(start[0], ix, step_x, d[0], grid.origin[0])
    t_max_y = boundary_t(start[1], iy, step_y, d[1], grid.origin[1])
    t_delta_x = res / abs(d[0]) if step_x else math.inf
    t_delta_y = res / abs(d[1]) if step_y else math.inf

    t = 0.0
    while t <= max_range:
        if t_max_x <= t_max_y:
            t = t_max_x
            t_max_x += t_delta_x
            ix += step_x
        else:
            t = t_max_y
            t_max_y += t_delta_y
            iy += step_y
        if t > max_range or not grid.in_bounds(ix, iy):
            return None
        if grid.is_occupied(ix, iy):
            return ix, iy
    return None


def grid_ray_barriers(grid: OccupancyGrid, x, d_min: float,
                      n_dirs: int = 12, max_range: float = 5.0,
                      chain: ClassKChain | None = None,
                      relative_degree: int = 2) -> list[BarrierSpec]:
    """Barriers at the nearest occupied cell along each of n_dirs rays.

    Rays point along theta = beta * (360/n_dirs) degrees in the world frame
    for beta = 1..n_dirs. Directions with no hit contribute nothing.
    """
    if chain is None:
        chain = ClassKChain((2.0, 6.0))
    x = np.asarray(x, dtype=float)
    p = x[:2]
    ix, iy = grid.world_to_cell(p)
    if grid.is_occupied(ix, iy):
        raise RobotInCollision(f"robot cell ({ix}, {iy}) is occupied")

    specs = []
    for beta in range(1, n_dirs + 1):
        theta = beta * (2.0 * math.pi / n_dirs)
        hit = ray_march(grid, p, (math.cos(theta), math.sin(theta)), max_range)
        if hit is None:
            continue
        anchor = grid.cell_center(*hit)
        specs.append(circle_barrier(
            anchor, d_min, relative_degree, chain,
            label=f"ray{beta}@{anchor.round(2).tolist()}"))
    return specs
