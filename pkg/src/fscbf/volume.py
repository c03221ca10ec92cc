"""Volume estimation and differentiable volume proxies for H-polytopes.

The feasible control set is a polytope {u : A u <= b} built from barrier
rows plus input-bound rows. True volume is estimated by Monte Carlo; the
controller consumes cheap differentiable underapproximations instead
(Chebyshev radius, inscribed-ellipsoid determinant) whose gradients come
from solver duals. A smoothed-indicator MC variant underapproximates the
plain estimate sample-exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .solvers import (
    ACTIVITY_TOL,
    DEGENERATE_RADIUS,
    ChebyshevStatus,
    DegeneratePolytopeError,
    EllipsoidResult,
    NotConvergedError,
    solve_chebyshev,
    solve_max_ellipsoid,
)

BOUND_TAG = "bound"


def cbf_tag(i: int) -> str:
    return f"cbf:{i}"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box lo <= u <= hi (the control-input bounds)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float).ravel())
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float).ravel())
        if self.lo.shape != self.hi.shape or not np.all(self.lo < self.hi):
            raise ValueError("box needs lo < hi elementwise")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def halfspace_rows(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.dim
        A = np.vstack([np.eye(m), -np.eye(m)])
        b = np.concatenate([self.hi, -self.lo])
        return A, b

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))


@dataclass
class HPolytope:
    """{u : A u <= b} with per-row provenance tags.

    Zero-normal rows are allowed only when vacuous (b_i >= 0); a zero row
    with negative offset makes the set empty and is flagged at construction.
    """

    A: np.ndarray
    b: np.ndarray
    row_tags: tuple[str, ...]

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.row_tags = tuple(self.row_tags)
        if self.A.shape[0] != self.b.size or len(self.row_tags) != self.b.size:
            raise ValueError("rows of A, b and row_tags must align")
        norms = np.linalg.norm(self.A, axis=1)
        self.flagged_empty = bool(np.any((norms <= 0.0) & (self.b < 0.0)))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def cbf_mask(self) -> np.ndarray:
        return np.array([t != BOUND_TAG for t in self.row_tags], dtype=bool)

    @classmethod
    def from_box(cls, box: Box, extra_rows=None, extra_b=None, extra_tags=()):
        """Polytope of the box alone, optionally preceded by tagged rows."""
        A_box, b_box = box.halfspace_rows()
        if extra_rows is None:
            return cls(A_box, b_box, (BOUND_TAG,) * len(b_box))
        extra_rows = np.atleast_2d(np.asarray(extra_rows, dtype=float))
        A = np.vstack([extra_rows, A_box])
        b = np.concatenate([np.asarray(extra_b, dtype=float).ravel(), b_box])
        tags = tuple(extra_tags) + (BOUND_TAG,) * len(b_box)
        return cls(A, b, tags)

    def to_json_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(),
                "tags": list(self.row_tags)}

    @classmethod
    def from_json_dict(cls, d: dict) -> "HPolytope":
        return cls(np.array(d["A"], dtype=float), np.array(d["b"], dtype=float),
                   tuple(d["tags"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "HPolytope":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


class VolumeMethod(Enum):
    MONTE_CARLO = "mc"
    SMOOTHED_MC = "smoothed_mc"
    CHEBYSHEV = "chebyshev"
    ELLIPSOID = "ellipsoid"


@dataclass
class McConfig:
    sample_count: int = 100
    seed: int = 0
    smoothing_width: float = 0.0

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass
class VolumeResult:
    """A volume-proxy value with optional gradients w.r.t. the row data.

    `value` is nonnegative; it is zero exactly when the polytope is empty
    or degenerate below the radius floor. Gradients are populated for the
    Chebyshev and ellipsoid proxies only (MC is measurement-only).
    """

    value: float
    method: VolumeMethod
    grad_A: np.ndarray | None = None
    grad_b: np.ndarray | None = None
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)


def _draw_samples(box: Box, cfg: McConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(box.lo, box.hi, size=(cfg.sample_count, box.dim))


def is_empty(p: HPolytope) -> bool:
    """Interior-emptiness: true iff the Chebyshev radius is <= 0.

    Measure-zero sets (for example a slab pinched to a line) count as
    empty, matching the epsilon-floor treatment used by the controller.
    """
    if p.flagged_empty:
        return True
    res = solve_chebyshev(p.A, p.b)
    return bool(res.radius <= 0.0)


def mc_volume(p: HPolytope, box: Box, cfg: McConfig) -> VolumeResult:
    """Plain Monte Carlo estimate: vol(box) * (hits / K).

    Samples are drawn uniformly inside the input-bound box from the seeded
    generator, so results are reproducible per seed. Only barrier rows are
    tested; the box rows hold by construction of the samples.
    """
    pts = _draw_samples(box, cfg)
    mask = p.cbf_mask
    if mask.any():
        inside = np.all(pts @ p.A[mask].T <= p.b[mask], axis=1)
        hits = int(np.count_nonzero(inside))
    else:
        hits = cfg.sample_count
    value = box.volume * hits / cfg.sample_count
    return VolumeResult(value, VolumeMethod.MONTE_CARLO,
                        diagnostics={"hits": hits})


def smoothstep(y, width: float):
    """Cubic smoothstep rising over [0, width]; <= the unit step everywhere."""
    s = np.clip(np.asarray(y, dtype=float) / width, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def smoothed_mc_volume(p: HPolytope, box: Box, cfg: McConfig) -> VolumeResult:
    """MC estimate with the indicator replaced by a smoothstep.

    The smoothstep is zero for nonpositive slack, so each sample weight is
    bounded by the plain indicator: on a shared seed this estimate never
    exceeds mc_volume's, making it a sample-exact underapproximation.
    """
    if cfg.smoothing_width <= 0.0:
        raise ValueError("smoothing_width must be > 0")
    pts = _draw_samples(box, cfg)
    mask = p.cbf_mask
    if mask.any():
        slack = p.b[mask] - pts @ p.A[mask].T
        weights = np.prod(smoothstep(slack, cfg.smoothing_width), axis=1)
    else:
        weights = np.ones(cfg.sample_count)
    value = box.volume * float(np.sum(weights)) / cfg.sample_count
    return VolumeResult(value, VolumeMethod.SMOOTHED_MC)


def chebyshev_proxy(p: HPolytope) -> VolumeResult:
    """Chebyshev radius as volume proxy, with dual-based gradients.

    d(radius)/db_i is the row's dual; d(radius)/da_i follows from the
    envelope theorem applied to the radius LP. Rows with zero dual get a
    zero gradient (complementary slackness).
    """
    k, m = p.A.shape
    if p.flagged_empty:
        return VolumeResult(0.0, VolumeMethod.CHEBYSHEV,
                            np.zeros((k, m)), np.zeros(k), degenerate=True)
    res = solve_chebyshev(p.A, p.b)
    if res.status is ChebyshevStatus.UNBOUNDED:
        raise ValueError("polytope unbounded: input-bound rows are missing")
    diagnostics = {"active_rows": np.flatnonzero(res.duals > ACTIVITY_TOL),
                   "center": res.center, "radius": res.radius}
    if res.radius <= DEGENERATE_RADIUS:
        return VolumeResult(0.0, VolumeMethod.CHEBYSHEV,
                            np.zeros((k, m)), np.zeros(k), degenerate=True,
                            diagnostics=diagnostics)
    grad_b = res.duals.copy()
    grad_A = np.zeros((k, m))
    norms = np.linalg.norm(p.A, axis=1)
    nz = norms > 0.0
    grad_A[nz] = res.duals[nz, None] * (
        -res.center[None, :] - res.radius * p.A[nz] / norms[nz, None])
    return VolumeResult(res.radius, VolumeMethod.CHEBYSHEV, grad_A, grad_b,
                        diagnostics=diagnostics)


def ellipsoid_proxy(p: HPolytope,
                    warm_start: EllipsoidResult | None = None) -> VolumeResult:
    """Inscribed-ellipsoid determinant exp(log det B) as volume proxy.

    Gradients come from the duals of the log-det program via the envelope
    theorem. Degenerate polytopes (and solver non-convergence) fall back to
    the Chebyshev proxy with a diagnostic marker.
    """
    try:
        res = solve_max_ellipsoid(p.A, p.b, warm_start=warm_start)
    except DegeneratePolytopeError:
        out = chebyshev_proxy(p)
        out.diagnostics["ellipsoid_fallback"] = "degenerate"
        return out
    except NotConvergedError:
        out = chebyshev_proxy(p)
        out.diagnostics["ellipsoid_fallback"] = "not_converged"
        return out

    value = float(np.exp(res.log_det_B))
    k, m = p.A.shape
    grad_b = value * res.duals
    grad_A = np.zeros((k, m))
    norms = np.linalg.norm(p.A, axis=1)
    nz = norms > 0.0
    s = np.linalg.norm(p.A[nz] @ res.B, axis=1)
    B2 = res.B @ res.B
    grad_A[nz] = -value * res.duals[nz, None] * (
        (p.A[nz] @ B2) / s[:, None] + res.d[None, :])
    return VolumeResult(value, VolumeMethod.ELLIPSOID, grad_A, grad_b,
                        diagnostics={
                            "active_rows": np.flatnonzero(res.duals > ACTIVITY_TOL),
                            "ellipsoid": res})


def proxy_value(p: HPolytope, method: VolumeMethod) -> VolumeResult:
    if method is VolumeMethod.CHEBYSHEV:
        return chebyshev_proxy(p)
    if method is VolumeMethod.ELLIPSOID:
        return ellipsoid_proxy(p)
    raise ValueError(f"no differentiable proxy for {method}")


@dataclass
class FdGradient:
    grad_A: np.ndarray
    grad_b: np.ndarray
    active_set_changed_A: np.ndarray
    active_set_changed_b: np.ndarray


def proxy_gradient_fd(p_builder, method: VolumeMethod, step: float = 1e-5,
                      with_details: bool = False):
    """Central finite differences of a proxy w.r.t. every entry of (A, b).

    `p_builder(dA, db)` must return the polytope with the given additive
    perturbation. Entries where the two side evaluations report different
    active sets straddle a non-differentiable configuration; the detail
    record marks them so callers can exclude them from comparisons.
    """
    if step <= 0.0:
        raise ValueError("step must be > 0")
    base = p_builder(0.0, 0.0)
    k, m = base.A.shape
    grad_A = np.zeros((k, m))
    grad_b = np.zeros(k)
    changed_A = np.zeros((k, m), dtype=bool)
    changed_b = np.zeros(k, dtype=bool)

    def eval_at(dA, db):
        res = proxy_value(p_builder(dA, db), method)
        active = res.diagnostics.get("active_rows", np.array([], dtype=int))
        return res.value, tuple(active)

    for i in range(k):
        for j in range(m):
            dA = np.zeros((k, m))
            dA[i, j] = step
            v_plus, a_plus = eval_at(dA, 0.0)
            v_minus, a_minus = eval_at(-dA, 0.0)
            grad_A[i, j] = (v_plus - v_minus) / (2.0 * step)
            changed_A[i, j] = a_plus != a_minus
        db = np.zeros(k)
        db[i] = step
        v_plus, a_plus = eval_at(0.0, db)
        v_minus, a_minus = eval_at(0.0, -db)
        grad_b[i] = (v_plus - v_minus) / (2.0 * step)
        changed_b[i] = a_plus != a_minus

    if with_details:
        return FdGradient(grad_A, grad_b, changed_A, changed_b)
    return grad_A, grad_b
