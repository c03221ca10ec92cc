"""Scenario configuration, simulation stepping, and trace recording.

A scenario couples a plant model, a goal-tracking reference controller,
static circular keep-out zones, social-force pedestrians, and optionally an
occupancy grid, with one of the two safety filters. The runner records a
per-step trace and stops at the horizon or at the first infeasible QP
(time-to-infeasibility is the sensitivity metric of the experiments).
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .agents import HumanAgent, SfmParams, social_force_step
from .barriers import circle_barrier
from .cbf import (
    BarrierSpec,
    ClassKChain,
    ControlDecision,
    ControlStatus,
    FsCbfParams,
    VolumeCache,
    assemble_polytope,
    barrier_values,
    cbf_qp_control,
    fs_cbf_qp_control,
    volume_of_state,
)
from .dynamics import (
    ControllerGains,
    DynamicsModel,
    dubins_model,
    dubins_reference,
    single_integrator_model,
    single_integrator_reference,
    step_euler,
    unicycle_model,
    unicycle_reference,
)
from .grid import OccupancyGrid, RobotInCollision, grid_ray_barriers
from .volume import Box, VolumeMethod


class ConfigError(ValueError):
    """Scenario/spec file failed validation."""


class ControllerKind(Enum):
    CBF_QP = "cbf_qp"
    FS_CBF_QP = "fs_cbf_qp"


@dataclass(frozen=True)
class CircleObstacle:
    center: tuple[float, float]
    radius: float


@dataclass
class GridConfig:
    grid: OccupancyGrid
    d_min: float = 0.4
    max_range: float = 5.0
    chain: ClassKChain = field(default_factory=lambda: ClassKChain((2.0, 6.0)))


@dataclass
class ScenarioConfig:
    model: str = "unicycle"
    initial_state: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 1.0, 1.3, 0.0]))
    goal: np.ndarray = field(default_factory=lambda: np.array([6.0, 1.0]))
    gains: ControllerGains = field(default_factory=ControllerGains)
    input_bounds: Box | None = None
    obstacles: list[CircleObstacle] = field(default_factory=list)
    obstacle_chain: ClassKChain = field(
        default_factory=lambda: ClassKChain((2.0, 6.0)))
    humans: list[HumanAgent] = field(default_factory=list)
    human_chain: ClassKChain = field(
        default_factory=lambda: ClassKChain((2.0, 6.0)))
    grid: GridConfig | None = None
    controller: ControllerKind = ControllerKind.CBF_QP
    fs_params: FsCbfParams = field(default_factory=FsCbfParams)
    robot_radius: float = 0.3
    dt: float = 0.01
    horizon: float = 7.0
    seed: int = 0
    humans_react_to_robot: bool = True
    goal_tolerance: float = 0.1
    dubins_speed: float = 1.0
    record_shadow: bool = False
    record_volume: bool = True
    snapshot_stride: int = 0

    def __post_init__(self):
        if self.dt <= 0.0 or self.horizon < self.dt:
            raise ConfigError("need dt > 0 and horizon >= dt")
        self.initial_state = np.asarray(self.initial_state, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)

    @property
    def relative_degree(self) -> int:
        return 1 if self.model == "single_integrator" else 2

    def build_model(self) -> DynamicsModel:
        if self.model == "single_integrator":
            m = single_integrator_model(self.input_bounds)
        elif self.model == "dubins":
            m = dubins_model(v_fixed=self.dubins_speed)
            if self.input_bounds is not None:
                m = replace(m, control_bounds=self.input_bounds)
        elif self.model == "unicycle":
            m = unicycle_model()
            if self.input_bounds is not None:
                m = replace(m, control_bounds=self.input_bounds)
        else:
            raise ConfigError(f"unknown model '{self.model}'")
        if self.initial_state.size != m.state_dim:
            raise ConfigError(
                f"initial_state needs {m.state_dim} entries for {self.model}")
        return m


def _chain_from(value, degree: int) -> ClassKChain:
    gains = tuple(float(g) for g in value)
    if len(gains) != degree:
        raise ConfigError(f"chain {gains} does not match relative degree {degree}")
    return ClassKChain(gains)


def scenario_from_dict(d: dict) -> ScenarioConfig:
    """Build a validated ScenarioConfig from a parsed YAML/JSON mapping."""
    try:
        d = dict(d)
        kwargs = {}
        for key in ("model", "robot_radius", "dt", "horizon", "seed",
                    "humans_react_to_robot", "goal_tolerance", "dubins_speed",
                    "record_shadow", "record_volume", "snapshot_stride"):
            if key in d:
                kwargs[key] = d[key]
        if "initial_state" in d:
            kwargs["initial_state"] = np.asarray(d["initial_state"], dtype=float)
        if "goal" in d:
            kwargs["goal"] = np.asarray(d["goal"], dtype=float)
        if "gains" in d:
            kwargs["gains"] = ControllerGains(**d["gains"])
        if "input_bounds" in d:
            kwargs["input_bounds"] = Box(d["input_bounds"]["lo"],
                                         d["input_bounds"]["hi"])
        if "controller" in d:
            kwargs["controller"] = ControllerKind(d["controller"])
        if "fs_params" in d:
            fp = dict(d["fs_params"])
            if "volume_method" in fp:
                fp["volume_method"] = VolumeMethod(fp["volume_method"])
            for num_key in ("alpha_v", "slack_weight", "epsilon_floor",
                            "time_fd_step", "state_fd_step"):
                if num_key in fp:
                    fp[num_key] = float(fp[num_key])
            kwargs["fs_params"] = FsCbfParams(**fp)
        if "obstacles" in d:
            kwargs["obstacles"] = [
                CircleObstacle(tuple(o["center"]), float(o["radius"]))
                for o in d["obstacles"]]
        if "humans" in d:
            sfm = SfmParams(**d.get("sfm", {}))
            kwargs["humans"] = [
                HumanAgent(h["position"], h.get("velocity", [0.0, 0.0]),
                           h["goal"], h.get("desired_speed", 1.0), sfm)
                for h in d["humans"]]
        cfg = ScenarioConfig(**kwargs)
        degree = cfg.relative_degree
        if "obstacle_chain" in d:
            cfg.obstacle_chain = _chain_from(d["obstacle_chain"], degree)
        elif degree == 1:
            cfg.obstacle_chain = ClassKChain((2.0,))
        if "human_chain" in d:
            cfg.human_chain = _chain_from(d["human_chain"], degree)
        elif degree == 1:
            cfg.human_chain = ClassKChain((2.0,))
        if "grid" in d and d["grid"]:
            g = d["grid"]
            if "file" in g:
                path = Path(g["file"])
                if path.suffix == ".json":
                    grid = OccupancyGrid.from_json(path)
                else:
                    grid = OccupancyGrid.from_pgm(
                        path, resolution=float(g["resolution"]),
                        origin=g.get("origin", (0.0, 0.0)),
                        occupied_threshold=int(g.get("occupied_threshold", 127)))
            else:
                grid = OccupancyGrid(float(g["resolution"]),
                                     np.asarray(g.get("origin", (0.0, 0.0))),
                                     np.array(g["cells"]))
            cfg.grid = GridConfig(
                grid, d_min=float(g.get("d_min", 0.4)),
                max_range=float(g.get("max_range", 5.0)),
                chain=_chain_from(g.get("chain", (2.0, 6.0)), degree))
        cfg.build_model()  # dimension validation
        return cfg
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


@dataclass
class SimState:
    t: float
    x: np.ndarray
    humans: list[HumanAgent]
    cache: VolumeCache = field(default_factory=VolumeCache)


@dataclass
class SimTrace:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def append(self, values: dict):
        self.rows.append([values.get(c, "") for c in self.columns])

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def reference_control(cfg: ScenarioConfig, model: DynamicsModel,
                      x: np.ndarray) -> np.ndarray:
    if cfg.model == "single_integrator":
        return single_integrator_reference(x, cfg.goal, cfg.gains,
                                           model.control_bounds)
    if cfg.model == "dubins":
        return dubins_reference(x, cfg.goal, cfg.gains, model.control_bounds)
    return unicycle_reference(x, cfg.goal, cfg.gains, model.control_bounds)


def build_barriers(cfg: ScenarioConfig, state: SimState) -> list[BarrierSpec]:
    """Obstacle, human, and grid-ray barriers at the current sim state."""
    degree = cfg.relative_degree
    specs: list[BarrierSpec] = []
    for i, obs in enumerate(cfg.obstacles):
        specs.append(circle_barrier(
            obs.center, obs.radius + cfg.robot_radius, degree,
            cfg.obstacle_chain, label=f"obs{i}"))
    for i, h in enumerate(state.humans):
        specs.append(circle_barrier(
            h.position, h.params.radius + cfg.robot_radius, degree,
            cfg.human_chain, moving_velocity=h.velocity, t_ref=state.t,
            label=f"hum{i}"))
    if cfg.grid is not None:
        specs.extend(grid_ray_barriers(
            cfg.grid.grid, state.x, d_min=cfg.grid.d_min,
            max_range=cfg.grid.max_range, chain=cfg.grid.chain,
            relative_degree=degree))
    return specs


def trace_columns(cfg: ScenarioConfig, model: DynamicsModel) -> list[str]:
    cols = ["t"]
    cols += list(model.state_labels)
    cols += [f"u{i}" for i in range(model.control_dim)]
    cols += ["delta", "volume", "status", "boundary_margin", "min_h"]
    cols += [f"h_obs{i}" for i in range(len(cfg.obstacles))]
    cols += [f"h_hum{i}" for i in range(len(cfg.humans))]
    if cfg.grid is not None:
        cols.append("grid_min_h")
    cols += ["u_ref_inside", "shadow_margin", "fs_row_active"]
    return cols


def run_step(cfg: ScenarioConfig, model: DynamicsModel, state: SimState,
             ) -> tuple[SimState, dict, ControlDecision]:
    """One closed-loop step: reference, barriers, filter, integration.

    Returns the successor state, the trace row, and the control decision
    (whose status the caller inspects to stop at infeasibility).
    """
    bounds = model.control_bounds
    u_ref = reference_control(cfg, model, state.x)
    specs = build_barriers(cfg, state)
    p = assemble_polytope(specs, bounds, model, state.t, state.x)

    if cfg.controller is ControllerKind.FS_CBF_QP:
        decision = fs_cbf_qp_control(u_ref, specs, bounds, model,
                                     cfg.fs_params, state.t, state.x,
                                     cache=state.cache)
        volume_value = decision.volume.value if decision.volume else math.nan
    else:
        decision = cbf_qp_control(u_ref, p)
        volume_value = math.nan
        if cfg.record_volume:
            volume_value = volume_of_state(specs, bounds, model, cfg.fs_params,
                                           state.t, state.x,
                                           cache=state.cache).value

    psis = barrier_values(specs, model, state.t, state.x)
    h_values = [chain[0] for chain in psis]
    n_fixed = len(cfg.obstacles) + len(cfg.humans)

    row = {"t": state.t, "delta": decision.delta, "volume": volume_value,
           "status": "ok" if decision.status is ControlStatus.OK else "infeasible",
           "boundary_margin": decision.boundary_margin,
           "min_h": min(h_values, default=math.inf),
           "fs_row_active": decision.diagnostics.get("fs_row_active", False)}
    for label, value in zip(model.state_labels, state.x):
        row[label] = float(value)
    for i in range(model.control_dim):
        row[f"u{i}"] = float(decision.u[i])
    for i in range(len(cfg.obstacles)):
        row[f"h_obs{i}"] = h_values[i]
    for i in range(len(cfg.humans)):
        row[f"h_hum{i}"] = h_values[len(cfg.obstacles) + i]
    if cfg.grid is not None:
        row["grid_min_h"] = min(h_values[n_fixed:], default=math.inf)

    row["u_ref_inside"] = bool(np.all(p.A @ u_ref - p.b <= 1e-9))
    row["shadow_margin"] = math.nan
    if cfg.record_shadow and cfg.controller is ControllerKind.FS_CBF_QP:
        shadow = cbf_qp_control(u_ref, p)
        row["shadow_margin"] = (shadow.boundary_margin
                                if shadow.status is ControlStatus.OK
                                else math.nan)

    if decision.status is not ControlStatus.OK:
        return state, row, decision

    x_next = step_euler(model, state.x, decision.u, cfg.dt)
    humans_next = social_force_step(
        state.humans, cfg.dt, robot_position=state.x[:2],
        robot_radius=cfg.robot_radius,
        robot_as_agent=cfg.humans_react_to_robot) if state.humans else []
    next_state = SimState(state.t + cfg.dt, x_next, humans_next, state.cache)
    return next_state, row, decision


def simulate_run(cfg: ScenarioConfig) -> SimTrace:
    """Run a scenario to its horizon or to the first infeasible step."""
    model = cfg.build_model()
    trace = SimTrace(trace_columns(cfg, model))
    state = SimState(0.0, cfg.initial_state.copy(), list(cfg.humans))
    n_steps = int(round(cfg.horizon / cfg.dt))
    reached_goal = False
    first_infeasible = None
    min_h_ok = math.inf
    started = time.perf_counter()

    for k in range(n_steps):
        try:
            next_state, row, decision = run_step(cfg, model, state)
        except RobotInCollision:
            trace.summary["robot_in_collision_time"] = state.t
            break
        trace.append(row)
        if cfg.snapshot_stride and k % cfg.snapshot_stride == 0:
            p = assemble_polytope(build_barriers(cfg, state),
                                  model.control_bounds, model, state.t, state.x)
            trace.snapshots.append({"t": state.t, "A": p.A.tolist(),
                                    "b": p.b.tolist(),
                                    "u": decision.u.tolist()})
        if decision.status is not ControlStatus.OK:
            first_infeasible = state.t
            break
        min_h_ok = min(min_h_ok, row["min_h"])
        if np.linalg.norm(state.x[:2] - cfg.goal) <= cfg.goal_tolerance:
            reached_goal = True
        state = next_state

    trace.summary.update({
        "reached_goal": bool(reached_goal),
        "first_infeasible_time": first_infeasible,
        "run_time": (cfg.horizon if first_infeasible is None
                     else first_infeasible),
        "min_h": None if math.isinf(min_h_ok) else float(min_h_ok),
        "steps": len(trace.rows),
        "horizon": cfg.horizon,
        "controller": cfg.controller.value,
        "wall_seconds": time.perf_counter() - started,
    })
    return trace
