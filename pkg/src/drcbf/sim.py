"""Closed-loop rollouts, Monte-Carlo safety checks and controller comparison."""
from __future__ import annotations

import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from . import plants
from .barrier import (ClfSpec, KappaFn, cbc_row, filtered_control, hocbf_psi, second_order_risk)
from .risk import AmbiguitySpec, Case, SampleSet, risk_gradient

log = logging.getLogger("drcbf.sim")

CBC_TOL = 1e-6


# ---------------------------------------------------------------- config

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RiskConfig(_Strict):
    alpha: float = Field(0.95, gt=0.0, lt=1.0)
    lambda_penalty: PositiveFloat = 1.0
    case: Literal[1, 2] = 1
    wasserstein_radius: float = Field(0.0, ge=0.0)
    # support bounds of the noise; None means the truncation bounds of the sampler
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None


class NoiseConfig(_Strict):
    n_samples: int = Field(20, ge=1)
    mean: float = 0.0
    std: float = Field(0.1, ge=0.0)
    seed: int = 0
    truncation: PositiveFloat = 3.0
    # draw a fresh sample set every step instead of reusing the initial one
    redraw_each_step: bool = False


class ObstacleConfig(_Strict):
    center: tuple[float, float]
    radius: PositiveFloat


class DubinsConfig(_Strict):
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    goal: tuple[float, float, float] = (5.0, 5.0, 0.0)
    control_lower: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    control_upper: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kappa: PositiveFloat = 1.0
    clf_control_weight: tuple[float, float, float] = (1.0, 1.0, 1.0)
    clf_relaxation_weight: PositiveFloat = 1e4
    goal_tolerance: PositiveFloat = 0.05


class QuadParamsConfig(_Strict):
    mass: PositiveFloat = 1.0
    gravity: PositiveFloat = 9.81
    arm_length: PositiveFloat = 0.25
    inertia: PositiveFloat = 0.01
    thrust_min: float = Field(0.0, ge=0.0)
    thrust_max: PositiveFloat = 20.0


class ReferenceConfig(_Strict):
    radius: PositiveFloat = 3.0
    center: tuple[float, float] = (0.0, 0.0)
    period: PositiveFloat = 20.0
    phase: float = 0.0


class GainsConfig(_Strict):
    kp: PositiveFloat = 9.0
    kd: PositiveFloat = 6.0
    k_theta: PositiveFloat = 400.0
    k_omega: PositiveFloat = 40.0
    max_tilt: float = Field(0.6, gt=0.0, lt=1.5707963267948966)


class QuadConfig(_Strict):
    params: QuadParamsConfig = QuadParamsConfig()
    reference: ReferenceConfig = ReferenceConfig()
    gains: GainsConfig = GainsConfig()
    # (k1, k2) per obstacle, cycled: ψ = ḣ + k1·h, then ∂ψ/∂x(f+gu) + k2·ψ <= 0
    kappa_pairs: list[tuple[PositiveFloat, PositiveFloat]] = [(6.0, 2.0), (12.0, 4.0), (15.0, 5.0), (8.0, 5.0)]
    # reference points closer than this to an obstacle centre are excluded from the tracking RMSE
    tracking_exclusion: PositiveFloat = 1.5


class ScenarioConfig(_Strict):
    name: str = "scenario"
    plant: Literal["dubins", "quadcopter"] = "dubins"
    controller: Literal["cbf", "drcbf"] = "drcbf"
    dt: PositiveFloat = 0.01
    horizon: int = Field(1000, ge=1)
    integrator: Literal["euler", "rk4"] = "euler"
    obstacles: list[ObstacleConfig] = []
    risk: RiskConfig = RiskConfig()
    noise: NoiseConfig = NoiseConfig()
    dubins: Optional[DubinsConfig] = None
    quadcopter: Optional[QuadConfig] = None
    fallback_cap: float = Field(0.05, ge=0.0, le=1.0)
    violation_draws: int = Field(2000, ge=1)
    metadata: dict[str, str] = {}

    @model_validator(mode="after")
    def _plant_block(self):
        if self.plant == "dubins":
            if self.dubins is None:
                object.__setattr__(self, "dubins", DubinsConfig())
            d = self.dubins
            if any(lo > hi for lo, hi in zip(d.control_lower, d.control_upper)):
                raise ValueError("dubins.control_lower exceeds dubins.control_upper")
        else:
            if self.quadcopter is None:
                object.__setattr__(self, "quadcopter", QuadConfig())
            q = self.quadcopter
            if not q.kappa_pairs:
                raise ValueError("quadcopter.kappa_pairs needs at least one (k1, k2) pair")
            if q.params.thrust_min >= q.params.thrust_max:
                raise ValueError("quadcopter.params.thrust_min must be below thrust_max")
        lo, hi = self.risk.lower_bound, self.risk.upper_bound
        if lo is not None and hi is not None and lo > hi:
            raise ValueError("risk.lower_bound exceeds risk.upper_bound")
        return self

    # helpers
    def with_overrides(self, **kw) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``{"risk.alpha": 0.9}``; re-validated."""
        data = self.model_dump(mode="json")
        for key, val in kw.items():
            if val is None:
                continue
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                if node.get(p) is None:
                    node[p] = {}
                node = node[p]
            node[parts[-1]] = val
        return ScenarioConfig.model_validate(data)

    def sample_set(self, step: int | None = None) -> SampleSet:
        """The scenario's samples; with ``step`` given, the per-step redraw for that step."""
        n = self.noise
        seed = n.seed
        if step is not None:
            seed = int(np.random.SeedSequence([n.seed, step]).generate_state(1)[0])
        return SampleSet.draw(n.n_samples, n.mean, n.std, seed, n.truncation)

    def ambiguity(self, samples: SampleSet) -> AmbiguitySpec:
        r = self.risk
        lo = samples.lower if r.lower_bound is None else r.lower_bound
        hi = samples.upper if r.upper_bound is None else r.upper_bound
        return AmbiguitySpec(alpha=r.alpha, lambda_penalty=r.lambda_penalty, lower_bound=lo, upper_bound=hi,
                             case=Case.CASE1 if r.case == 1 else Case.CASE2,
                             wasserstein_radius=r.wasserstein_radius)

    def obstacle_list(self) -> list[plants.Obstacle]:
        return [plants.Obstacle(tuple(o.center), o.radius) for o in self.obstacles]


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return ScenarioConfig.model_validate(json.load(fh))


# ---------------------------------------------------------------- logs

class Termination(str, enum.Enum):
    GOAL_REACHED = "GoalReached"
    HORIZON_EXHAUSTED = "HorizonExhausted"
    INFEASIBLE_FALLBACK = "InfeasibleFallback"


@dataclass
class TrajectoryLog:
    plant: str
    controller: str
    dt: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    h: list = field(default_factory=list)
    cvar: list = field(default_factory=list)
    status: list = field(default_factory=list)
    solve_ms: list = field(default_factory=list)
    cbc_violation: list = field(default_factory=list)
    risk_fallback: list = field(default_factory=list)
    reference: list = field(default_factory=list)
    final_state: np.ndarray | None = None
    termination: Termination = Termination.HORIZON_EXHAUSTED

    def __len__(self):
        return len(self.times)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "t": np.asarray(self.times, dtype=float),
            "state": np.asarray(self.states, dtype=float),
            "control": np.asarray(self.controls, dtype=float),
            "h": np.asarray(self.h, dtype=float),
            "cvar": np.asarray(self.cvar, dtype=float),
        }

    def positions(self) -> np.ndarray:
        """Logged positions plus the final state."""
        pts = [s[:2] for s in self.states]
        if self.final_state is not None:
            pts.append(self.final_state[:2])
        return np.asarray(pts, dtype=float).reshape(-1, 2)

    def csv_header(self) -> list[str]:
        n_obs = len(self.h[0]) if self.h else 0
        if self.plant == "dubins":
            cols = ["t", "x", "y", "theta", "vx", "vy", "omega"]
        else:
            cols = ["t", "x", "y", "theta", "x_dot", "y_dot", "theta_dot", "T_r", "T_l"]
        cols += [f"h_{i}" for i in range(n_obs)] + [f"cvar_{i}" for i in range(n_obs)]
        return cols + ["status", "solve_ms"]

    def write_csv(self, path, timing: bool = False) -> None:
        """One row per step; ``solve_ms`` stays empty unless ``timing`` (wall-clock breaks reproducibility)."""
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.csv_header())
            for k in range(len(self)):
                row = [repr(float(self.times[k]))]
                row += [repr(float(v)) for v in self.states[k]]
                row += [repr(float(v)) for v in self.controls[k]]
                row += [repr(float(v)) for v in self.h[k]] + [repr(float(v)) for v in self.cvar[k]]
                row += [self.status[k], f"{self.solve_ms[k]:.4f}" if timing else ""]
                w.writerow(row)


@dataclass
class MetricsSummary:
    min_clearance: list
    max_h: float | None
    violation_rate: float
    max_step_violation_rate: float
    goal_error: float | None
    goal_reached: bool
    steps_to_goal: int | None
    mean_solve_ms: float
    median_solve_ms: float
    fallback_steps: int
    termination: str
    risk_fallback_steps: int = 0
    tracking_rmse: float | None = None
    max_cvar: float | None = None

    TIMING_FIELDS = ("mean_solve_ms", "median_solve_ms")

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            for k in self.TIMING_FIELDS:
                d.pop(k)
        return d


# ---------------------------------------------------------------- Monte Carlo

def _standard_truncnorm(rng, shape, bound):
    """Standard normal truncated to [-bound, bound] by rejection (exact, fast for bound >= 1)."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z


def monte_carlo_violation_rate(log_or_h, mean: float = 0.0, std: float = 0.1, n_draws: int = 10_000,
                               seed: int | None = 0, truncation: float = 3.0, chunk: int = 64):
    """Fresh-noise estimate of P(h(x)+w > 0) along a trajectory.

    ``log_or_h`` is a :class:`TrajectoryLog` or an array of h values
    ``(steps, obstacles)``. Each obstacle gets its own draw; a step/draw is a
    violation if any obstacle is violated. Returns ``(aggregate, max_step)``.
    """
    h = np.asarray(log_or_h.h if isinstance(log_or_h, TrajectoryLog) else log_or_h, dtype=float)
    if h.size == 0:
        raise ValueError("empty trajectory")
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    h = h.reshape(h.shape[0], -1)
    rng = np.random.default_rng(seed)
    rates = np.empty(h.shape[0])
    for start in range(0, h.shape[0], chunk):
        hb = h[start:start + chunk]
        if std == 0.0:
            w = np.full((hb.shape[0], n_draws, hb.shape[1]), mean)
        else:
            w = mean + std * _standard_truncnorm(rng, (hb.shape[0], n_draws, hb.shape[1]), truncation)
        rates[start:start + chunk] = np.any(hb[:, None, :] + w > 0.0, axis=2).mean(axis=1)
    return float(rates.mean()), float(rates.max())


# ---------------------------------------------------------------- rollout

class _Plant:
    """Per-plant wiring: model, barrier rows, control law and integrator."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.obstacles = cfg.obstacle_list()
        self.samples = cfg.sample_set()
        self.spec = cfg.ambiguity(self.samples)
        self.dr = cfg.controller == "drcbf"
        if cfg.plant == "dubins":
            d = cfg.dubins
            self.model = plants.dubins_model(d.control_lower, d.control_upper)
            self.clf = ClfSpec(target=np.array(d.goal), control_weight=np.array(d.clf_control_weight),
                               relaxation_weight=d.clf_relaxation_weight, angle_index=(2,))
            self.kappa = KappaFn(d.kappa)
            self.x0 = np.array(d.start, dtype=float)
            self.angles = (2,)
            self.deriv = plants.dubins_dynamics
        else:
            q = cfg.quadcopter
            self.params = plants.QuadParams(**q.params.model_dump())
            self.gains = plants.TrackingGains(**q.gains.model_dump())
            self.ref = plants.CircleReference(q.reference.radius, tuple(q.reference.center),
                                              q.reference.period, q.reference.phase)
            self.model = plants.quad_model(self.params)
            # pairs are assigned to obstacles in order, cycling when there are fewer pairs
            pairs = [q.kappa_pairs[i % len(q.kappa_pairs)] for i in range(len(self.obstacles))]
            self.k1 = [KappaFn(a) for a, _ in pairs]
            self.k2 = [KappaFn(b) for _, b in pairs]
            pos, vel, _ = self.ref.at(0.0)
            self.x0 = np.array([pos[0], pos[1], 0.0, vel[0], vel[1], 0.0])
            self.angles = (2,)
            self.deriv = lambda x, u: plants.quad_dynamics(x, u, self.params)

    def resample(self, k: int) -> None:
        if self.cfg.noise.redraw_each_step:
            self.samples = self.cfg.sample_set(step=k)
            self.spec = self.cfg.ambiguity(self.samples)

    def step_rows(self, x):
        """Barrier rows, the logged (h, cvar) per obstacle, and whether a Case-2 LP fell back."""
        rows, hs, cv = [], [], []
        fell_back = False
        n = self.model.state_dim
        for i, ob in enumerate(self.obstacles):
            ev = plants.circle_barrier(x[:2], ob, n)
            hs.append(ev.value)
            if self.cfg.plant == "dubins":
                if self.dr:
                    est, grad = risk_gradient(ev, self.samples, self.spec)
                    val, fell_back = est.value, fell_back or est.fallback
                else:
                    val, grad = ev.value, ev.gradient
                rows.append(cbc_row(self.model, x, val, grad, self.kappa))
            else:
                psi = hocbf_psi(self.model, ev, x, self.k1[i])
                if self.dr:
                    est, grad = second_order_risk(psi, self.samples, self.spec, self.k1[i])
                    val, fell_back = est.value, fell_back or est.fallback
                else:
                    val, grad = psi.value, psi.gradient
                rows.append(cbc_row(self.model, x, val, grad, self.k2[i]))
            cv.append(val)
        return rows, hs, cv, fell_back

    def control(self, x, t, rows):
        if self.cfg.plant == "dubins":
            return filtered_control(self.model, x, rows, clf=self.clf), None
        pos, vel, acc = self.ref.at(t)
        u_nom = plants.quad_tracking_control(x, pos, vel, acc, self.params, self.gains)
        return filtered_control(self.model, x, rows, u_nom=u_nom), pos

    def advance(self, x, u):
        dt = self.cfg.dt
        if self.cfg.integrator == "rk4":
            return plants.rk4_step(lambda s: self.deriv(s, u), x, dt, self.angles)
        return plants.euler_step(x, self.deriv(x, u), dt, self.angles)

    def at_goal(self, x) -> bool:
        if self.cfg.plant != "dubins":
            return False
        return float(np.hypot(*(x[:2] - np.array(self.cfg.dubins.goal[:2])))) <= self.cfg.dubins.goal_tolerance


def run_scenario(config: ScenarioConfig, x0=None) -> TrajectoryLog:
    """Closed-loop rollout: barrier/risk rows, controller QP, Euler update, until goal or horizon.

    ``x0`` overrides the configured start state.
    """
    plant = _Plant(config)
    x = plant.x0.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    out = TrajectoryLog(plant=config.plant, controller=config.controller, dt=config.dt)
    cap = math.floor(config.fallback_cap * config.horizon)
    fallbacks = 0
    for k in range(config.horizon):
        if plant.at_goal(x):
            out.termination = Termination.GOAL_REACHED
            break
        t = k * config.dt
        tic = time.perf_counter()
        plant.resample(k)
        rows, hs, cv, risk_fb = plant.step_rows(x)
        res, ref = plant.control(x, t, rows)
        ms = (time.perf_counter() - tic) * 1e3
        viol = max((r.violation(res.control) for r in rows), default=-math.inf)
        out.times.append(t)
        out.states.append(x.copy())
        out.controls.append(res.control.copy())
        out.h.append(hs)
        out.cvar.append(cv)
        out.status.append(res.status)
        out.solve_ms.append(ms)
        out.cbc_violation.append(viol)
        out.risk_fallback.append(risk_fb)
        if risk_fb:
            log.info("step %d: case-2 risk LP infeasible, case-1 estimate used", k)
        if ref is not None:
            out.reference.append(ref)
        if res.status != "ok":
            fallbacks += 1
            log.info("step %d: controller fallback (%s)", k, res.status)
            if fallbacks > cap:
                out.termination = Termination.INFEASIBLE_FALLBACK
                out.final_state = x.copy()
                return out
        x = plant.advance(x, res.control)
    else:
        out.termination = Termination.GOAL_REACHED if plant.at_goal(x) else Termination.HORIZON_EXHAUSTED
    out.final_state = x.copy()
    return out


def summarize(config: ScenarioConfig, traj: TrajectoryLog, n_draws: int | None = None) -> MetricsSummary:
    obstacles = config.obstacle_list()
    pos = traj.positions()
    clear = [float(np.min(np.hypot(*(pos - np.array(o.center)).T)) - o.radius) for o in obstacles]
    h = np.asarray(traj.h, dtype=float).reshape(len(traj), -1)
    if h.size:
        n = config.noise
        seed = int(np.random.SeedSequence([n.seed, 7919]).generate_state(1)[0])
        agg, worst = monte_carlo_violation_rate(h, n.mean, n.std, n_draws or config.violation_draws,
                                                seed, n.truncation)
    else:
        agg = worst = 0.0
    goal_error = None
    if config.plant == "dubins" and traj.final_state is not None:
        goal_error = float(np.hypot(*(traj.final_state[:2] - np.array(config.dubins.goal[:2]))))
    reached = traj.termination is Termination.GOAL_REACHED
    rmse = None
    if config.plant == "quadcopter" and traj.reference:
        ref = np.asarray(traj.reference)
        states = np.asarray(traj.states)
        keep = np.ones(len(ref), dtype=bool)
        for o in obstacles:
            keep &= np.hypot(*(ref - np.array(o.center)).T) > config.quadcopter.tracking_exclusion
        if np.any(keep):
            err = states[keep, :2] - ref[keep]
            rmse = float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
    ms = np.asarray(traj.solve_ms) if traj.solve_ms else np.zeros(1)
    cv = np.asarray(traj.cvar, dtype=float)
    return MetricsSummary(
        min_clearance=clear,
        max_h=float(h.max()) if h.size else None,
        violation_rate=agg,
        max_step_violation_rate=worst,
        goal_error=goal_error,
        goal_reached=reached,
        steps_to_goal=len(traj) if reached else None,
        mean_solve_ms=float(ms.mean()),
        median_solve_ms=float(np.median(ms)),
        fallback_steps=sum(s != "ok" for s in traj.status),
        risk_fallback_steps=int(sum(traj.risk_fallback)),
        termination=traj.termination.value,
        tracking_rmse=rmse,
        max_cvar=float(cv.max()) if cv.size else None,
    )


@dataclass
class ComparisonResult:
    cbf: MetricsSummary
    drcbf: MetricsSummary
    delta: dict

    def to_dict(self, timing: bool = False) -> dict:
        return {"cbf": self.cbf.to_dict(timing), "drcbf": self.drcbf.to_dict(timing), "delta": self.delta}


def _delta(a: MetricsSummary, b: MetricsSummary) -> dict:
    """``b - a`` for every numeric metric (lists elementwise)."""
    out = {}
    da, db = asdict(a), asdict(b)
    for k, va in da.items():
        vb = db[k]
        if k in MetricsSummary.TIMING_FIELDS or isinstance(va, (bool, str)) or va is None or vb is None:
            continue
        if isinstance(va, list):
            out[k] = [float(y - x) for x, y in zip(va, vb)]
        else:
            out[k] = float(vb - va)
    return out


def compare_controllers(config: ScenarioConfig):
    """Run ``cbf`` and ``drcbf`` on the same geometry and seed.

    Returns ``(ComparisonResult, {"cbf": log, "drcbf": log})``.
    """
    logs, summaries = {}, {}
    for ctrl in ("cbf", "drcbf"):
        cfg = config.with_overrides(controller=ctrl)
        logs[ctrl] = run_scenario(cfg)
        summaries[ctrl] = summarize(cfg, logs[ctrl])
    return ComparisonResult(summaries["cbf"], summaries["drcbf"],
                            _delta(summaries["cbf"], summaries["drcbf"])), logs
