"""Scenario configuration, simulated plant, receding-horizon loop, and campaigns.

The plant and the solver are strictly separated: the plant steps with one
fixed draw of the true parameters, while the solver only ever sees the
coefficient expansion and the measured state.  All randomness flows through
explicitly seeded generators so runs are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import constraints, ddp, gpc, models, orthopoly
from .constraints import ALOptions, ALState, ChanceSampler, ChanceSpec, CircleObstacle
from .ddp import BoxLimits, CostModel, DdpOptions
from .gpc import GpcModel, GpcStepper

__all__ = [
    "ConfigError",
    "ParamSpec",
    "ScenarioConfig",
    "PlantSim",
    "MpcCycle",
    "MpcLog",
    "OpenLoopResult",
    "McReport",
    "load_scenario",
    "scenario_from_dict",
    "build_gpc_model",
    "build_cost",
    "lift_measurement",
    "mpc_step",
    "run_open_loop",
    "run_mpc",
    "monte_carlo",
    "write_trajectory_csv",
    "write_covariance_csv",
    "write_json",
]

MC_MODES = ("open_loop_gpc", "mpc_gpc", "mpc_deterministic")


class ConfigError(ValueError):
    """Scenario file missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    family: str
    mean: float
    spread: float


@dataclass
class ScenarioConfig:
    """Declarative description of one experiment."""

    name: str
    model: str
    params: list[ParamSpec]
    order: int
    n_steps: int
    horizon: int
    dt: float
    state_weight: np.ndarray
    moment_weight: np.ndarray
    control_weight: np.ndarray
    terminal_state_weight: np.ndarray
    terminal_moment_weight: np.ndarray
    initial_state: np.ndarray
    desired_state: np.ndarray
    obstacles: list[CircleObstacle]
    chance: ChanceSpec
    limits: BoxLimits
    solver: DdpOptions
    al: ALOptions
    plant_seed: int = 0
    mc_seed: int = 0
    quad_points: int | None = None
    initial_control: np.ndarray | None = None
    model_constants: dict = field(default_factory=dict)
    measurement_reset_std: np.ndarray | None = None

    def build_model(self):
        if self.model == "unicycle":
            return models.UnicycleModel(**self.model_constants)
        if self.model == "quadrotor":
            return models.QuadrotorModel(**self.model_constants)
        raise ConfigError(f"unknown model {self.model!r}")

    def deterministic_copy(self) -> "ScenarioConfig":
        """Same scenario with all parameter spreads zeroed (mean-parameter model)."""
        flat = [replace(p, spread=0.0) for p in self.params]
        return replace(self, params=flat)

    def u_init(self) -> np.ndarray:
        m = self.build_model().m
        if self.initial_control is None:
            return np.zeros(m)
        return np.asarray(self.initial_control, dtype=float)


def _require(data: dict, key: str, where: str):
    if key not in data:
        raise ConfigError(f"missing field {key!r} in {where}")
    return data[key]


def scenario_from_dict(data: dict) -> ScenarioConfig:
    try:
        model_name = _require(data, "model", "scenario")
        kind = _require(model_name, "kind", "model") if isinstance(model_name, dict) \
            else model_name
        constants = model_name.get("constants", {}) if isinstance(model_name, dict) else {}

        params = [
            ParamSpec(name=_require(p, "name", "params[]"),
                      family=_require(p, "family", "params[]"),
                      mean=float(_require(p, "mean", "params[]")),
                      spread=float(_require(p, "spread", "params[]")))
            for p in _require(data, "params", "scenario")
        ]
        for p in params:
            orthopoly.family(p.family)
            if p.spread < 0:
                raise ConfigError(f"parameter {p.name!r} has negative spread")

        gpc_block = _require(data, "gpc", "scenario")
        horizon = _require(data, "horizon", "scenario")
        n_steps = int(_require(horizon, "steps", "horizon"))
        pred = int(_require(horizon, "mpc_horizon", "horizon"))
        dt = float(_require(horizon, "dt", "horizon"))
        if not 1 <= pred <= n_steps:
            raise ConfigError("mpc_horizon must satisfy 1 <= H <= steps")
        if dt <= 0:
            raise ConfigError("dt must be positive")

        cost = _require(data, "cost", "scenario")
        chance_block = _require(data, "chance", "scenario")
        chance = ChanceSpec(
            probability=float(_require(chance_block, "probability", "chance")),
            samples=int(chance_block.get("samples", 2000)),
            seed=int(chance_block.get("seed", 0)),
            position_dims=tuple(chance_block.get("position_dims", (0, 1))),
        )
        limits_block = _require(data, "control_limits", "scenario")
        limits = BoxLimits(lower=np.asarray(limits_block["lower"], dtype=float),
                           upper=np.asarray(limits_block["upper"], dtype=float))

        solver = DdpOptions(**data.get("solver", {}))
        al = ALOptions(**data.get("al", {}))
        seeds = data.get("seeds", {})

        obstacles = [
            CircleObstacle(center=np.asarray(o["center"], dtype=float),
                           radius=float(o["radius"]))
            for o in data.get("obstacles", [])
        ]

        sc = ScenarioConfig(
            name=str(data.get("name", "scenario")),
            model=str(kind),
            params=params,
            order=int(_require(gpc_block, "order", "gpc")),
            quad_points=gpc_block.get("quad_points"),
            n_steps=n_steps,
            horizon=pred,
            dt=dt,
            state_weight=np.asarray(_require(cost, "state_diag", "cost"), dtype=float),
            moment_weight=np.asarray(_require(cost, "moment_diag", "cost"), dtype=float),
            control_weight=np.asarray(_require(cost, "control_diag", "cost"), dtype=float),
            terminal_state_weight=np.asarray(_require(cost, "terminal_state_diag", "cost"), dtype=float),
            terminal_moment_weight=np.asarray(_require(cost, "terminal_moment_diag", "cost"), dtype=float),
            initial_state=np.asarray(_require(data, "initial_state", "scenario"), dtype=float),
            desired_state=np.asarray(_require(data, "desired_state", "scenario"), dtype=float),
            obstacles=obstacles,
            chance=chance,
            limits=limits,
            solver=solver,
            al=al,
            plant_seed=int(seeds.get("plant", 0)),
            mc_seed=int(seeds.get("monte_carlo", 0)),
            initial_control=(np.asarray(data["initial_control"], dtype=float)
                             if "initial_control" in data else None),
            model_constants=constants,
            measurement_reset_std=(np.asarray(data["measurement_reset_std"], dtype=float)
                                   if "measurement_reset_std" in data else None),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc

    model = sc.build_model()
    for arr, what, want in [
        (sc.initial_state, "initial_state", model.n),
        (sc.desired_state, "desired_state", model.n),
        (sc.state_weight, "cost.state_diag", model.n),
        (sc.limits.lower, "control_limits", model.m),
    ]:
        if arr.size != want:
            raise ConfigError(f"{what} must have length {want}, got {arr.size}")
    if len(sc.params) != len(model.param_names):
        raise ConfigError(
            f"model {sc.model!r} expects parameters {model.param_names}")
    if max(sc.chance.position_dims) >= model.n:
        raise ConfigError("chance.position_dims out of range for the model state")
    for obs in sc.obstacles:
        if obs.center.size != len(sc.chance.position_dims):
            raise ConfigError("obstacle center dimension must match position_dims")
    return sc


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(data)


def build_gpc_model(sc: ScenarioConfig) -> GpcModel:
    model = sc.build_model()
    params = [
        gpc.expand_param(orthopoly.family(p.family), p.mean, p.spread, dim, p.name)
        for dim, p in enumerate(sc.params)
    ]
    return GpcModel.build(model, params, sc.order, sc.quad_points)


def build_cost(sc: ScenarioConfig, gm: GpcModel) -> CostModel:
    return CostModel.expected(
        gm.basis,
        mean_weight=sc.state_weight,
        moment_weight=sc.moment_weight,
        control_weight=sc.control_weight,
        terminal_mean_weight=sc.terminal_state_weight,
        terminal_moment_weight=sc.terminal_moment_weight,
        x_desired_mean=sc.desired_state,
    )


def lift_measurement(x: np.ndarray, gm: GpcModel,
                     reset_std: np.ndarray | None = None) -> np.ndarray:
    """Measured state -> coefficient vector with zeroed higher modes.

    With a nonzero ``reset_std`` the stated per-state standard deviation is
    spread evenly over the degree-1 modes (measurement-noise hook).
    """
    X = gpc.lift_state(x, gm.basis.count - 1)
    if reset_std is not None and np.any(reset_std):
        deg1 = [j for j, idx in enumerate(gm.basis.indices) if sum(idx) == 1]
        if deg1:
            C = X.reshape(gm.n, gm.basis.count)
            for i in range(gm.n):
                for j in deg1:
                    C[i, j] = reset_std[i] / np.sqrt(len(deg1) * gm.basis.norms[j])
            X = C.ravel()
    return X


@dataclass
class PlantSim:
    """The simulated real system: fixed true parameters, Euler stepping."""

    model: object
    zeta: np.ndarray
    dt: float
    state: np.ndarray
    states: list[np.ndarray] = field(default_factory=list)
    controls: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def sample(cls, sc: ScenarioConfig, rng: np.random.Generator) -> "PlantSim":
        """Draw one true-parameter realization from the scenario distributions."""
        model = sc.build_model()
        zeta = np.array([
            p.mean + p.spread * float(orthopoly.family(p.family).sampler(rng, 1)[0])
            for p in sc.params
        ])
        x0 = sc.initial_state.copy()
        return cls(model=model, zeta=zeta, dt=sc.dt, state=x0, states=[x0.copy()])

    def step(self, u: np.ndarray) -> np.ndarray:
        self.state = models.euler_step(
            lambda x, uu: self.model.f(x, uu, self.zeta), self.state, u, self.dt)
        self.states.append(self.state.copy())
        self.controls.append(np.asarray(u, dtype=float).copy())
        return self.state


@dataclass
class MpcCycle:
    """Everything recorded at one receding-horizon step."""

    step: int
    applied_control: np.ndarray
    plant_state: np.ndarray
    predicted_mean: np.ndarray          # model mean after applying the control
    predicted_cov: np.ndarray           # position covariance one step ahead
    predicted_radius: float             # sqrt(s * lambda_max) one step ahead
    s_values: np.ndarray
    constraint_values: np.ndarray       # (w, H) from the cycle's solution
    planned_controls: np.ndarray
    inner_iterations: int
    outer_iterations: int
    max_violation: float
    fallback: bool


@dataclass
class MpcLog:
    scenario: str
    cycles: list[MpcCycle] = field(default_factory=list)
    plant_states: np.ndarray | None = None
    plant_controls: np.ndarray | None = None
    zeta: np.ndarray | None = None

    def positions(self, dims: Sequence[int]) -> np.ndarray:
        return self.plant_states[:, list(dims)]


@dataclass
class EpisodeRuntime:
    """Shared per-scenario machinery reused across MPC cycles and episodes."""

    gm: GpcModel
    stepper: GpcStepper
    cost: CostModel
    sampler: ChanceSampler
    warm0: np.ndarray | None = None   # first-cycle warm start, (H, m)

    @classmethod
    def build(cls, sc: ScenarioConfig) -> "EpisodeRuntime":
        gm = build_gpc_model(sc)
        return cls(gm=gm, stepper=GpcStepper(gm, sc.dt), cost=build_cost(sc, gm),
                   sampler=ChanceSampler(gm.basis, sc.chance))

    def first_cycle_warm_start(self, sc: ScenarioConfig) -> np.ndarray:
        """Head of the full-horizon solution, solved once per scenario.

        A receding horizon of H steps is too short to discover the global
        route around an obstacle field from scratch; seeding the first cycle
        with the full-horizon plan (propagated forward by the per-cycle
        shifts) keeps each short solve in the right homotopy class.
        """
        if self.warm0 is None:
            X0 = lift_measurement(sc.initial_state, self.gm)
            u_init = np.tile(sc.u_init(), (sc.n_steps, 1))
            problem = ddp.Problem(stepper=self.stepper, cost=self.cost, x0=X0,
                                  u_init=u_init, limits=sc.limits)
            res = constraints.solve_constrained(
                problem, self.gm.basis, sc.obstacles, sc.chance,
                al_options=sc.al, ddp_options=sc.solver, sampler=self.sampler)
            self.warm0 = res.us[:sc.horizon].copy()
        return self.warm0


def mpc_step(sc: ScenarioConfig, rt: EpisodeRuntime, plant: PlantSim,
             warm_controls: np.ndarray, al_state: ALState, k: int,
             fallback_control: np.ndarray):
    """One receding-horizon cycle: lift, solve, apply, re-warm."""
    X = lift_measurement(plant.state, rt.gm, sc.measurement_reset_std)
    problem = ddp.Problem(stepper=rt.stepper, cost=rt.cost, x0=X,
                          u_init=warm_controls, limits=sc.limits)
    res = constraints.solve_constrained(
        problem, rt.gm.basis, sc.obstacles, sc.chance,
        al_options=sc.al, ddp_options=sc.solver,
        sampler=rt.sampler, al_state=al_state)

    fallback = res.failed and res.max_violation > 10 * sc.al.tol_constraint
    u0 = sc.limits.clip(fallback_control) if fallback else res.us[0]
    plant.step(u0)

    # roll the expansion one step for the predicted statistics
    X_pred = rt.stepper.step(X, u0)
    cov_pred = constraints.position_covariance(
        X_pred, rt.gm.basis, sc.chance.position_dims)
    s_next = res.s_values[1] if res.s_values.shape[0] > 1 else \
        (res.s_values[0] if res.s_values.shape[0] else 0.0)
    lam = float(np.linalg.eigvalsh(cov_pred)[-1]) if cov_pred.size else 0.0
    radius = float(np.sqrt(max(s_next * lam, 0.0)))

    next_warm = np.vstack([res.us[1:], res.us[-1:]]) if res.us.shape[0] > 1 \
        else res.us.copy()
    cycle = MpcCycle(
        step=k,
        applied_control=np.asarray(u0, dtype=float).copy(),
        plant_state=plant.state.copy(),
        predicted_mean=gpc.mean(X_pred, rt.gm.basis),
        predicted_cov=cov_pred,
        predicted_radius=radius,
        s_values=res.s_values.copy(),
        constraint_values=res.G.copy(),
        planned_controls=res.us.copy(),
        inner_iterations=res.inner_iterations,
        outer_iterations=res.outer_iterations,
        max_violation=res.max_violation,
        fallback=fallback,
    )
    return u0, next_warm, res.al.shifted(), cycle


def run_mpc(sc: ScenarioConfig, plant: PlantSim | None = None,
            plant_seed: int | None = None,
            rt: EpisodeRuntime | None = None) -> MpcLog:
    """Full receding-horizon episode against a (possibly provided) plant."""
    if rt is None:
        rt = EpisodeRuntime.build(sc)
    if plant is None:
        seed = sc.plant_seed if plant_seed is None else plant_seed
        plant = PlantSim.sample(sc, np.random.default_rng(seed))
    warm = rt.first_cycle_warm_start(sc).copy()
    al = ALState.fresh(len(sc.obstacles), sc.horizon, sc.al.mu_init)
    fallback = sc.u_init()
    log = MpcLog(scenario=sc.name, zeta=plant.zeta.copy())
    for k in range(sc.n_steps):
        u0, warm, al, cycle = mpc_step(sc, rt, plant, warm, al, k, fallback)
        fallback = warm[0]
        log.cycles.append(cycle)
    log.plant_states = np.asarray(plant.states)
    log.plant_controls = np.asarray(plant.controls)
    return log


@dataclass
class OpenLoopResult:
    """Single full-horizon constrained solve plus per-step statistics."""

    xs: np.ndarray
    us: np.ndarray
    means: np.ndarray
    covariances: np.ndarray          # (N+1, n, n) state covariances
    s_values: np.ndarray
    G: np.ndarray
    cost: float
    success: bool
    outer_iterations: int
    inner_iterations: int
    violation_history: list[float]
    position_trace: np.ndarray       # trace of position covariance per step


def run_open_loop(sc: ScenarioConfig) -> OpenLoopResult:
    rt = EpisodeRuntime.build(sc)
    X0 = lift_measurement(sc.initial_state, rt.gm)
    u_init = np.tile(sc.u_init(), (sc.n_steps, 1))
    problem = ddp.Problem(stepper=rt.stepper, cost=rt.cost, x0=X0,
                          u_init=u_init, limits=sc.limits)
    res = constraints.solve_constrained(
        problem, rt.gm.basis, sc.obstacles, sc.chance,
        al_options=sc.al, ddp_options=sc.solver, sampler=rt.sampler)
    dims = list(sc.chance.position_dims)
    means = np.stack([gpc.mean(x, rt.gm.basis) for x in res.xs])
    covs = np.stack([gpc.covariance(x, rt.gm.basis) for x in res.xs])
    pos_trace = np.array([c[np.ix_(dims, dims)].trace() for c in covs])
    return OpenLoopResult(
        xs=res.xs, us=res.us, means=means, covariances=covs,
        s_values=res.s_values, G=res.G, cost=res.cost, success=res.success,
        outer_iterations=res.outer_iterations,
        inner_iterations=res.inner_iterations,
        violation_history=res.violation_history,
        position_trace=pos_trace)


def _collided(positions: np.ndarray, obstacles: Sequence[CircleObstacle]) -> bool:
    for obs in obstacles:
        d = np.linalg.norm(positions - obs.center, axis=1)
        if np.any(d < obs.radius):
            return True
    return False


@dataclass
class McReport:
    """Campaign summary over independent true-parameter realizations."""

    mode: str
    n_realizations: int
    collision_free_count: int
    final_errors: np.ndarray
    mean_final_error: float
    ensemble_trace: np.ndarray        # trace of ensemble position covariance per step
    coverage_fraction: float | None   # plant inside the one-step predicted circle
    episode_fallbacks: int
    wall_time: float

    @property
    def collision_free_rate(self) -> float:
        return self.collision_free_count / self.n_realizations

    def to_dict(self) -> dict:
        """Deterministic payload: timing is reported separately."""
        return {
            "mode": self.mode,
            "n_realizations": self.n_realizations,
            "collision_free_count": self.collision_free_count,
            "collision_free_rate": self.collision_free_rate,
            "final_errors": [float(e) for e in self.final_errors],
            "mean_final_error": float(self.mean_final_error),
            "ensemble_trace": [float(t) for t in self.ensemble_trace],
            "coverage_fraction": (None if self.coverage_fraction is None
                                  else float(self.coverage_fraction)),
            "episode_fallbacks": self.episode_fallbacks,
        }


def monte_carlo(sc: ScenarioConfig, mode: str, n_realizations: int,
                base_seed: int | None = None) -> McReport:
    """Run a campaign of episodes with independent true-parameter draws.

    Plants are always sampled from the scenario's true distributions; the
    ``mpc_deterministic`` mode only swaps the solver's model for the
    mean-parameter one.  Seeding is positional, so campaigns with the same
    base seed see identical plants across modes.
    """
    if mode not in MC_MODES:
        raise ValueError(f"mode must be one of {MC_MODES}")
    if n_realizations < 1:
        raise ValueError("need at least one realization")
    seed = sc.mc_seed if base_seed is None else base_seed
    streams = np.random.SeedSequence(seed).spawn(n_realizations)
    dims = list(sc.chance.position_dims)
    target = sc.desired_state[dims]

    t0 = time.perf_counter()
    solver_sc = sc.deterministic_copy() if mode == "mpc_deterministic" else sc

    open_loop_us = None
    solver_rt = None
    if mode == "open_loop_gpc":
        open_loop_us = run_open_loop(sc).us
    else:
        solver_rt = EpisodeRuntime.build(solver_sc)

    positions = []
    collision_free = 0
    final_errors = []
    fallbacks = 0
    covered = 0
    cover_total = 0
    for stream in streams:
        plant = PlantSim.sample(sc, np.random.default_rng(stream))
        if mode == "open_loop_gpc":
            for u in open_loop_us:
                plant.step(u)
            traj = np.asarray(plant.states)
        else:
            log = run_mpc(solver_sc, plant=plant, rt=solver_rt)
            traj = log.plant_states
            fallbacks += sum(c.fallback for c in log.cycles)
            for c in log.cycles:
                pos = traj[c.step + 1][dims]
                err = np.linalg.norm(pos - c.predicted_mean[dims])
                cover_total += 1
                covered += err <= c.predicted_radius + 1e-12
        pos_traj = traj[:, dims]
        positions.append(pos_traj)
        if not _collided(pos_traj, sc.obstacles):
            collision_free += 1
        final_errors.append(float(np.linalg.norm(pos_traj[-1] - target)))

    positions = np.asarray(positions)           # (R, N+1, npos)
    centered = positions - positions.mean(axis=0, keepdims=True)
    denom = max(n_realizations - 1, 1)
    ensemble_trace = np.einsum("rkp,rkp->k", centered, centered) / denom

    return McReport(
        mode=mode,
        n_realizations=n_realizations,
        collision_free_count=collision_free,
        final_errors=np.asarray(final_errors),
        mean_final_error=float(np.mean(final_errors)),
        ensemble_trace=ensemble_trace,
        coverage_fraction=(covered / cover_total if cover_total else None),
        episode_fallbacks=int(fallbacks),
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# deterministic file output

def _fmt(x) -> str:
    return repr(float(x))


def write_trajectory_csv(path, means: np.ndarray, covariances: np.ndarray,
                         controls: np.ndarray, dt: float) -> None:
    """Canonical layout: step, time, state means, covariance upper triangle,
    controls (blank on the terminal row)."""
    n = means.shape[1]
    m = controls.shape[1] if controls.size else 0
    iu = np.triu_indices(n)
    header = (["step", "time"]
              + [f"mean_{i}" for i in range(n)]
              + [f"cov_{i}_{j}" for i, j in zip(*iu)]
              + [f"u_{i}" for i in range(m)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(means.shape[0]):
            row = [str(k), _fmt(k * dt)]
            row += [_fmt(v) for v in means[k]]
            row += [_fmt(covariances[k][i, j]) for i, j in zip(*iu)]
            if k < controls.shape[0]:
                row += [_fmt(v) for v in controls[k]]
            else:
                row += [""] * m
            w.writerow(row)


def write_covariance_csv(path, result: OpenLoopResult, sc: ScenarioConfig) -> None:
    """Constraint-facing view: position covariance, scaling factor, inflation
    radius, and per-obstacle constraint values per step."""
    dims = list(sc.chance.position_dims)
    npos = len(dims)
    iu = np.triu_indices(npos)
    header = (["step", "time"]
              + [f"pos_cov_{i}_{j}" for i, j in zip(*iu)]
              + ["s", "lambda_max", "radius"]
              + [f"g_obs{i}" for i in range(len(sc.obstacles))])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(result.s_values.shape[0]):
            cov = result.covariances[k][np.ix_(dims, dims)]
            lam = float(np.linalg.eigvalsh(cov)[-1])
            s = float(result.s_values[k])
            row = [str(k), _fmt(k * sc.dt)]
            row += [_fmt(cov[i, j]) for i, j in zip(*iu)]
            row += [_fmt(s), _fmt(lam), _fmt(np.sqrt(max(s * lam, 0.0)))]
            row += [_fmt(result.G[i, k]) for i in range(result.G.shape[0])]
            w.writerow(row)


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
