"""Chance-constraint transformation and the augmented-Lagrangian outer loop.

A per-timestep collision chance constraint is replaced by a deterministic one:
the position's confidence ellipsoid (Mahalanobis level s, estimated by seeded
Monte Carlo on the coefficient expansion) is over-approximated by the ball of
squared radius s * lambda_max(Sigma), which inflates the obstacle radius.  The
resulting constraints G < 0 are folded into the cost with multiplier/penalty
terms and driven to feasibility by outer-loop updates around the box-limited
solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import ddp, gpc, orthopoly
from .orthopoly import BasisSet

__all__ = [
    "CircleObstacle",
    "ChanceSpec",
    "ALState",
    "ALOptions",
    "ConstraintEval",
    "ChanceSampler",
    "ConstrainedResult",
    "position_covariance",
    "scaling_factor",
    "lambda_max_with_grad",
    "obstacle_constraint",
    "al_penalty",
    "al_update",
    "AugmentedCost",
    "solve_constrained",
]

_ILL_CONDITIONED = 1e12


@dataclass(frozen=True)
class CircleObstacle:
    """Circular (2D) or spherical (3D) keep-out region."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class ChanceSpec:
    """Probability level and Monte Carlo settings for the scaling factor."""

    probability: float = 0.95
    samples: int = 2000
    seed: int = 0
    position_dims: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        if not 0.0 < self.probability < 1.0:
            raise ValueError("probability must be in (0, 1)")
        if self.samples < 100:
            raise ValueError("need at least 100 samples for the quantile estimate")


class LambdaMax(NamedTuple):
    value: float
    grad: np.ndarray
    smoothed: bool


def lambda_max_with_grad(sigma: np.ndarray) -> LambdaMax:
    """Largest eigenvalue of a symmetric PSD matrix and its matrix gradient.

    For a simple top eigenvalue the gradient is v v' with v the unit
    eigenvector.  When the top eigengap falls below 1e-8 * trace the value is
    replaced by a smooth surrogate blending the top two eigenpairs, and the
    gradient differentiates that surrogate (flagged via ``smoothed``).

    The 2x2 case is closed form; larger matrices go through ``eigh``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape == (2, 2):
        a, c = sigma[0, 0], sigma[1, 1]
        b = 0.5 * (sigma[0, 1] + sigma[1, 0])
        gap = np.hypot(a - c, 2.0 * b)
        half = 0.5 * (a + c)
        lam1 = half + 0.5 * gap
        v1 = np.array([b, lam1 - a])
        nv = np.hypot(v1[0], v1[1])
        if nv < 1e-300:
            v1 = np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
        else:
            v1 = v1 / nv
        p1 = np.outer(v1, v1)
        eps_gap = 1e-8 * max(a + c, 0.0)
        if gap >= eps_gap or eps_gap == 0.0:
            return LambdaMax(float(lam1), p1, False)
        root = np.sqrt(gap * gap + eps_gap * eps_gap)
        value = half + 0.5 * root
        grad = 0.5 * np.eye(2) + 0.5 * (gap / root) * (2.0 * p1 - np.eye(2))
        return LambdaMax(float(value), grad, True)

    vals, vecs = np.linalg.eigh(sigma)
    lam1, lam2 = vals[-1], vals[-2]
    v1 = vecs[:, -1]
    eps_gap = 1e-8 * max(np.trace(sigma), 0.0)
    gap = lam1 - lam2
    if gap >= eps_gap or eps_gap == 0.0:
        return LambdaMax(float(lam1), np.outer(v1, v1), False)
    v2 = vecs[:, -2]
    root = np.sqrt(gap * gap + eps_gap * eps_gap)
    value = 0.5 * (lam1 + lam2) + 0.5 * root
    p1, p2 = np.outer(v1, v1), np.outer(v2, v2)
    grad = 0.5 * (p1 + p2) + 0.5 * (gap / root) * (p1 - p2)
    return LambdaMax(float(value), grad, True)


def position_covariance(X: np.ndarray, basis: BasisSet,
                        dims: Sequence[int]) -> np.ndarray:
    """Covariance restricted to the position coordinates."""
    dims = list(dims)
    cov = gpc.covariance(X, basis)
    return cov[np.ix_(dims, dims)]


class ChanceSampler:
    """Seeded sample bank for scaling-factor quantiles.

    The standard random draws and their basis values are fixed at
    construction, so repeated calls along a trajectory reuse one sample set
    (common random numbers) and stay bit-reproducible.
    """

    def __init__(self, basis: BasisSet, spec: ChanceSpec):
        self.basis = basis
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.xi = orthopoly.sample_xi(basis, rng, spec.samples)
        self.phi = orthopoly.basis_eval_matrix(basis, self.xi)
        self.regularized_evals = 0

    def scaling(self, X: np.ndarray) -> float:
        """Empirical p-quantile of the squared Mahalanobis position distance."""
        dims = list(self.spec.position_dims)
        C = np.asarray(X).reshape(-1, self.basis.count)[dims]
        higher = C[:, 1:]
        sigma = (higher * self.basis.norms[1:]) @ higher.T
        tr = float(np.trace(sigma))
        if tr <= 0.0:
            return 0.0
        if np.linalg.cond(sigma) > _ILL_CONDITIONED:
            sigma = sigma + 1e-12 * tr * np.eye(sigma.shape[0])
            self.regularized_evals += 1
        dev = (self.phi[:, 1:] @ higher.T).T   # deviations from the mean, (npos, S)
        quad = np.sum(dev * np.linalg.solve(sigma, dev), axis=0)
        return float(np.quantile(quad, self.spec.probability))

    def scaling_trajectory(self, xs: np.ndarray) -> np.ndarray:
        """Scaling factors for every state along a trajectory at once."""
        dims = list(self.spec.position_dims)
        npos = len(dims)
        xs = np.asarray(xs, dtype=float)
        slots = xs.shape[0]
        C = xs.reshape(slots, -1, self.basis.count)[:, dims]
        higher = C[:, :, 1:]
        gam = self.basis.norms[1:]
        sigma = np.einsum("spj,j,sqj->spq", higher, gam, higher, optimize=True)
        trace = np.einsum("spp->s", sigma)
        out = np.zeros(slots)
        active = trace > 0.0
        if not active.any():
            return out
        sig_act = sigma[active]
        conds = np.linalg.cond(sig_act)
        bad = conds > _ILL_CONDITIONED
        if bad.any():
            sig_act[bad] += (1e-12 * trace[active][bad])[:, None, None] * np.eye(npos)
            self.regularized_evals += int(bad.sum())
        dev = higher[active] @ self.phi[:, 1:].T        # (A, npos, S)
        sol = np.linalg.solve(sig_act, dev)
        quad = np.einsum("aps,aps->as", dev, sol)
        out[active] = np.quantile(quad, self.spec.probability, axis=1)
        return out


def scaling_factor(X: np.ndarray, basis: BasisSet, spec: ChanceSpec) -> float:
    """One-shot scaling factor; seeded draws, so identical inputs give identical s."""
    return ChanceSampler(basis, spec).scaling(X)


class ConstraintEval(NamedTuple):
    """Constraint value with its gradient over the coefficient vector."""

    value: float
    grad: np.ndarray | None
    hess: np.ndarray | None = None


class _PositionStats:
    """Per-state position statistics shared by every obstacle at one timestep."""

    __slots__ = ("n", "k1", "dims", "zbar", "higher", "lam", "grad_stub")

    def __init__(self, X: np.ndarray, basis: BasisSet, dims: Sequence[int],
                 need_grad: bool = True):
        self.dims = list(dims)
        self.k1 = basis.count
        C = np.asarray(X).reshape(-1, self.k1)
        self.n = C.shape[0]
        self.zbar = C[self.dims, 0]
        self.higher = C[self.dims, 1:]
        gam = basis.norms[1:]
        sigma = (self.higher * gam) @ self.higher.T
        self.lam = lambda_max_with_grad(sigma)
        # gradient of lambda_max through the higher coefficients, before the
        # per-obstacle inflation chain factor
        self.grad_stub = 2.0 * (self.lam.grad @ self.higher) * gam if need_grad else None

    def constraint(self, obs: CircleObstacle, s: float,
                   need_grad: bool = True) -> ConstraintEval:
        sl = s * self.lam.value
        inflate = np.sqrt(sl) if sl > 0.0 else 0.0
        radius = obs.radius + inflate
        delta = self.zbar - obs.center
        value = radius * radius - float(delta @ delta)
        if not need_grad:
            return ConstraintEval(value=float(value), grad=None)
        grad = np.zeros((self.n, self.k1))
        grad[self.dims, 0] = -2.0 * delta
        if sl > 0.0:
            grad[self.dims, 1:] = (radius * s / inflate) * self.grad_stub
        return ConstraintEval(value=float(value), grad=grad.ravel())


def obstacle_constraint(X: np.ndarray, basis: BasisSet, obs: CircleObstacle,
                        s: float, dims: Sequence[int] = (0, 1)) -> ConstraintEval:
    """Inflated-ball collision constraint G <= 0 for one obstacle.

    G = (r_c + sqrt(s * lambda_max))^2 - |pos_mean - center|^2, with the
    gradient flowing through both the mean coefficients and the covariance's
    dependence on the higher coefficients.
    """
    if s < 0:
        raise ValueError("scaling factor must be non-negative")
    return _PositionStats(X, basis, dims).constraint(obs, s)


def al_penalty(lam: float, mu: float, G: float) -> tuple[float, float, float]:
    """Multiplier-penalty term for one inequality constraint G <= 0.

    P = (max(0, lam + mu G)^2 - lam^2) / (2 mu); returns (P, dP/dG, d2P/dG2).
    The two branches join with matching value and first derivative.
    """
    if mu <= 0:
        raise ValueError("penalty weight must be positive")
    if lam < 0:
        raise ValueError("multiplier must be non-negative")
    t = lam + mu * G
    if t > 0.0:
        return ((t * t - lam * lam) / (2.0 * mu), t, mu)
    return (-lam * lam / (2.0 * mu), 0.0, 0.0)


@dataclass
class ALState:
    """Multipliers and penalty weights, one per (constraint, horizon slot).

    Column j covers state X_{j+1}: the initial state is fixed and cannot be
    constrained, while the terminal state must be (an unconstrained terminal
    slot lets a receding-horizon plan promise to jump through an obstacle).
    """

    lambdas: np.ndarray    # (w, N), >= 0
    penalties: np.ndarray  # (w, N), > 0
    outer_iter: int = 0
    last_violation: np.ndarray | None = None   # per-constraint max violation

    @classmethod
    def fresh(cls, n_constraints: int, horizon: int, mu_init: float = 1.0) -> "ALState":
        return cls(lambdas=np.zeros((n_constraints, horizon)),
                   penalties=np.full((n_constraints, horizon), float(mu_init)))

    def shifted(self) -> "ALState":
        """Warm start for the next receding-horizon cycle: drop the first
        timestep, duplicate the last."""
        lam = np.roll(self.lambdas, -1, axis=1)
        lam[:, -1] = self.lambdas[:, -1]
        mu = np.roll(self.penalties, -1, axis=1)
        mu[:, -1] = self.penalties[:, -1]
        return ALState(lambdas=lam, penalties=mu)


def al_update(state: ALState, G: np.ndarray, tol_improve: float = 0.25,
              beta: float = 10.0, tol_constraint: float = 1e-4,
              mu_cap: float = 1e10) -> tuple[ALState, bool]:
    """Outer-loop update after an inner solve.

    Multipliers take the standard projected step lam <- max(0, lam + mu G).
    Penalties are scaled by ``beta`` only for constraints whose max violation
    failed to shrink by ``tol_improve`` since the previous outer iteration.
    Returns the new state and a flag for penalties exceeding the cap.
    """
    G = np.asarray(G, dtype=float)
    violation = np.maximum(G, 0.0).max(axis=1)
    lam = np.maximum(0.0, state.lambdas + state.penalties * G)
    mu = state.penalties.copy()
    if state.last_violation is not None:
        stagnant = (violation > tol_constraint) & \
            (violation > tol_improve * state.last_violation)
        mu[stagnant, :] *= beta
    capped = bool(mu.max(initial=0.0) > mu_cap)
    return ALState(lambdas=lam, penalties=mu, outer_iter=state.outer_iter + 1,
                   last_violation=violation), capped


@dataclass
class ALOptions:
    mu_init: float = 1.0
    beta: float = 10.0
    improvement: float = 0.25
    tol_constraint: float = 1e-4
    max_outer: int = 20
    mu_cap: float = 1e10


class AugmentedCost:
    """Base expected cost plus multiplier-penalty terms for every obstacle.

    Stage k >= 1 carries the penalty for state X_k (multiplier column k - 1);
    stage 0 carries none because X_0 is fixed; the terminal cost carries the
    penalty for X_N.  The constraint Hessian uses the Gauss-Newton form
    d2P * grad grad', which keeps the stage Hessian positive semidefinite.
    """

    def __init__(self, base, basis: BasisSet, obstacles: Sequence[CircleObstacle],
                 s_values: np.ndarray, al: ALState, dims: Sequence[int]):
        self.base = base
        self.basis = basis
        self.obstacles = list(obstacles)
        self.s_values = np.asarray(s_values, dtype=float)   # (N + 1,) per state slot
        self.al = al
        self.dims = tuple(dims)
        self.centers = np.stack([o.center for o in obstacles])   # (w, npos)
        self.radii = np.array([o.radius for o in obstacles])

    def _constraint_values(self, stats, slot):
        sl = self.s_values[slot] * stats.lam.value
        inflate = np.sqrt(sl) if sl > 0.0 else 0.0
        deltas = stats.zbar - self.centers                       # (w, npos)
        radius = self.radii + inflate
        return radius * radius - np.einsum("wp,wp->w", deltas, deltas), \
            deltas, radius, inflate

    def _penalties(self, G, slot):
        lam = self.al.lambdas[:, slot - 1]
        mu = self.al.penalties[:, slot - 1]
        t = lam + mu * G
        active = t > 0.0
        p = np.where(active, (t * t - lam * lam) / (2.0 * mu),
                     -lam * lam / (2.0 * mu))
        dp = np.where(active, t, 0.0)
        d2p = np.where(active, mu, 0.0)
        return float(p.sum()), dp, d2p

    def _penalty_value(self, x, slot):
        stats = _PositionStats(x, self.basis, self.dims, need_grad=False)
        G, _, _, _ = self._constraint_values(stats, slot)
        return self._penalties(G, slot)[0]

    def _penalty_derivs(self, x, slot, lx, lxx):
        stats = _PositionStats(x, self.basis, self.dims)
        G, deltas, radius, inflate = self._constraint_values(stats, slot)
        val, dp, d2p = self._penalties(G, slot)
        if not (dp.any() or d2p.any()):
            return val
        w = len(self.obstacles)
        grads = np.zeros((w, stats.n, stats.k1))
        grads[:, self.dims, 0] = -2.0 * deltas
        if inflate > 0.0:
            coef = radius * self.s_values[slot] / inflate        # (w,)
            grads[:, self.dims, 1:] = coef[:, None, None] * stats.grad_stub
        gmat = grads.reshape(w, -1)
        lx += dp @ gmat
        lxx += gmat.T @ (d2p[:, None] * gmat)
        return val

    def running(self, x, u, k):
        val = self.base.running(x, u, k)
        if k >= 1:
            val += self._penalty_value(x, k)
        return val

    def running_derivs(self, x, u, k):
        l, lx, lu, lxx, luu, lux = self.base.running_derivs(x, u, k)
        if k >= 1:
            lx = lx.copy()
            lxx = lxx.copy()
            l += self._penalty_derivs(x, k, lx, lxx)
        return l, lx, lu, lxx, luu, lux

    def terminal(self, x, k=None):
        return self.base.terminal(x, k) + self._penalty_value(x, len(self.s_values) - 1)

    def terminal_derivs(self, x, k=None):
        phi, px, pxx = self.base.terminal_derivs(x, k)
        px = px.copy()
        pxx = pxx.copy()
        phi += self._penalty_derivs(x, len(self.s_values) - 1, px, pxx)
        return phi, px, pxx


@dataclass
class ConstrainedResult:
    xs: np.ndarray
    us: np.ndarray
    cost: float
    al: ALState
    s_values: np.ndarray            # (N,) scaling factors from the last outer pass
    G: np.ndarray                   # (w, N) constraint values on the solution
    max_violation: float
    violation_history: list[float]
    outer_iterations: int
    inner_iterations: int
    success: bool
    failed: bool
    reason: str


def _lambda_max_batch(sigmas: np.ndarray) -> np.ndarray:
    """Top eigenvalue of a stack of small symmetric matrices."""
    if sigmas.shape[-1] == 2:
        a, c = sigmas[:, 0, 0], sigmas[:, 1, 1]
        b = 0.5 * (sigmas[:, 0, 1] + sigmas[:, 1, 0])
        return 0.5 * (a + c) + 0.5 * np.hypot(a - c, 2.0 * b)
    return np.linalg.eigvalsh(sigmas)[:, -1]


def _constraint_matrix(xs, basis, obstacles, s_values, dims):
    """Constraint values at every horizon slot, terminal state included."""
    dims = list(dims)
    n_slots = len(s_values)
    C = np.asarray(xs).reshape(n_slots, -1, basis.count)[:, dims]
    zbar = C[:, :, 0]
    higher = C[:, :, 1:]
    gam = basis.norms[1:]
    sigma = np.einsum("spj,j,sqj->spq", higher, gam, higher, optimize=True)
    inflate = np.sqrt(np.maximum(np.asarray(s_values) * _lambda_max_batch(sigma), 0.0))
    centers = np.stack([o.center for o in obstacles])
    radii = np.array([o.radius for o in obstacles])
    deltas = zbar[None, :, :] - centers[:, None, :]          # (w, slots, npos)
    dist2 = np.einsum("wsp,wsp->ws", deltas, deltas)
    radius = radii[:, None] + inflate[None, :]
    return radius * radius - dist2


def solve_constrained(problem: ddp.Problem, basis: BasisSet,
                      obstacles: Sequence[CircleObstacle], chance: ChanceSpec,
                      al_options: ALOptions | None = None,
                      ddp_options: ddp.DdpOptions | None = None,
                      sampler: ChanceSampler | None = None,
                      al_state: ALState | None = None) -> ConstrainedResult:
    """Augmented-Lagrangian outer loop around the box-limited inner solver.

    Per outer iteration the scaling factors are refreshed on the nominal
    trajectory and held fixed inside the inner solve.  Terminates when the
    worst constraint violation drops below tolerance with a healthy inner
    solve, or at the outer-iteration cap.
    """
    al_opts = al_options or ALOptions()
    N = np.asarray(problem.u_init).shape[0]
    w = len(obstacles)

    if w == 0:
        res = ddp.solve(problem, ddp_options)
        return ConstrainedResult(
            xs=res.xs, us=res.us, cost=res.cost,
            al=ALState.fresh(0, max(N, 1), al_opts.mu_init),
            s_values=np.zeros(N + 1), G=np.zeros((0, N + 1)), max_violation=0.0,
            violation_history=[0.0], outer_iterations=0,
            inner_iterations=res.iterations, success=not res.failed,
            failed=res.failed, reason=res.reason)

    sampler = sampler or ChanceSampler(basis, chance)
    al = al_state if al_state is not None else ALState.fresh(w, N, al_opts.mu_init)
    dims = chance.position_dims

    us = np.asarray(problem.u_init, dtype=float).copy()
    xs, _ = ddp.rollout(problem.stepper, problem.cost, problem.x0, us)

    history: list[float] = []
    inner_total = 0
    best: tuple[float, np.ndarray, np.ndarray, float, np.ndarray, np.ndarray] | None = None
    reason = "outer iteration cap"
    success = False
    failed = False
    s_values = np.zeros(N + 1)
    G = np.zeros((w, N + 1))
    cost = np.inf

    for outer in range(1, al_opts.max_outer + 1):
        s_values = sampler.scaling_trajectory(xs)
        aug = AugmentedCost(problem.cost, basis, obstacles, s_values, al, dims)
        inner = ddp.solve(
            ddp.Problem(stepper=problem.stepper, cost=aug, x0=problem.x0,
                        u_init=us, limits=problem.limits),
            ddp_options)
        inner_total += inner.iterations
        xs, us = inner.xs, inner.us
        cost = _base_cost(problem, xs, us)
        G = _constraint_matrix(xs, basis, obstacles, s_values, dims)
        # the initial state is fixed: only slots 1..N count
        viol = float(np.maximum(G[:, 1:], 0.0).max(initial=0.0))
        history.append(viol)
        if best is None or viol < best[0]:
            best = (viol, xs.copy(), us.copy(), cost, s_values.copy(), G.copy())
        if viol < al_opts.tol_constraint and not inner.failed:
            success = True
            reason = "feasible"
            al, _ = al_update(al, G[:, 1:], al_opts.improvement, al_opts.beta,
                              al_opts.tol_constraint, al_opts.mu_cap)
            break
        al, capped = al_update(al, G[:, 1:], al_opts.improvement, al_opts.beta,
                               al_opts.tol_constraint, al_opts.mu_cap)
        if capped:
            failed = True
            reason = "penalty cap reached"
            break
    else:
        outer = al_opts.max_outer

    if not success and best is not None:
        _, xs, us, cost, s_values, G = best
        failed = True

    return ConstrainedResult(
        xs=xs, us=us, cost=cost, al=al, s_values=s_values, G=G,
        max_violation=float(np.maximum(G[:, 1:], 0.0).max(initial=0.0)),
        violation_history=history, outer_iterations=outer,
        inner_iterations=inner_total, success=success, failed=failed,
        reason=reason)


def _base_cost(problem: ddp.Problem, xs: np.ndarray, us: np.ndarray) -> float:
    J = 0.0
    for k in range(us.shape[0]):
        J += problem.cost.running(xs[k], us[k], k)
    return float(J + problem.cost.terminal(xs[-1], us.shape[0]))
