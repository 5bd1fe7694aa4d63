"""Discrete-time trajectory optimization by iterative LQR-style dynamic programming.

The backward pass uses first-order dynamics expansions (no dynamics Hessians)
and supports exact control limits through a projected-Newton box QP on the
control step, with feedback zeroed on clamped dimensions.  The forward pass is
a backtracking line search with Armijo acceptance against the quadratic-model
improvement, so accepted iterations never increase the cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .models import DynamicsError

__all__ = [
    "BoxLimits",
    "CostModel",
    "QuadExpansion",
    "Policy",
    "Problem",
    "DdpOptions",
    "DdpResult",
    "BoxQpResult",
    "expected_running_cost",
    "boxqp",
    "backward_pass",
    "forward_pass",
    "rollout",
    "solve",
]


@dataclass(frozen=True)
class BoxLimits:
    """Elementwise control bounds, enforced exactly."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ValueError("bound shapes differ")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def clip(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)


@dataclass
class CostModel:
    """Quadratic tracking cost with diagonal state weights.

    Running: 0.5 (x - x_d)' diag(state_diag) (x - x_d) + 0.5 u' R u.
    Terminal: 0.5 (x - x_d)' diag(terminal_diag) (x - x_d).
    ``x_desired`` is either a single target or one row per timestep
    (N + 1 rows, the last used by the terminal cost).
    """

    state_diag: np.ndarray
    R: np.ndarray
    terminal_diag: np.ndarray
    x_desired: np.ndarray

    def __post_init__(self):
        self.state_diag = np.asarray(self.state_diag, dtype=float)
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.terminal_diag = np.asarray(self.terminal_diag, dtype=float)
        self.x_desired = np.asarray(self.x_desired, dtype=float)
        self._lxx = np.diag(self.state_diag)
        self._pxx = np.diag(self.terminal_diag)

    @classmethod
    def expected(cls, basis, mean_weight, moment_weight, control_weight,
                 terminal_mean_weight, terminal_moment_weight, x_desired_mean):
        """Expectation cost over coefficient vectors.

        Per physical state i the diagonal block is
        diag(a_i0, a_i1 g_1, ..., a_iK g_K) with g_j the basis norms, so the
        quadratic form in coefficients equals the expected quadratic in the
        physical state (means weighted by a_i0, higher moments by a_ij g_j).
        """
        gam = basis.norms
        mean_weight = np.asarray(mean_weight, dtype=float)
        n = mean_weight.size

        def block_diag(mw, hw):
            hw = np.broadcast_to(np.asarray(hw, dtype=float), (n,))
            out = np.empty((n, basis.count))
            out[:, 0] = mw
            out[:, 1:] = hw[:, None] * gam[1:]
            return out.ravel()

        from .gpc import lift_state  # deferred to avoid an import cycle

        cw = np.asarray(control_weight, dtype=float)
        R = np.diag(cw) if cw.ndim == 1 else cw
        return cls(
            state_diag=block_diag(mean_weight, moment_weight),
            R=R,
            terminal_diag=block_diag(terminal_mean_weight, terminal_moment_weight),
            x_desired=lift_state(np.asarray(x_desired_mean, dtype=float), basis.count - 1),
        )

    def target(self, k) -> np.ndarray:
        if self.x_desired.ndim == 2:
            return self.x_desired[min(k, self.x_desired.shape[0] - 1)]
        return self.x_desired

    def running(self, x, u, k):
        dx = x - self.target(k)
        return 0.5 * dx @ (self.state_diag * dx) + 0.5 * u @ self.R @ u

    def running_derivs(self, x, u, k):
        dx = x - self.target(k)
        l = 0.5 * dx @ (self.state_diag * dx) + 0.5 * u @ self.R @ u
        lx = self.state_diag * dx
        lu = self.R @ u
        return l, lx, lu, self._lxx, self.R, None

    def terminal(self, x, k=None):
        dx = x - self.target(-1 if k is None else k)
        return 0.5 * dx @ (self.terminal_diag * dx)

    def terminal_derivs(self, x, k=None):
        dx = x - self.target(-1 if k is None else k)
        phi = 0.5 * dx @ (self.terminal_diag * dx)
        return phi, self.terminal_diag * dx, self._pxx


def expected_running_cost(cost, X, u, k: int = 0) -> float:
    """Expected stage cost of an uncertain state under a coefficient-space cost."""
    return float(cost.running(np.asarray(X, dtype=float), np.asarray(u, dtype=float), k))


class QuadExpansion(NamedTuple):
    """Stage quadratic model of the cost-to-go around the nominal pair."""

    Qx: np.ndarray
    Qu: np.ndarray
    Qxx: np.ndarray
    Quu: np.ndarray
    Qux: np.ndarray


@dataclass
class Policy:
    """Affine control update: du_k = feedforward[k] + feedback[k] @ dx_k."""

    feedforward: np.ndarray   # (N, m)
    feedback: np.ndarray      # (N, m, nx)
    dv1: float                # sum k' Qu
    dv2: float                # sum 0.5 k' Quu k

    @property
    def expected_improvement(self) -> float:
        """Predicted cost decrease for a full (alpha = 1) step."""
        return -(self.dv1 + self.dv2)

    def model_decrease(self, alpha: float) -> float:
        return -(alpha * self.dv1 + alpha * alpha * self.dv2)


@dataclass
class Problem:
    """One trajectory-optimization instance."""

    stepper: object                 # step(x, u, k), jacobians(x, u, k)
    cost: object                    # running_derivs / terminal_derivs interface
    x0: np.ndarray
    u_init: np.ndarray              # (N, m)
    limits: BoxLimits | None = None


@dataclass
class DdpOptions:
    max_iters: int = 200
    tol_cost: float = 1e-6
    tol_grad: float = 1e-6
    reg_init: float = 0.0
    reg_min: float = 1e-6       # first nonzero regularization after a failure
    reg_up: float = 10.0
    reg_down: float = 0.5
    reg_max: float = 1e8
    n_alphas: int = 11          # alpha = 2^0 .. 2^-10
    armijo: float = 1e-4


@dataclass
class DdpResult:
    xs: np.ndarray
    us: np.ndarray
    policy: Policy | None
    cost: float
    iterations: int
    converged: bool
    failed: bool
    reason: str
    grad_norm: float
    cost_history: list[float] = field(default_factory=list)


class BoxQpResult(NamedTuple):
    x: np.ndarray
    free: np.ndarray         # boolean mask of unclamped dimensions
    converged: bool
    iterations: int
    grad_norm: float


class _NotPositiveDefinite(Exception):
    def __init__(self, step: int):
        super().__init__(f"Quu not positive definite at step {step}")
        self.step = step


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import cho_solve
    return cho_solve((L, True), b)


def boxqp(H: np.ndarray, q: np.ndarray, lower: np.ndarray, upper: np.ndarray,
          init: np.ndarray | None = None, max_iters: int = 100,
          tol: float = 1e-10) -> BoxQpResult:
    """Projected-Newton minimization of 0.5 x'Hx + q'x over a box.

    At the solution, free dimensions have (near) zero gradient and clamped
    dimensions have a gradient pushing outside the box.
    """
    from scipy.linalg import cho_factor, cho_solve

    H = np.asarray(H, dtype=float)
    q = np.asarray(q, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    m = q.size
    x = np.clip(np.zeros(m) if init is None else np.asarray(init, dtype=float),
                lower, upper)
    if np.all(lower == upper):
        return BoxQpResult(x=lower.copy(), free=np.zeros(m, bool), converged=True,
                           iterations=0, grad_norm=0.0)

    def value(v):
        return 0.5 * v @ H @ v + q @ v

    fx = value(x)
    grad = H @ x + q
    free = np.ones(m, bool)
    for it in range(1, max_iters + 1):
        grad = H @ x + q
        at_lower = (x <= lower + 1e-12) & (grad > 0)
        at_upper = (x >= upper - 1e-12) & (grad < 0)
        free = ~(at_lower | at_upper)
        gnorm = np.linalg.norm(grad[free], np.inf) if free.any() else 0.0
        if gnorm < tol:
            return BoxQpResult(x=x, free=free, converged=True, iterations=it,
                               grad_norm=float(gnorm))
        # Newton jump on the free block, clamped block held at its bound
        xf = x[free]
        Hff = H[np.ix_(free, free)]
        rhs = q[free] + H[np.ix_(free, ~free)] @ x[~free]
        try:
            cf = cho_factor(Hff, lower=True)
        except np.linalg.LinAlgError:
            return BoxQpResult(x=x, free=free, converged=False, iterations=it,
                               grad_norm=float(gnorm))
        dx = np.zeros(m)
        dx[free] = -cho_solve(cf, rhs) - xf
        # projected backtracking
        alpha = 1.0
        improved = False
        for _ in range(20):
            xc = np.clip(x + alpha * dx, lower, upper)
            fc = value(xc)
            if fc <= fx - 1e-8 * abs(fx) or fc < fx:
                x, fx = xc, fc
                improved = True
                break
            alpha *= 0.5
        if not improved:
            return BoxQpResult(x=x, free=free, converged=True, iterations=it,
                               grad_norm=float(gnorm))
    grad = H @ x + q
    gnorm = float(np.linalg.norm(grad[free], np.inf)) if free.any() else 0.0
    return BoxQpResult(x=x, free=free, converged=False, iterations=max_iters,
                       grad_norm=gnorm)


def backward_pass(xs: np.ndarray, us: np.ndarray, fx: Sequence[np.ndarray],
                  fu: Sequence[np.ndarray], cost, limits: BoxLimits | None = None,
                  reg: float = 0.0) -> Policy:
    """Backward value recursion along the nominal trajectory.

    Raises _NotPositiveDefinite if the (regularized) control Hessian fails the
    Cholesky test at some step; the caller reacts by raising ``reg``.
    """
    from scipy.linalg import cho_factor, cho_solve

    N, m = us.shape
    nx = xs.shape[1]
    _, Vx, Vxx = cost.terminal_derivs(xs[N], N)
    kff = np.zeros((N, m))
    Kfb = np.zeros((N, m, nx))
    dv1 = dv2 = 0.0
    for k in range(N - 1, -1, -1):
        _, lx, lu, lxx, luu, lux = cost.running_derivs(xs[k], us[k], k)
        Fx, Fu = fx[k], fu[k]
        Qx = lx + Fx.T @ Vx
        Qu = lu + Fu.T @ Vx
        FuV = Fu.T @ Vxx
        Qxx = lxx + Fx.T @ Vxx @ Fx
        Quu = luu + FuV @ Fu
        Qux = FuV @ Fx
        if lux is not None:
            Qux = Qux + lux
        Quu_reg = Quu if reg == 0.0 else Quu + reg * np.eye(m)

        if limits is not None:
            lo = limits.lower - us[k]
            hi = limits.upper - us[k]
            try:
                cf = cho_factor(Quu_reg, lower=True)
            except np.linalg.LinAlgError:
                raise _NotPositiveDefinite(k)
            cand = -cho_solve(cf, Qu)
            if np.all(cand >= lo) and np.all(cand <= hi):
                du = cand
                K = -cho_solve(cf, Qux)
            else:
                res = boxqp(Quu_reg, Qu, lo, hi,
                            init=kff[k + 1] if k + 1 < N else None)
                du = res.x
                K = np.zeros((m, nx))
                if res.free.any():
                    fr = res.free
                    cff = cho_factor(Quu_reg[np.ix_(fr, fr)], lower=True)
                    K[fr] = -cho_solve(cff, Qux[fr])
        else:
            try:
                cf = cho_factor(Quu_reg, lower=True)
            except np.linalg.LinAlgError:
                raise _NotPositiveDefinite(k)
            du = -cho_solve(cf, Qu)
            K = -cho_solve(cf, Qux)

        kff[k] = du
        Kfb[k] = K
        dv1 += du @ Qu
        dv2 += 0.5 * du @ Quu @ du
        Vx = Qx + K.T @ Quu @ du + K.T @ Qu + Qux.T @ du
        Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
    return Policy(feedforward=kff, feedback=Kfb, dv1=float(dv1), dv2=float(dv2))


def rollout(stepper, cost, x0: np.ndarray, us: np.ndarray) -> tuple[np.ndarray, float]:
    """Open-loop rollout; returns the state trajectory and total cost."""
    N = us.shape[0]
    xs = np.empty((N + 1, x0.size))
    xs[0] = x0
    J = 0.0
    for k in range(N):
        J += cost.running(xs[k], us[k], k)
        xs[k + 1] = stepper.step(xs[k], us[k], k)
    J += cost.terminal(xs[N], N)
    return xs, float(J)


def forward_pass(stepper, cost, xs_nom: np.ndarray, us_nom: np.ndarray,
                 policy: Policy, alpha: float, limits: BoxLimits | None = None):
    """Closed-loop rollout of the policy at line-search scale alpha.

    Returns (xs, us, J) or None when the rollout produced a non-finite state
    or left the model's domain.
    """
    N, m = us_nom.shape
    xs = np.empty_like(xs_nom)
    us = np.empty_like(us_nom)
    xs[0] = xs_nom[0]
    J = 0.0
    for k in range(N):
        u = us_nom[k] + alpha * policy.feedforward[k] \
            + policy.feedback[k] @ (xs[k] - xs_nom[k])
        if limits is not None:
            u = limits.clip(u)
        us[k] = u
        J += cost.running(xs[k], u, k)
        try:
            xs[k + 1] = stepper.step(xs[k], u, k)
        except DynamicsError:
            return None
        if not np.all(np.isfinite(xs[k + 1])):
            return None
    J += cost.terminal(xs[N], N)
    if not np.isfinite(J):
        return None
    return xs, us, float(J)


def solve(problem: Problem, options: DdpOptions | None = None) -> DdpResult:
    """Iterate backward/forward passes to a local optimum.

    Terminates on small cost change, small control gradient, or the iteration
    cap; if no step is accepted at maximum regularization the best trajectory
    so far is returned with ``failed=True``.
    """
    opts = options or DdpOptions()
    limits = problem.limits
    us = np.asarray(problem.u_init, dtype=float).copy()
    if us.ndim == 1:
        us = us[:, None]
    if limits is not None and us.size:
        us = limits.clip(us)
    x0 = np.asarray(problem.x0, dtype=float)

    xs, J = rollout(problem.stepper, problem.cost, x0, us)
    if not np.isfinite(J):
        return DdpResult(xs=xs, us=us, policy=None, cost=float(J), iterations=0,
                         converged=False, failed=True, reason="non-finite initial rollout",
                         grad_norm=np.inf, cost_history=[float(J)])
    history = [J]
    N = us.shape[0]
    if N == 0:
        return DdpResult(xs=xs, us=us, policy=None, cost=J, iterations=0,
                         converged=True, failed=False, reason="empty horizon",
                         grad_norm=0.0, cost_history=history)

    reg = opts.reg_init
    policy = None
    grad_norm = np.inf
    alphas = [2.0 ** (-i) for i in range(opts.n_alphas)]

    for it in range(1, opts.max_iters + 1):
        fx = []
        fu = []
        for k in range(N):
            A, B = problem.stepper.jacobians(xs[k], us[k], k)
            fx.append(A)
            fu.append(B)

        while True:
            try:
                policy = backward_pass(xs, us, fx, fu, problem.cost, limits, reg)
                break
            except _NotPositiveDefinite as exc:
                reg = opts.reg_min if reg == 0.0 else reg * opts.reg_up
                if reg > opts.reg_max:
                    return DdpResult(xs=xs, us=us, policy=policy, cost=J,
                                     iterations=it, converged=False, failed=True,
                                     reason=str(exc), grad_norm=grad_norm,
                                     cost_history=history)

        grad_norm = float(np.max(np.abs(policy.feedforward)))
        if grad_norm < opts.tol_grad:
            return DdpResult(xs=xs, us=us, policy=policy, cost=J, iterations=it,
                             converged=True, failed=False, reason="gradient tolerance",
                             grad_norm=grad_norm, cost_history=history)

        accepted = None
        for alpha in alphas:
            trial = forward_pass(problem.stepper, problem.cost, xs, us, policy,
                                 alpha, limits)
            if trial is None:
                continue
            decrease = J - trial[2]
            expected = policy.model_decrease(alpha)
            if expected > 0:
                if decrease >= opts.armijo * expected:
                    accepted = trial
                    break
            elif decrease > 0:
                accepted = trial
                break

        if accepted is None:
            reg = opts.reg_min if reg == 0.0 else reg * opts.reg_up
            if reg > opts.reg_max:
                return DdpResult(xs=xs, us=us, policy=policy, cost=J, iterations=it,
                                 converged=False, failed=True,
                                 reason="no acceptable step", grad_norm=grad_norm,
                                 cost_history=history)
            continue

        xs, us, J_new = accepted
        improvement = J - J_new
        J = J_new
        history.append(J)
        reg = 0.0 if reg <= opts.reg_min else reg * opts.reg_down
        if improvement < opts.tol_cost:
            return DdpResult(xs=xs, us=us, policy=policy, cost=J, iterations=it,
                             converged=True, failed=False, reason="cost tolerance",
                             grad_norm=grad_norm, cost_history=history)

    return DdpResult(xs=xs, us=us, policy=policy, cost=J, iterations=opts.max_iters,
                     converged=False, failed=False, reason="iteration cap",
                     grad_norm=grad_norm, cost_history=history)
