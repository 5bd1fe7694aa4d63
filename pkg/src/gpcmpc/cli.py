"""Command-line entry points: solve / mpc / mc / validate / export-plot."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import constraints, ddp, gpc, models, orthopoly, runtime
from .runtime import ConfigError

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(args) -> int:
    sc = runtime.load_scenario(args.config)
    out = _outdir(args)
    t0 = time.perf_counter()
    res = runtime.run_open_loop(sc)
    wall = time.perf_counter() - t0
    runtime.write_trajectory_csv(out / "trajectory.csv", res.means,
                                 res.covariances, res.us, sc.dt)
    runtime.write_covariance_csv(out / "covariance.csv", res, sc)
    runtime.write_json(out / "summary.json", {
        "scenario": sc.name,
        "final_cost": float(res.cost),
        "outer_iterations": res.outer_iterations,
        "inner_iterations": res.inner_iterations,
        "max_violation": float(max(res.violation_history[-1:] or [0.0])),
        "converged": bool(res.success),
        "wall_time_s": wall,
    })
    return EXIT_OK if res.success else EXIT_SOLVER


def cmd_mpc(args) -> int:
    sc = runtime.load_scenario(args.config)
    out = _outdir(args)
    seed = sc.plant_seed if args.seed is None else args.seed
    t0 = time.perf_counter()
    log = runtime.run_mpc(sc, plant_seed=seed)
    wall = time.perf_counter() - t0
    rt = runtime.EpisodeRuntime.build(sc)
    n = rt.gm.n
    means = np.asarray([c.plant_state for c in log.cycles])
    means = np.vstack([sc.initial_state[None, :], means])
    covs = np.zeros((means.shape[0], n, n))
    dims = list(sc.chance.position_dims)
    for c in log.cycles:
        covs[c.step + 1][np.ix_(dims, dims)] = c.predicted_cov
    us = np.asarray([c.applied_control for c in log.cycles])
    runtime.write_trajectory_csv(out / "trajectory.csv", means, covs, us, sc.dt)
    fallbacks = sum(c.fallback for c in log.cycles)
    runtime.write_json(out / "summary.json", {
        "scenario": sc.name,
        "plant_seed": seed,
        "true_parameters": [float(z) for z in log.zeta],
        "final_state": [float(v) for v in log.plant_states[-1]],
        "max_violation": float(max(c.max_violation for c in log.cycles)),
        "fallback_cycles": int(fallbacks),
        "wall_time_s": wall,
    })
    return EXIT_OK if fallbacks == 0 else EXIT_SOLVER


def cmd_mc(args) -> int:
    sc = runtime.load_scenario(args.config)
    out = _outdir(args)
    report = runtime.monte_carlo(sc, args.mode, args.realizations,
                                 base_seed=args.seed)
    payload = report.to_dict()
    payload["scenario"] = sc.name
    runtime.write_json(out / "report.json", payload)
    runtime.write_json(out / "timing.json", {"wall_time_s": report.wall_time})
    return EXIT_OK


def cmd_export_plot(args) -> int:
    sc = runtime.load_scenario(args.config)
    out = _outdir(args)
    res = runtime.run_open_loop(sc)
    dims = list(sc.chance.position_dims)
    runtime.write_trajectory_csv(out / "plot_mean.csv", res.means,
                                 res.covariances, res.us, sc.dt)
    import csv
    with open(out / "plot_ellipse.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time"] + [f"c_{i}" for i in range(len(dims))] + ["radius"])
        for k in range(res.s_values.shape[0]):
            cov = res.covariances[k][np.ix_(dims, dims)]
            lam = float(np.linalg.eigvalsh(cov)[-1])
            r = float(np.sqrt(max(res.s_values[k] * lam, 0.0)))
            row = [str(k), repr(k * sc.dt)]
            row += [repr(float(v)) for v in res.means[k][dims]]
            row.append(repr(r))
            w.writerow(row)
    n_real = args.realizations or 20
    streams = np.random.SeedSequence(sc.mc_seed if args.seed is None else args.seed) \
        .spawn(n_real)
    with open(out / "plot_realizations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization", "step", "time"]
                   + [f"x_{i}" for i in range(res.means.shape[1])])
        for r, stream in enumerate(streams):
            plant = runtime.PlantSim.sample(sc, np.random.default_rng(stream))
            for u in res.us:
                plant.step(u)
            for k, x in enumerate(plant.states):
                w.writerow([str(r), str(k), repr(k * sc.dt)]
                           + [repr(float(v)) for v in x])
    return EXIT_OK


def _check(name: str, ok: bool, failures: list) -> None:
    print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if not ok:
        failures.append(name)


def cmd_validate(args) -> int:
    """Quick self-checks of the numerical kernels."""
    failures: list = []
    rng = np.random.default_rng(0)

    # quadrature exactness against closed-form moments
    ok = True
    for fam, moment in [
        (orthopoly.HERMITE,
         lambda p: 0.0 if p % 2 else float(np.prod(np.arange(p - 1, 0, -2)))),
        (orthopoly.LEGENDRE, lambda p: 0.0 if p % 2 else 1.0 / (p + 1)),
    ]:
        for q in range(1, 9):
            nodes, weights = orthopoly.gauss_rule(fam, q)
            for p in range(2 * q):
                err = abs(weights @ nodes**p - moment(p))
                ok &= err <= 1e-11 * max(1.0, abs(moment(p)))
    _check("quadrature moment exactness", ok, failures)

    # orthogonality of a mixed multivariate basis
    basis = orthopoly.build_basis([orthopoly.HERMITE, orthopoly.LEGENDRE], 3)
    rule = orthopoly.default_quadrature(basis, 4)
    phi = orthopoly.basis_eval_matrix(basis, rule.nodes)
    gram = phi.T @ (rule.weights[:, None] * phi)
    _check("basis orthogonality",
           bool(np.max(np.abs(gram - np.diag(basis.norms))) < 1e-10), failures)

    # Riccati equivalence on random linear instances
    from .ddp import BoxLimits, CostModel, DdpOptions, Problem, solve

    class _Lin:
        def __init__(self, A, B):
            self.A, self.B = A, B

        def step(self, x, u, k):
            return self.A @ x + self.B @ u

        def jacobians(self, x, u, k):
            return self.A, self.B

    ok = True
    for _ in range(3):
        n, m, N = 6, 2, 20
        A = rng.normal(size=(n, n))
        A *= 0.9 / max(abs(np.linalg.eigvals(A)))
        B = rng.normal(size=(n, m))
        Qd = rng.uniform(0.5, 2.0, n)
        R = np.diag(rng.uniform(0.5, 2.0, m))
        Qf = rng.uniform(1.0, 4.0, n)
        x0 = rng.normal(size=n)
        P = np.diag(Qf)
        for _ in range(N):
            H = R + B.T @ P @ B
            K = np.linalg.solve(H, B.T @ P @ A)
            P = np.diag(Qd) + A.T @ P @ (A - B @ K)
        Jstar = 0.5 * x0 @ P @ x0
        cost = CostModel(state_diag=Qd, R=R, terminal_diag=Qf, x_desired=np.zeros(n))
        res = solve(Problem(stepper=_Lin(A, B), cost=cost, x0=x0,
                            u_init=np.zeros((N, m))), DdpOptions())
        ok &= abs(res.cost - Jstar) <= 1e-7 * max(1.0, abs(Jstar))
    _check("discrete Riccati equivalence", ok, failures)

    # gradient checks: projected Jacobian and constraint gradient
    model = models.UnicycleModel()
    params = [gpc.expand_param(orthopoly.HERMITE, 0.2, 0.04, d, n)
              for d, n in enumerate(model.param_names)]
    gm = gpc.GpcModel.build(model, params, order=2)
    X = rng.normal(scale=0.3, size=gm.dim)
    u = rng.normal(size=2)
    Amat, Bmat = gpc.galerkin_jacobian(gm, X, u)
    eps = 1e-6
    ok = True
    for idx in rng.choice(gm.dim, 8, replace=False):
        dX = np.zeros(gm.dim)
        dX[idx] = eps
        fd = (gpc.galerkin_rhs(gm, X + dX, u) - gpc.galerkin_rhs(gm, X - dX, u)) / (2 * eps)
        ok &= np.max(np.abs(fd - Amat[:, idx])) < 1e-5
    obs = constraints.CircleObstacle(center=np.array([0.5, 0.4]), radius=0.3)
    ev = constraints.obstacle_constraint(X, gm.basis, obs, s=5.0)
    for idx in rng.choice(gm.dim, 8, replace=False):
        dX = np.zeros(gm.dim)
        dX[idx] = eps
        fd = (constraints.obstacle_constraint(X + dX, gm.basis, obs, 5.0).value
              - constraints.obstacle_constraint(X - dX, gm.basis, obs, 5.0).value) / (2 * eps)
        ok &= abs(fd - ev.grad[idx]) < 1e-5
    _check("analytic gradients", ok, failures)

    return EXIT_OK if not failures else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpcmpc",
        description="Chance-constrained trajectory optimization under "
                    "parametric uncertainty")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("solve", help="single full-horizon constrained solve")
    add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("mpc", help="one receding-horizon episode")
    add_common(p)
    p.set_defaults(func=cmd_mpc)

    p = sub.add_parser("mc", help="Monte Carlo campaign")
    add_common(p)
    p.add_argument("--mode", choices=runtime.MC_MODES, default="mpc_gpc")
    p.add_argument("--realizations", type=int, default=100)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("validate", help="run the numerical self-checks")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export-plot", help="emit plot-ready CSV files")
    add_common(p)
    p.add_argument("--realizations", type=int, default=20)
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
