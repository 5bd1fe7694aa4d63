"""Dynamics models: analytic partials, physical sanity, Euler stepping."""

import numpy as np
import pytest

from gpcmpc import models
from gpcmpc.models import DynamicsError, QuadrotorModel, UnicycleModel, euler_step


def fd_check(model, x, u, zeta, tol=1e-5):
    """Central finite differences of f against the analytic partials."""
    eps = 1e-6
    Jx = model.dfdx(x, u, zeta)
    Ju = model.dfdu(x, u, zeta)
    for i in range(model.n):
        d = np.zeros(model.n)
        d[i] = eps
        fd = (model.f(x + d, u, zeta) - model.f(x - d, u, zeta)) / (2 * eps)
        scale = max(1.0, np.abs(Jx[:, i]).max())
        assert np.abs(fd - Jx[:, i]).max() <= tol * scale, f"dfdx col {i}"
    for k in range(model.m):
        d = np.zeros(model.m)
        d[k] = eps
        fd = (model.f(x, u + d, zeta) - model.f(x, u - d, zeta)) / (2 * eps)
        scale = max(1.0, np.abs(Ju[:, k]).max())
        assert np.abs(fd - Ju[:, k]).max() <= tol * scale, f"dfdu col {k}"


class TestUnicycle:
    model = UnicycleModel()

    def test_straight_line(self):
        out = self.model.f(np.zeros(3), np.array([1.0, 1.0]), np.array([0.2, 0.2, 0.2]))
        np.testing.assert_allclose(out, [0.2, 0.0, 0.0])

    def test_spin_in_place(self):
        # vR = r, vL = -r: v = 0, omega = 2r / (2d) = r/d
        r, d = 0.3, 0.2
        out = self.model.f(np.zeros(3), np.array([1.0, -1.0]), np.array([d, r, r]))
        np.testing.assert_allclose(out, [0.0, 0.0, r / d])

    def test_partials_random_points(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.normal(size=3)
            u = rng.normal(scale=10, size=2)
            zeta = rng.uniform(0.1, 0.3, size=3)
            fd_check(self.model, x, u, zeta)

    def test_nonpositive_tread(self):
        with pytest.raises(DynamicsError):
            self.model.f(np.zeros(3), np.ones(2), np.array([0.0, 0.2, 0.2]))

    def test_radius_control_scale_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=3)
        u = rng.normal(scale=5, size=2)
        zeta = np.array([0.2, 0.25, 0.18])
        for factor in (2.0, 0.5, 8.0):
            scaled = zeta.copy()
            scaled[1:] *= factor
            np.testing.assert_allclose(
                self.model.f(x, u, zeta),
                self.model.f(x, u / factor, scaled), rtol=1e-14, atol=1e-14)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(2)
        xs = rng.normal(size=(16, 3))
        u = np.array([4.0, -1.0])
        zetas = rng.uniform(0.1, 0.3, size=(16, 3))
        batch = self.model.f(xs, u, zetas)
        for i in range(16):
            np.testing.assert_allclose(batch[i], self.model.f(xs[i], u, zetas[i]))


class TestQuadrotor:
    model = QuadrotorModel()
    zeta = np.array([1.14e-7, 2.98e-6])

    def test_hover_equilibrium(self):
        u = self.model.hover_control()
        out = self.model.f(np.zeros(12), u, self.zeta)
        assert np.abs(out).max() <= 1e-12

    def test_free_fall(self):
        out = self.model.f(np.zeros(12), np.zeros(4), self.zeta)
        np.testing.assert_allclose(out[8], -self.model.gravity)
        np.testing.assert_allclose(np.delete(out, 8), 0.0, atol=1e-15)

    def test_partials_random_points(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = rng.normal(scale=0.8, size=12)
            x[3:6] = rng.uniform(-1.0, 1.0, 3)
            u = rng.uniform(0.0, 3.0, 4)
            zeta = np.array([rng.uniform(0.76e-7, 1.52e-7),
                             rng.uniform(1.99e-6, 3.97e-6)])
            fd_check(self.model, x, u, zeta)

    def test_hover_linearization_structure(self):
        A = self.model.dfdx(np.zeros(12), self.model.hover_control(), self.zeta)
        np.testing.assert_allclose(A[0:3, 0:6], 0.0)
        np.testing.assert_allclose(A[0:3, 6:9], np.eye(3))
        np.testing.assert_allclose(A[0:3, 9:12], 0.0)

    def test_pitch_singularity_flagged(self):
        x = np.zeros(12)
        x[4] = 1.55
        with pytest.raises(DynamicsError):
            self.model.f(x, self.model.hover_control(), self.zeta)

    def test_thrust_is_force_sum(self):
        # vertical acceleration at level attitude responds to total force only
        u = np.array([0.5, 1.5, 0.25, 1.75])
        out = self.model.f(np.zeros(12), u, self.zeta)
        expect = u.sum() / self.model.mass - self.model.gravity
        np.testing.assert_allclose(out[8], expect)


class TestEulerStep:
    def test_unicycle_single_step(self):
        model = UnicycleModel()
        zeta = np.array([0.2, 0.2, 0.2])
        # v = 1 from u = (5, 5) at radius 0.2
        x1 = euler_step(lambda x, u: model.f(x, u, zeta), np.zeros(3),
                        np.array([5.0, 5.0]), 0.02)
        np.testing.assert_allclose(x1, [0.02, 0.0, 0.0])

    def test_zero_rhs_identity(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(
            euler_step(lambda x, u: np.zeros(2), x, None, 0.1), x)

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            euler_step(lambda x, u: x, np.ones(2), None, 0.0)

    def test_first_order_convergence(self):
        # halving dt halves the global error against the exact exponential
        A = np.array([[-0.5, 0.2], [0.1, -0.8]])
        x0 = np.array([1.0, -1.0])
        from scipy.linalg import expm
        exact = expm(A) @ x0

        def final_error(dt):
            x = x0.copy()
            for _ in range(int(round(1.0 / dt))):
                x = euler_step(lambda x, u: A @ x, x, None, dt)
            return np.linalg.norm(x - exact)

        e1, e2 = final_error(0.01), final_error(0.005)
        assert e1 / e2 == pytest.approx(2.0, rel=0.1)
