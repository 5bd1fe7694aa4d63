"""Continuous-time dynamics with analytic partials: wheeled robot and quadrotor.

All model callables are batched on the leading axis: states ``(B, n)``,
parameter realizations ``(B, p)``, a single deterministic control ``(m,)``.
Unbatched ``(n,)`` inputs are accepted and returned unbatched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["DynamicsError", "UnicycleModel", "QuadrotorModel", "euler_step"]


class DynamicsError(RuntimeError):
    """Model evaluated outside its physical domain."""


def _batched(x, zeta):
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if zeta.ndim == 1:
        zeta = np.broadcast_to(zeta, (x.shape[0], zeta.shape[0]))
    return x, zeta, squeeze


@dataclass(frozen=True)
class UnicycleModel:
    """Differential wheeled robot: state (x, y, heading), controls are the
    two wheel angular rates.  Parameters: tread and the two wheel radii."""

    n: int = 3
    m: int = 2
    param_names: tuple[str, ...] = ("tread", "radius_right", "radius_left")

    def _velocities(self, u, zeta):
        d, rr, rl = zeta[..., 0], zeta[..., 1], zeta[..., 2]
        if np.any(d <= 0):
            raise DynamicsError("tread must be positive")
        vr = rr * u[0]
        vl = rl * u[1]
        return 0.5 * (vr + vl), (vr - vl) / (2.0 * d)

    def f(self, x, u, zeta):
        x, zeta, squeeze = _batched(x, zeta)
        v, w = self._velocities(u, zeta)
        th = x[:, 2]
        out = np.stack([v * np.cos(th), v * np.sin(th), w], axis=-1)
        return out[0] if squeeze else out

    def dfdx(self, x, u, zeta):
        x, zeta, squeeze = _batched(x, zeta)
        v, _ = self._velocities(u, zeta)
        th = x[:, 2]
        J = np.zeros((x.shape[0], 3, 3))
        J[:, 0, 2] = -v * np.sin(th)
        J[:, 1, 2] = v * np.cos(th)
        return J[0] if squeeze else J

    def dfdu(self, x, u, zeta):
        x, zeta, squeeze = _batched(x, zeta)
        d, rr, rl = zeta[..., 0], zeta[..., 1], zeta[..., 2]
        th = x[:, 2]
        J = np.zeros((x.shape[0], 3, 2))
        J[:, 0, 0] = 0.5 * rr * np.cos(th)
        J[:, 0, 1] = 0.5 * rl * np.cos(th)
        J[:, 1, 0] = 0.5 * rr * np.sin(th)
        J[:, 1, 1] = 0.5 * rl * np.sin(th)
        J[:, 2, 0] = rr / (2.0 * d)
        J[:, 2, 1] = -rl / (2.0 * d)
        return J[0] if squeeze else J


# Pitch guard: tan/sec blow up at +-pi/2; flag well before that.
_PITCH_LIMIT = 1.48


@dataclass(frozen=True)
class QuadrotorModel:
    """Rigid-body quadrotor, 12 states, Z-Y-X Euler angles, body rates.

    State: (x, y, z, roll, pitch, yaw, vx, vy, vz, p, q, r).
    Controls are the four rotor forces in newtons; total thrust is their sum,
    roll/pitch torques come from force differentials across the arms, yaw
    torque is the drag/lift force ratio times the alternating force sum, and
    translation sees linear drag -drag_coeff * velocity.
    """

    mass: float = 0.468
    arm: float = 0.225
    inertia: tuple[float, float, float] = (4.856e-3, 4.856e-3, 8.801e-3)
    gravity: float = 9.81
    n: int = 12
    m: int = 4
    param_names: tuple[str, ...] = ("drag_coeff", "lift_coeff")

    def _check(self, pitch):
        if np.any(np.abs(pitch) > _PITCH_LIMIT):
            raise DynamicsError("pitch angle too close to the Euler singularity")

    def f(self, x, u, zeta):
        x, zeta, squeeze = _batched(x, zeta)
        u = np.asarray(u, dtype=float)
        kd, kl = zeta[..., 0], zeta[..., 1]
        phi, th, psi = x[:, 3], x[:, 4], x[:, 5]
        self._check(th)
        vel = x[:, 6:9]
        p, q, r = x[:, 9], x[:, 10], x[:, 11]
        ixx, iyy, izz = self.inertia

        sph, cph = np.sin(phi), np.cos(phi)
        sth, cth = np.sin(th), np.cos(th)
        sps, cps = np.sin(psi), np.cos(psi)
        tth = sth / cth

        thrust = u.sum()
        tau_roll = self.arm * (u[3] - u[1])
        tau_pitch = self.arm * (u[2] - u[0])
        tau_yaw = (kd / kl) * (-u[0] + u[1] - u[2] + u[3])

        out = np.empty_like(x)
        out[:, 0:3] = vel
        out[:, 3] = p + sph * tth * q + cph * tth * r
        out[:, 4] = cph * q - sph * r
        out[:, 5] = (sph * q + cph * r) / cth
        # body-z thrust direction in world frame
        out[:, 6] = (thrust / self.mass) * (cph * sth * cps + sph * sps)
        out[:, 7] = (thrust / self.mass) * (cph * sth * sps - sph * cps)
        out[:, 8] = (thrust / self.mass) * (cph * cth) - self.gravity
        out[:, 6:9] -= (kd / self.mass)[:, None] * vel
        out[:, 9] = (tau_roll - q * r * (izz - iyy)) / ixx
        out[:, 10] = (tau_pitch - p * r * (ixx - izz)) / iyy
        out[:, 11] = (tau_yaw - p * q * (iyy - ixx)) / izz
        return out[0] if squeeze else out

    def dfdx(self, x, u, zeta):
        x, zeta, squeeze = _batched(x, zeta)
        u = np.asarray(u, dtype=float)
        kd = zeta[..., 0]
        phi, th, psi = x[:, 3], x[:, 4], x[:, 5]
        self._check(th)
        p, q, r = x[:, 9], x[:, 10], x[:, 11]
        ixx, iyy, izz = self.inertia

        sph, cph = np.sin(phi), np.cos(phi)
        sth, cth = np.sin(th), np.cos(th)
        sps, cps = np.sin(psi), np.cos(psi)
        tth = sth / cth
        sec2 = 1.0 / cth**2

        thrust = u.sum()
        tm = thrust / self.mass
        B = x.shape[0]
        J = np.zeros((B, 12, 12))

        # position rows
        J[:, 0, 6] = J[:, 1, 7] = J[:, 2, 8] = 1.0

        # Euler kinematics rows
        J[:, 3, 3] = cph * tth * q - sph * tth * r
        J[:, 3, 4] = sec2 * (sph * q + cph * r)
        J[:, 3, 9] = 1.0
        J[:, 3, 10] = sph * tth
        J[:, 3, 11] = cph * tth
        J[:, 4, 3] = -sph * q - cph * r
        J[:, 4, 10] = cph
        J[:, 4, 11] = -sph
        J[:, 5, 3] = (cph * q - sph * r) / cth
        J[:, 5, 4] = (sph * q + cph * r) * sth * sec2
        J[:, 5, 10] = sph / cth
        J[:, 5, 11] = cph / cth

        # translational rows: thrust direction partials, then drag
        J[:, 6, 3] = tm * (-sph * sth * cps + cph * sps)
        J[:, 6, 4] = tm * (cph * cth * cps)
        J[:, 6, 5] = tm * (-cph * sth * sps + sph * cps)
        J[:, 7, 3] = tm * (-sph * sth * sps - cph * cps)
        J[:, 7, 4] = tm * (cph * cth * sps)
        J[:, 7, 5] = tm * (cph * sth * cps + sph * sps)
        J[:, 8, 3] = tm * (-sph * cth)
        J[:, 8, 4] = tm * (-cph * sth)
        for i in range(3):
            J[:, 6 + i, 6 + i] = -kd / self.mass

        # body-rate rows
        J[:, 9, 10] = -r * (izz - iyy) / ixx
        J[:, 9, 11] = -q * (izz - iyy) / ixx
        J[:, 10, 9] = -r * (ixx - izz) / iyy
        J[:, 10, 11] = -p * (ixx - izz) / iyy
        J[:, 11, 9] = -q * (iyy - ixx) / izz
        J[:, 11, 10] = -p * (iyy - ixx) / izz
        return J[0] if squeeze else J

    def dfdu(self, x, u, zeta):
        x, zeta, squeeze = _batched(x, zeta)
        kd, kl = zeta[..., 0], zeta[..., 1]
        phi, th, psi = x[:, 3], x[:, 4], x[:, 5]
        self._check(th)
        ixx, iyy, izz = self.inertia

        sph, cph = np.sin(phi), np.cos(phi)
        sth, cth = np.sin(th), np.cos(th)
        sps, cps = np.sin(psi), np.cos(psi)

        B = x.shape[0]
        J = np.zeros((B, 12, 4))
        r3 = np.stack([
            cph * sth * cps + sph * sps,
            cph * sth * sps - sph * cps,
            cph * cth,
        ], axis=-1)
        J[:, 6:9, :] = r3[:, :, None] / self.mass
        J[:, 9, 1] = -self.arm / ixx
        J[:, 9, 3] = self.arm / ixx
        J[:, 10, 0] = -self.arm / iyy
        J[:, 10, 2] = self.arm / iyy
        ratio = kd / kl
        J[:, 11, 0] = -ratio / izz
        J[:, 11, 1] = ratio / izz
        J[:, 11, 2] = -ratio / izz
        J[:, 11, 3] = ratio / izz
        return J[0] if squeeze else J

    def hover_control(self) -> np.ndarray:
        """Equal rotor forces balancing gravity."""
        return np.full(4, self.mass * self.gravity / 4.0)


def euler_step(rhs, x, u, dt: float):
    """One explicit Euler step of xdot = rhs(x, u)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.asarray(x) + dt * rhs(x, u)
