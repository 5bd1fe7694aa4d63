"""Polynomial-chaos representation of uncertain states and Galerkin-projected dynamics.

An uncertain physical state x in R^n is carried as the flattened coefficient
vector X in R^{n(K+1)}, laid out state-major:

    X = (x_10, ..., x_1K, x_20, ..., x_2K, ..., x_n0, ..., x_nK)

so coefficient (i, 0) is the mean of state i and higher modes carry the
spread.  Projection integrals are evaluated on a fixed tensor quadrature whose
basis values and parameter realizations are precomputed once per model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import orthopoly
from .orthopoly import BasisSet, PolyFamily, QuadratureRule

__all__ = [
    "UncertainParam",
    "GpcModel",
    "GpcStepper",
    "expand_param",
    "lift_state",
    "mean",
    "covariance",
    "eval_realization",
    "galerkin_rhs",
    "galerkin_jacobian",
]


@dataclass(frozen=True)
class UncertainParam:
    """First-order expansion center + spread * xi_dim of one scalar parameter.

    Gaussian parameters read (center, spread) as (mu, sigma); uniform ones as
    (mu, half-width).
    """

    name: str
    family: PolyFamily
    center: float
    spread: float
    dim: int

    def realize(self, xi: np.ndarray) -> np.ndarray:
        """Parameter value(s) at standard random vector(s) xi, shape (..., d)."""
        return self.center + self.spread * np.asarray(xi)[..., self.dim]


def expand_param(fam: PolyFamily, center: float, spread: float, dim: int,
                 name: str = "param") -> UncertainParam:
    """Build a first-order parameter expansion in its assigned dimension."""
    if spread < 0:
        raise ValueError(f"parameter {name!r} has negative spread {spread}")
    return UncertainParam(name=name, family=fam, center=float(center),
                          spread=float(spread), dim=dim)


def lift_state(x: np.ndarray, truncation: int) -> np.ndarray:
    """Deterministic state -> coefficient vector: mean slots filled, higher modes zero."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((x.size, truncation + 1))
    out[:, 0] = x
    return out.ravel()


def mean(X: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Per-state mean: the j = 0 coefficients."""
    return np.asarray(X).reshape(-1, basis.count)[:, 0].copy()


def covariance(X: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Covariance from coefficients: sum_{j>=1} x_ij x_gj <Phi_j, Phi_j>."""
    C = np.asarray(X).reshape(-1, basis.count)[:, 1:]
    return (C * basis.norms[1:]) @ C.T


def eval_realization(X: np.ndarray, basis: BasisSet, xi: np.ndarray) -> np.ndarray:
    """Physical state sample(s) at outcome(s) xi; xi may be (d,) or (S, d)."""
    C = np.asarray(X).reshape(-1, basis.count)
    phi = orthopoly.basis_eval_matrix(basis, xi)
    vals = phi @ C.T
    return vals[0] if np.asarray(xi).ndim == 1 else vals


@dataclass
class GpcModel:
    """Dynamics model + basis + quadrature with projection tables baked in.

    Immutable after build(); rhs/jacobian calls are pure and share no state.
    """

    model: object
    basis: BasisSet
    quad: QuadratureRule
    params: tuple[UncertainParam, ...]
    phi: np.ndarray       # (Q, K+1) basis values at quadrature nodes
    phi_w: np.ndarray     # weights[:, None] * phi
    phi_pair: np.ndarray  # (Q, K+1, K+1) phi_w[:, j] * phi[:, h] projection tensor
    zeta: np.ndarray      # (Q, n_params) parameter realizations at nodes

    @classmethod
    def build(cls, model, params: list[UncertainParam], order: int,
              quad_points: int | None = None) -> "GpcModel":
        params = tuple(params)
        dims = sorted(p.dim for p in params)
        if dims != list(range(len(params))):
            raise ValueError("parameter dimensions must be a permutation of 0..d-1")
        by_dim = {p.dim: p for p in params}
        families = [by_dim[k].family for k in range(len(params))]
        basis = orthopoly.build_basis(families, order)
        quad = orthopoly.default_quadrature(basis, quad_points)
        phi = orthopoly.basis_eval_matrix(basis, quad.nodes)
        phi_w = quad.weights[:, None] * phi
        zeta = np.stack([p.realize(quad.nodes) for p in params], axis=1) \
            if params else np.zeros((quad.nodes.shape[0], 0))
        return cls(model=model, basis=basis, quad=quad, params=params,
                   phi=phi, phi_w=phi_w,
                   phi_pair=phi_w[:, :, None] * phi[:, None, :], zeta=zeta)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def dim(self) -> int:
        """Coefficient-vector length n(K+1)."""
        return self.model.n * self.basis.count

    def realizations(self, X: np.ndarray) -> np.ndarray:
        """Physical states at every quadrature node, shape (Q, n)."""
        C = np.asarray(X).reshape(self.n, self.basis.count)
        return self.phi @ C.T


def galerkin_rhs(gm: GpcModel, X: np.ndarray, u: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Coefficient time-derivative by quadrature projection of the dynamics.

    Xdot_ij = sum_q w_q f_i(x(xi_q), u; zeta(xi_q)) Phi_j(xi_q) / <Phi_j, Phi_j>
    """
    xr = gm.realizations(X)
    F = gm.model.f(xr, u, gm.zeta)
    return ((F.T @ gm.phi_w) / gm.basis.norms).ravel()


def galerkin_jacobian(gm: GpcModel, X: np.ndarray, u: np.ndarray,
                      t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Exact Jacobians of galerkin_rhs in the coefficient coordinates.

    Block entries are the projected model partials:
      dXdot_ij/dX_gh = sum_q w_q (df_i/dx_g) Phi_h Phi_j / <Phi_j, Phi_j>
      dXdot_ij/du_k  = sum_q w_q (df_i/du_k) Phi_j / <Phi_j, Phi_j>
    """
    xr = gm.realizations(X)
    Jx = gm.model.dfdx(xr, u, gm.zeta)   # (Q, n, n)
    Ju = gm.model.dfdu(xr, u, gm.zeta)   # (Q, n, m)
    k1 = gm.basis.count
    # contract the node axis by matrix product: (n*n, Q) @ (Q, (K+1)^2)
    A = np.tensordot(Jx, gm.phi_pair, axes=([0], [0]))   # (n, n, K+1, K+1) [i,g,j,h]
    A = A.transpose(0, 2, 1, 3) / gm.basis.norms[None, :, None, None]
    B = np.tensordot(Ju, gm.phi_w, axes=([0], [0]))      # (n, m, K+1) [i,k,j]
    B = B.transpose(0, 2, 1) / gm.basis.norms[None, :, None]
    nx = gm.n * k1
    return A.reshape(nx, nx), B.reshape(nx, gm.m)


@dataclass
class GpcStepper:
    """Explicit-Euler discretization of the projected dynamics for the solver."""

    gm: GpcModel
    dt: float

    @property
    def dim(self) -> int:
        return self.gm.dim

    @property
    def m(self) -> int:
        return self.gm.m

    def step(self, X: np.ndarray, u: np.ndarray, k: int = 0) -> np.ndarray:
        return X + self.dt * galerkin_rhs(self.gm, X, u)

    def jacobians(self, X: np.ndarray, u: np.ndarray, k: int = 0) -> tuple[np.ndarray, np.ndarray]:
        A, B = galerkin_jacobian(self.gm, X, u)
        Fx = self.dt * A
        Fx[np.diag_indices_from(Fx)] += 1.0
        return Fx, self.dt * B
