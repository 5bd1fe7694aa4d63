"""Orthogonal polynomial families, truncated multivariate bases, and Gaussian quadrature.

Families are normalized against *probability* densities (the weight integrates
to 1 over its support), so quadrature weights form a probability measure and
polynomial norms are plain second moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "PolyFamily",
    "BasisSet",
    "QuadratureRule",
    "HERMITE",
    "LEGENDRE",
    "family",
    "eval_univariate",
    "univariate_norm",
    "build_basis",
    "eval_multivariate",
    "basis_eval_matrix",
    "gauss_rule",
    "tensor_rule",
    "default_quadrature",
    "sample_xi",
]

MAX_BASIS_TERMS = 200_000


@dataclass(frozen=True)
class PolyFamily:
    """One univariate orthogonal family.

    ``recurrence(n)`` returns ``(a_n, b_n, c_n)`` for
    ``phi_{n+1}(z) = (a_n z + b_n) phi_n(z) - c_n phi_{n-1}(z)`` with
    ``phi_0 = 1``.  ``jacobi(n)`` returns ``(alpha_n, beta_sq_n)``, the monic
    three-term coefficients feeding the symmetric tridiagonal eigenproblem.
    ``norm_exact(n)`` is the exact rational second moment of ``phi_n``.
    """

    name: str
    recurrence: Callable[[int], tuple[float, float, float]]
    norm_exact: Callable[[int], "Fraction | int"]
    jacobi: Callable[[int], tuple[float, float]]
    sampler: Callable[[np.random.Generator, int], np.ndarray]

    def __repr__(self) -> str:
        return f"PolyFamily({self.name!r})"


HERMITE = PolyFamily(
    name="hermite",
    # phi_{n+1} = z phi_n - n phi_{n-1}, weight N(0, 1)
    recurrence=lambda n: (1.0, 0.0, float(n)),
    norm_exact=math.factorial,
    jacobi=lambda n: (0.0, float(n)),
    sampler=lambda rng, size: rng.standard_normal(size),
)

LEGENDRE = PolyFamily(
    name="legendre",
    # (n+1) phi_{n+1} = (2n+1) z phi_n - n phi_{n-1}, weight 1/2 on [-1, 1]
    recurrence=lambda n: ((2 * n + 1) / (n + 1), 0.0, n / (n + 1)),
    norm_exact=lambda n: Fraction(1, 2 * n + 1),
    jacobi=lambda n: (0.0, n * n / (4.0 * n * n - 1.0)),
    sampler=lambda rng, size: rng.uniform(-1.0, 1.0, size),
)

# Jacobi/Laguerre are recognized names without an implementation: the beta and
# gamma branches of the basis correspondence are reserved but not built.
_RESERVED = ("jacobi", "laguerre")
_FAMILIES = {"hermite": HERMITE, "legendre": LEGENDRE}


def family(name: str) -> PolyFamily:
    """Look up a family by name; reserved names raise NotImplementedError."""
    key = name.lower()
    if key in _FAMILIES:
        return _FAMILIES[key]
    if key in _RESERVED:
        raise NotImplementedError(f"polynomial family {name!r} is reserved but not implemented")
    raise ValueError(f"unknown polynomial family {name!r}")


def eval_univariate(fam: PolyFamily, degree: int, z):
    """Evaluate phi_degree at z (scalar or array) by the three-term recurrence."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    z = np.asarray(z, dtype=float)
    p_prev = np.zeros_like(z)
    p = np.ones_like(z)
    for n in range(degree):
        a, b, c = fam.recurrence(n)
        p, p_prev = (a * z + b) * p - c * p_prev, p
    return p if p.ndim else float(p)


def univariate_table(fam: PolyFamily, max_degree: int, z: np.ndarray) -> np.ndarray:
    """Table of phi_0..phi_max_degree at points z, shape (len(z), max_degree+1)."""
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        a, b, _ = fam.recurrence(0)
        out[..., 1] = (a * z + b)
    for n in range(1, max_degree):
        a, b, c = fam.recurrence(n)
        out[..., n + 1] = (a * z + b) * out[..., n] - c * out[..., n - 1]
    return out


def univariate_norm(fam: PolyFamily, degree: int) -> float:
    """Second moment <phi_n, phi_n> under the family's probability weight."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    return float(fam.norm_exact(degree))


@dataclass(frozen=True)
class BasisSet:
    """Truncated multivariate basis: all multi-indices of total degree <= order.

    ``indices`` are in graded order: total degree ascending, ties broken so
    that weight on earlier dimensions comes first ((1,0) before (0,1)).
    ``norms[j]`` is the product of univariate norms of index j's components.
    """

    dim: int
    order: int
    indices: tuple[tuple[int, ...], ...]
    families: tuple[PolyFamily, ...]
    norms: np.ndarray

    @property
    def count(self) -> int:
        """Number of basis terms, K + 1."""
        return len(self.indices)


def _graded_indices(dim: int, order: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    for total in range(order + 1):
        level = [
            idx
            for idx in _compositions(total, dim)
        ]
        out.extend(level)
    return out


def _compositions(total: int, dim: int) -> list[tuple[int, ...]]:
    """All d-tuples of non-negative ints summing to total, first dims heaviest."""
    if dim == 0:
        return [()] if total == 0 else []
    if dim == 1:
        return [(total,)]
    out = []
    for head in range(total, -1, -1):
        for rest in _compositions(total - head, dim - 1):
            out.append((head,) + rest)
    return out


def build_basis(families: Sequence[PolyFamily], order: int) -> BasisSet:
    """Construct the graded basis over the given per-dimension families."""
    dim = len(families)
    if order < 0:
        raise ValueError("order must be non-negative")
    if dim < 0:
        raise ValueError("dimension must be non-negative")
    count = math.comb(order + dim, dim)
    if count > MAX_BASIS_TERMS:
        raise ValueError(f"basis of {count} terms exceeds cap {MAX_BASIS_TERMS}")
    indices = _graded_indices(dim, order)
    norms = []
    for idx in indices:
        g = Fraction(1)
        for fam, deg in zip(families, idx):
            g *= Fraction(fam.norm_exact(deg))
        norms.append(float(g))
    return BasisSet(
        dim=dim,
        order=order,
        indices=tuple(indices),
        families=tuple(families),
        norms=np.asarray(norms),
    )


def eval_multivariate(basis: BasisSet, j: int, xi) -> float:
    """Value of basis term j at the point xi (length-dim vector)."""
    if not 0 <= j < basis.count:
        raise IndexError(f"basis index {j} out of range 0..{basis.count - 1}")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape[-1] != basis.dim:
        raise ValueError(f"expected point of dimension {basis.dim}, got {xi.shape[-1]}")
    val = 1.0
    for k, deg in enumerate(basis.indices[j]):
        val *= eval_univariate(basis.families[k], deg, xi[k])
    return float(val)


def basis_eval_matrix(basis: BasisSet, points: np.ndarray) -> np.ndarray:
    """All basis terms at all points: shape (npoints, count)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[1] != basis.dim:
        raise ValueError(f"expected points of dimension {basis.dim}, got {pts.shape[1]}")
    tables = [
        univariate_table(basis.families[k], basis.order, pts[:, k])
        for k in range(basis.dim)
    ]
    out = np.ones((pts.shape[0], basis.count))
    for j, idx in enumerate(basis.indices):
        for k, deg in enumerate(idx):
            if deg:
                out[:, j] *= tables[k][:, deg]
    return out


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor quadrature over the basis dimensions: probability weights."""

    dim: int
    nodes: np.ndarray   # (Q, dim)
    weights: np.ndarray  # (Q,)


def gauss_rule(fam: PolyFamily, q: int) -> tuple[np.ndarray, np.ndarray]:
    """q-node Gaussian rule from the eigendecomposition of the Jacobi matrix.

    Nodes are ascending; weights are positive and sum to 1.  Both implemented
    families have symmetric weights, so the rule is symmetrized explicitly to
    kill odd-moment roundoff.
    """
    if q < 1:
        raise ValueError("need at least one node")
    alpha = np.array([fam.jacobi(n)[0] for n in range(q)])
    beta = np.sqrt([fam.jacobi(n)[1] for n in range(1, q)])
    try:
        vals, vecs = eigh_tridiagonal(alpha, beta)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK is reliable here
        raise RuntimeError(f"Jacobi eigenproblem failed for {fam.name}, q={q}") from exc
    nodes = vals
    weights = vecs[0, :] ** 2
    if np.all(alpha == 0.0):
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = 0.5 * (weights + weights[::-1])
        if q % 2:
            nodes[q // 2] = 0.0
    weights = weights / weights.sum()
    return nodes, weights


def tensor_rule(rules: Sequence[tuple[np.ndarray, np.ndarray]]) -> QuadratureRule:
    """Cartesian product of univariate rules with product weights."""
    dim = len(rules)
    if dim == 0:
        return QuadratureRule(dim=0, nodes=np.zeros((1, 0)), weights=np.ones(1))
    node_axes = [np.asarray(r[0], dtype=float) for r in rules]
    weight_axes = [np.asarray(r[1], dtype=float) for r in rules]
    grids = np.meshgrid(*node_axes, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    w = weight_axes[0]
    for wk in weight_axes[1:]:
        w = np.outer(w, wk).ravel()
    return QuadratureRule(dim=dim, nodes=nodes, weights=w)


def default_quadrature(basis: BasisSet, points_per_dim: int | None = None) -> QuadratureRule:
    """Tensor rule matched to the basis; defaults to order + 2 nodes per dimension."""
    q = points_per_dim if points_per_dim is not None else basis.order + 2
    return tensor_rule([gauss_rule(fam, q) for fam in basis.families])


def sample_xi(basis: BasisSet, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw standard random vectors matching the basis families, shape (size, dim)."""
    out = np.empty((size, basis.dim))
    for k, fam in enumerate(basis.families):
        out[:, k] = fam.sampler(rng, size)
    return out
