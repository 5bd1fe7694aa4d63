"""Polynomial families, basis construction, and quadrature rules."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpcmpc import orthopoly as op


def gaussian_moment(p: int) -> float:
    """E[z^p] for z ~ N(0,1): 0 odd, (p-1)!! even."""
    if p % 2:
        return 0.0
    return float(np.prod(np.arange(p - 1, 0, -2))) if p else 1.0


def uniform_moment(p: int) -> float:
    """E[z^p] for z ~ U(-1,1): 0 odd, 1/(p+1) even."""
    return 0.0 if p % 2 else 1.0 / (p + 1)


class TestUnivariate:
    def test_hermite_phi2_at_one(self):
        assert op.eval_univariate(op.HERMITE, 2, 1.0) == pytest.approx(0.0)

    def test_legendre_phi2_at_one(self):
        assert op.eval_univariate(op.LEGENDRE, 2, 1.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("fam", [op.HERMITE, op.LEGENDRE])
    def test_degree_zero_is_one(self, fam):
        for z in [-2.0, 0.0, 0.37, 5.0]:
            assert op.eval_univariate(fam, 0, z) == 1.0

    def test_hermite_first_few(self):
        z = np.linspace(-3, 3, 11)
        np.testing.assert_allclose(op.eval_univariate(op.HERMITE, 1, z), z)
        np.testing.assert_allclose(op.eval_univariate(op.HERMITE, 2, z), z**2 - 1)
        np.testing.assert_allclose(op.eval_univariate(op.HERMITE, 3, z), z**3 - 3 * z)

    def test_legendre_first_few(self):
        z = np.linspace(-1, 1, 11)
        np.testing.assert_allclose(op.eval_univariate(op.LEGENDRE, 2, z),
                                   1.5 * z**2 - 0.5)

    def test_norms(self):
        assert op.univariate_norm(op.HERMITE, 3) == 6.0
        assert op.univariate_norm(op.LEGENDRE, 1) == pytest.approx(1 / 3)
        assert op.univariate_norm(op.HERMITE, 0) == 1.0
        assert op.univariate_norm(op.LEGENDRE, 0) == 1.0

    def test_table_matches_single_eval(self):
        z = np.linspace(-2, 2, 7)
        table = op.univariate_table(op.LEGENDRE, 5, z)
        for n in range(6):
            np.testing.assert_allclose(table[:, n], op.eval_univariate(op.LEGENDRE, n, z))

    def test_reserved_families(self):
        with pytest.raises(NotImplementedError):
            op.family("jacobi")
        with pytest.raises(NotImplementedError):
            op.family("laguerre")
        with pytest.raises(ValueError):
            op.family("chebyshev")
        assert op.family("hermite") is op.HERMITE


class TestBasis:
    def test_count_d3_r2(self):
        basis = op.build_basis([op.HERMITE] * 3, 2)
        assert basis.count == 10

    def test_single_constant_term(self):
        basis = op.build_basis([op.HERMITE], 0)
        assert basis.count == 1
        assert basis.indices == ((0,),)
        assert basis.norms[0] == 1.0

    def test_graded_order_d2_r2(self):
        basis = op.build_basis([op.HERMITE] * 2, 2)
        assert basis.indices == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))

    @pytest.mark.parametrize("d", range(1, 6))
    @pytest.mark.parametrize("r", range(5))
    def test_count_closed_form(self, d, r):
        basis = op.build_basis([op.LEGENDRE] * d, r)
        assert basis.count == math.comb(r + d, d)
        assert basis.indices[0] == (0,) * d
        assert basis.norms[0] == 1.0

    def test_norm_products(self):
        basis = op.build_basis([op.HERMITE, op.LEGENDRE], 3)
        j = basis.indices.index((2, 1))
        assert basis.norms[j] == pytest.approx(2.0 * (1 / 3))

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            op.build_basis([op.HERMITE], -1)
        with pytest.raises(ValueError):
            op.build_basis([op.HERMITE] * 30, 10)

    def test_eval_multivariate(self):
        basis = op.build_basis([op.HERMITE] * 2, 2)
        assert op.eval_multivariate(basis, 0, [0.3, -1.2]) == 1.0
        j = basis.indices.index((1, 1))
        assert op.eval_multivariate(basis, j, [2.0, 3.0]) == pytest.approx(6.0)
        with pytest.raises(IndexError):
            op.eval_multivariate(basis, basis.count, [0.0, 0.0])

    def test_eval_multivariate_legendre(self):
        basis = op.build_basis([op.LEGENDRE] * 2, 2)
        j = basis.indices.index((2, 0))
        assert op.eval_multivariate(basis, j, [1.0, 0.5]) == pytest.approx(1.0)

    def test_eval_matrix_consistency(self):
        basis = op.build_basis([op.HERMITE, op.LEGENDRE], 3)
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(20, 2))
        mat = op.basis_eval_matrix(basis, pts)
        for j in range(basis.count):
            got = [op.eval_multivariate(basis, j, p) for p in pts]
            np.testing.assert_allclose(mat[:, j], got, rtol=1e-12, atol=1e-12)


class TestQuadrature:
    def test_hermite_one_node(self):
        nodes, weights = op.gauss_rule(op.HERMITE, 1)
        np.testing.assert_allclose(nodes, [0.0])
        np.testing.assert_allclose(weights, [1.0])

    def test_hermite_two_nodes(self):
        nodes, weights = op.gauss_rule(op.HERMITE, 2)
        np.testing.assert_allclose(nodes, [-1.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(weights, [0.5, 0.5], atol=1e-14)
        # cross-check: exact integration of z^2 against N(0,1)
        assert weights @ nodes**2 == pytest.approx(1.0, abs=1e-14)

    def test_legendre_two_nodes(self):
        nodes, weights = op.gauss_rule(op.LEGENDRE, 2)
        np.testing.assert_allclose(nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-14)
        np.testing.assert_allclose(weights, [0.5, 0.5], atol=1e-14)

    @pytest.mark.parametrize("fam,moment", [(op.HERMITE, gaussian_moment),
                                            (op.LEGENDRE, uniform_moment)])
    @pytest.mark.parametrize("q", range(1, 9))
    def test_exactness(self, fam, moment, q):
        # tolerance is scaled by the integrand's absolute mass: the dot
        # product itself rounds at eps * sum(w |z|^p), which for high odd
        # Gaussian moments exceeds a bare 1e-11
        nodes, weights = op.gauss_rule(fam, q)
        for p in range(2 * q):
            exact = moment(p)
            scale = max(1.0, float(weights @ np.abs(nodes) ** p))
            err = abs(weights @ nodes**p - exact)
            assert err <= 1e-11 * scale, (fam.name, q, p)

    @pytest.mark.parametrize("fam", [op.HERMITE, op.LEGENDRE])
    @pytest.mark.parametrize("q", range(1, 13))
    def test_weights_positive_normalized(self, fam, q):
        _, weights = op.gauss_rule(fam, q)
        assert np.all(weights > 0)
        assert abs(weights.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize("d", [1, 2, 3])
    @pytest.mark.parametrize("r", [1, 2, 3])
    def test_orthogonality(self, d, r):
        # q = r + 1 nodes integrate products Phi_m Phi_n exactly
        basis = op.build_basis([op.HERMITE] * d, r)
        rule = op.default_quadrature(basis, r + 1)
        phi = op.basis_eval_matrix(basis, rule.nodes)
        gram = phi.T @ (rule.weights[:, None] * phi)
        assert np.max(np.abs(gram - np.diag(basis.norms))) < 1e-10

    def test_orthogonality_mixed_families(self):
        basis = op.build_basis([op.HERMITE, op.LEGENDRE, op.HERMITE], 3)
        rule = op.default_quadrature(basis, 4)
        phi = op.basis_eval_matrix(basis, rule.nodes)
        gram = phi.T @ (rule.weights[:, None] * phi)
        assert np.max(np.abs(gram - np.diag(basis.norms))) < 1e-10

    def test_tensor_product_two_dims(self):
        rule = op.tensor_rule([op.gauss_rule(op.HERMITE, 2)] * 2)
        expect = {(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)}
        assert {tuple(n) for n in rule.nodes} == expect
        np.testing.assert_allclose(rule.weights, 0.25)

    def test_tensor_single_dim_identity(self):
        nodes, weights = op.gauss_rule(op.LEGENDRE, 5)
        rule = op.tensor_rule([(nodes, weights)])
        np.testing.assert_array_equal(rule.nodes[:, 0], nodes)
        np.testing.assert_array_equal(rule.weights, weights)

    def test_tensor_three_dims(self):
        rule = op.tensor_rule([op.gauss_rule(op.LEGENDRE, 3)] * 3)
        assert rule.nodes.shape == (27, 3)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)

    @given(q=st.integers(min_value=1, max_value=20))
    @settings(max_examples=20, deadline=None)
    def test_rule_shapes_property(self, q):
        for fam in (op.HERMITE, op.LEGENDRE):
            nodes, weights = op.gauss_rule(fam, q)
            assert nodes.shape == (q,) and weights.shape == (q,)
            assert np.all(np.diff(nodes) > 0)


def test_sample_xi_families():
    basis = op.build_basis([op.HERMITE, op.LEGENDRE], 1)
    xi = op.sample_xi(basis, np.random.default_rng(0), 4000)
    assert xi.shape == (4000, 2)
    assert np.all(np.abs(xi[:, 1]) <= 1.0)
    assert np.abs(xi[:, 0]).max() > 1.5  # unbounded Gaussian column
