"""Tests for the univariate and tensor-product spline layer."""

import numpy as np
import pytest

from igacurl import (
    DomainError,
    KnotVector,
    TensorBasis,
    eval_basis,
    eval_basis_derivatives,
    eval_curry_schoenberg,
    greville_abscissae,
    refine_dyadic,
    uniform_open_knots,
)


def cox_de_boor(knots, degree, i, x):
    """Naive textbook recursion, used as an independent oracle."""
    if degree == 0:
        last = knots[i + 1] == knots[-1]
        if knots[i] <= x < knots[i + 1] or (last and x == knots[i + 1] and knots[i] < knots[i + 1]):
            return 1.0
        return 0.0
    left, right = 0.0, 0.0
    den = knots[i + degree] - knots[i]
    if den > 0:
        left = (x - knots[i]) / den * cox_de_boor(knots, degree - 1, i, x)
    den = knots[i + degree + 1] - knots[i + 1]
    if den > 0:
        right = (knots[i + degree + 1] - x) / den * cox_de_boor(knots, degree - 1, i + 1, x)
    return left + right


def full_values(kv, x):
    first, vals = eval_basis(kv, x)
    out = np.zeros(kv.num_basis)
    out[first: first + len(vals)] = vals
    return out


def full_cs_values(rkv, x):
    first, vals = eval_curry_schoenberg(rkv, x)
    out = np.zeros(rkv.num_basis)
    out[first: first + len(vals)] = vals
    return out


SAMPLE_KVS = [
    KnotVector([0, 0, 1, 1], 1),
    KnotVector([0, 0, 0, 0.5, 1, 1, 1], 2),
    uniform_open_knots(2, 3),
    uniform_open_knots(3, 2, multiplicity=2),
    uniform_open_knots(3, 4),
    KnotVector([0, 0, 0, 0, 0.25, 0.25, 0.7, 1, 1, 1, 1], 3),
]


class TestKnotVector:
    def test_counts(self):
        kv = uniform_open_knots(2, 3)
        assert kv.num_basis == 5
        assert kv.num_spans == 3
        assert kv.mesh_size == pytest.approx(1 / 3)

    def test_rejects_non_open(self):
        with pytest.raises(ValueError):
            KnotVector([0, 0, 0.5, 1, 1, 1], 2)

    def test_rejects_decreasing(self):
        with pytest.raises(ValueError):
            KnotVector([0, 0, 0, 0.6, 0.4, 1, 1, 1], 2)

    def test_immutable(self):
        kv = uniform_open_knots(2, 2)
        with pytest.raises(AttributeError):
            kv.degree = 3
        with pytest.raises(ValueError):
            kv.knots[0] = 0.5


class TestEvalBasis:
    def test_linear_hat_midpoint(self):
        kv = KnotVector([0, 0, 1, 1], 1)
        first, vals = eval_basis(kv, 0.5)
        assert first == 0
        np.testing.assert_allclose(vals, [0.5, 0.5])

    def test_against_recursion_oracle(self):
        # Frozen from the naive Cox-de Boor recursion at x = 0.25.
        kv = KnotVector([0, 0, 0, 0.5, 1, 1, 1], 2)
        first, vals = eval_basis(kv, 0.25)
        assert first == 0
        np.testing.assert_allclose(vals, [0.25, 0.625, 0.125], atol=1e-15)
        oracle = [cox_de_boor(kv.knots, 2, i, 0.25) for i in range(kv.num_basis)]
        np.testing.assert_allclose(full_values(kv, 0.25), oracle, atol=1e-14)

    @pytest.mark.parametrize("kv", SAMPLE_KVS)
    def test_matches_recursion_everywhere(self, kv):
        rng = np.random.default_rng(7)
        for x in np.concatenate([rng.uniform(0, 1, 15), [0.0, 1.0 - 1e-12]]):
            oracle = [cox_de_boor(kv.knots, kv.degree, i, x) for i in range(kv.num_basis)]
            np.testing.assert_allclose(full_values(kv, x), oracle, atol=1e-13)

    @pytest.mark.parametrize("kv", SAMPLE_KVS)
    def test_partition_of_unity(self, kv):
        rng = np.random.default_rng(3)
        for x in np.concatenate([rng.uniform(0, 1, 100), [0.0, 1.0]]):
            _, vals = eval_basis(kv, x)
            assert np.all(vals >= -1e-14)
            assert abs(vals.sum() - 1.0) < 1e-12

    def test_left_limit_at_one(self):
        kv = uniform_open_knots(2, 2)
        first, vals = eval_basis(kv, 1.0)
        assert first == kv.num_basis - kv.degree - 1
        np.testing.assert_allclose(vals, [0, 0, 1], atol=1e-14)

    def test_domain_error(self):
        kv = uniform_open_knots(2, 2)
        with pytest.raises(DomainError):
            eval_basis(kv, -0.1)
        with pytest.raises(DomainError):
            eval_basis(kv, 1.1)


class TestCurrySchoenberg:
    def test_constant_for_linear_source(self):
        kv = KnotVector([0, 0, 1, 1], 1)
        rkv = kv.reduce()
        assert rkv.num_basis == 1
        for x in (0.0, 0.3, 0.99):
            first, vals = eval_curry_schoenberg(rkv, x)
            assert first == 0
            np.testing.assert_allclose(vals, [1.0])

    @pytest.mark.parametrize("kv", [k for k in SAMPLE_KVS if k.degree >= 2])
    def test_derivative_identity_vs_finite_differences(self, kv):
        # B'_i = D_i-1 - D_i checked against centered differences of eval_basis.
        rkv = kv.reduce()
        rng = np.random.default_rng(11)
        step = 1e-6
        tol = 1e-6 / kv.mesh_size
        for x in rng.uniform(2 * step, 1 - 2 * step, 20):
            d = full_cs_values(rkv, x)
            diff = np.concatenate([[0.0], d]) - np.concatenate([d, [0.0]])
            fd = (full_values(kv, x + step) - full_values(kv, x - step)) / (2 * step)
            np.testing.assert_allclose(diff, fd, atol=tol)

    @pytest.mark.parametrize("kv", [k for k in SAMPLE_KVS if k.degree >= 2])
    def test_unit_integral(self, kv):
        # Gauss quadrature oracle for the normalisation of each function.
        rkv = kv.reduce()
        xg, wg = np.polynomial.legendre.leggauss(rkv.degree + 2)
        total = np.zeros(rkv.num_basis)
        for lo, hi in zip(rkv.breaks[:-1], rkv.breaks[1:]):
            pts = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
            for x, w in zip(pts, wg):
                total += 0.5 * (hi - lo) * w * full_cs_values(rkv, x)
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_zero_width_support_is_zero_function(self):
        # Doubly reduced vector with a full-multiplicity interior knot: the
        # middle function has empty support and must evaluate to zero, not
        # raise a division error.
        kv = KnotVector([0, 0, 0, 0.5, 0.5, 1, 1, 1], 2)
        rkv = kv.reduce().reduce()
        widths = rkv.knots[rkv.degree + 1:] - rkv.knots[: rkv.num_basis]
        assert np.any(widths == 0)
        for x in (0.2, 0.5, 0.8):
            vals = full_cs_values(rkv, x)
            assert np.all(np.isfinite(vals))
        assert full_cs_values(rkv, 0.49)[widths == 0] == pytest.approx(0.0)


class TestGreville:
    def test_quadratic_single_span(self):
        kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
        np.testing.assert_allclose(greville_abscissae(kv), [0, 0.5, 1])

    def test_linear_equals_knots(self):
        kv = KnotVector([0, 0, 0.25, 0.5, 1, 1], 1)
        np.testing.assert_allclose(greville_abscissae(kv), [0, 0.25, 0.5, 1])

    def test_cubic_direct_average(self):
        kv = KnotVector([0, 0, 0, 0, 0.5, 1, 1, 1, 1], 3)
        np.testing.assert_allclose(
            greville_abscissae(kv), [0, 1 / 6, 1 / 2, 5 / 6, 1], atol=1e-15
        )

    @pytest.mark.parametrize("kv", SAMPLE_KVS)
    def test_monotone_in_unit_interval(self, kv):
        for lev in range(3):
            g = greville_abscissae(refine_dyadic(kv, lev))
            assert g[0] == 0.0 and g[-1] == 1.0
            assert np.all(np.diff(g) >= 0)
            assert np.all((g >= 0) & (g <= 1))


class TestRefineDyadic:
    def test_identity_at_zero_levels(self):
        kv = uniform_open_knots(2, 3)
        assert refine_dyadic(kv, 0) == kv

    def test_single_bisection(self):
        kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
        out = refine_dyadic(kv, 1)
        np.testing.assert_allclose(out.knots, [0, 0, 0, 0.5, 1, 1, 1])

    @pytest.mark.parametrize("kv", SAMPLE_KVS)
    @pytest.mark.parametrize("levels", [1, 2, 3])
    def test_span_count(self, kv, levels):
        out = refine_dyadic(kv, levels)
        assert out.num_spans == 2**levels * kv.num_spans
        assert out.degree == kv.degree


class TestDerivativeTable:
    @pytest.mark.parametrize("kv", SAMPLE_KVS)
    def test_first_derivative_vs_finite_differences(self, kv):
        rng = np.random.default_rng(5)
        step = 1e-6
        for x in rng.uniform(2 * step, 1 - 2 * step, 10):
            first, ders = eval_basis_derivatives(kv, x, 1)
            fd = (full_values(kv, x + step) - full_values(kv, x - step)) / (2 * step)
            np.testing.assert_allclose(
                ders[1], fd[first: first + kv.order], atol=1e-5 / kv.mesh_size
            )
            np.testing.assert_allclose(ders[0], full_values(kv, x)[first: first + kv.order])


class TestTensorBasis:
    def test_shape_and_dim(self):
        kv = uniform_open_knots(2, 2)
        tb = TensorBasis([kv, kv.reduce(), kv])
        assert tb.shape == (4, 3, 4)
        assert tb.dim == 48

    def test_pointwise_product(self):
        kv = uniform_open_knots(2, 2)
        tb = TensorBasis([kv, kv])
        (f1, f2), vals = tb.evaluate((0.3, 0.7))
        a = full_values(kv, 0.3)
        b = full_values(kv, 0.7)
        np.testing.assert_allclose(vals, np.outer(a[f1: f1 + 3], b[f2: f2 + 3]))
