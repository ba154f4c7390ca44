"""Problem descriptions, the diffusion-removal transform, and a priori bounds.

Frozen constants (closed forms, see docstrings):
  Example 1 drift 5(0.4 - x): C1 = C2 = 5, f(0, x0, 0) = 3.5 at x0 = -0.3
  Example 2 drift 5(0.4 - sin 3x): C1 = C2 = 15, D0 = 7
  Example 1 bound constants: C3 = e^5 * 1.3 * 5, C4 = 75(1 + 2 C3^2)
"""

import math

import numpy as np
import pytest

from spinn.paths import TimeGrid, Wiener, sample_wiener_path, derive_seed
from spinn.sde import (
    DossSussmann,
    ExpressionDrift,
    LinearMeanReversion,
    SdeSpec,
    SineDrift,
    a_priori_bounds,
    check_lipschitz,
    doss_sussmann_scalar,
    drift_from_jsonable,
    drift_to_jsonable,
    lipschitz_constants,
    make_rode_rhs,
)

C3_E1 = math.exp(5.0) * 1.3 * 5.0  # = 964.685534166748
C4_E1 = 75.0 * (1.0 + 2.0 * C3_E1**2)  # = 139592801.9745876


def example1():
    return SdeSpec(LinearMeanReversion(5.0, 0.4), 0.61, -0.3, 1.0, Wiener(1))


def example2():
    return SdeSpec(SineDrift(5.0, 0.4, 3.0), 0.61, -0.3, 1.0, Wiener(1))


class TestDrifts:
    def test_linear_values_and_jacobian(self):
        a = LinearMeanReversion(5.0, 0.4)
        np.testing.assert_allclose(a(0.0, np.array([-0.3])), [3.5])
        np.testing.assert_allclose(a(0.0, np.array([0.4])), [0.0])
        np.testing.assert_allclose(a.jacobian(0.0, np.array([0.1])), [[-5.0]])
        assert a.lipschitz_L == 5.0
        assert a.bound_D0 is None

    def test_sine_values_and_constants(self):
        a = SineDrift(5.0, 0.4, 3.0)
        np.testing.assert_allclose(a(0.0, np.array([0.0])), [2.0])
        x = np.array([-0.3])
        np.testing.assert_allclose(a(0.0, x), [5 * (0.4 - math.sin(-0.9))])
        np.testing.assert_allclose(a.jacobian(0.0, x), [[-15 * math.cos(-0.9)]])
        assert a.lipschitz_L == 15.0
        assert a.bound_D0 == 7.0

    def test_expression_drift_matches_sine(self):
        a = ExpressionDrift("5*(0.4 - sin(3*x1))", lipschitz=15.0, bound=7.0)
        b = SineDrift(5.0, 0.4, 3.0)
        x = np.linspace(-2, 2, 7)[:, None]
        np.testing.assert_allclose(a(0.0, x), b(0.0, x), rtol=1e-14)
        np.testing.assert_allclose(a.jacobian(0.0, x), b.jacobian(0.0, x), rtol=1e-14)
        assert not a.time_dependent

    def test_expression_drift_multidimensional(self):
        a = ExpressionDrift("x2; -x1", dim=2)
        out = a(0.0, np.array([[1.0, 2.0]]))
        np.testing.assert_allclose(out, [[2.0, -1.0]])
        jac = a.jacobian(0.0, np.array([[1.0, 2.0]]))
        np.testing.assert_allclose(jac[0], [[0.0, 1.0], [-1.0, 0.0]])

    def test_expression_drift_time_dependence_flag(self):
        assert ExpressionDrift("t*x1").time_dependent
        assert not ExpressionDrift("2*x1").time_dependent

    def test_expression_component_count_must_match_dim(self):
        with pytest.raises(ValueError, match="components"):
            ExpressionDrift("x1; x2", dim=3)

    def test_declared_lipschitz_is_spot_checked(self):
        good = ExpressionDrift("5*(0.4 - x1)", lipschitz=5.0)
        worst = check_lipschitz(good, 1.0, 1, seed=1)
        assert worst <= 5.0 + 1e-9
        bad = ExpressionDrift("5*(0.4 - x1)", lipschitz=1.0)  # understated
        with pytest.raises(ValueError, match="exceeds"):
            check_lipschitz(bad, 1.0, 1, seed=1)


class TestSdeSpec:
    def test_scalar_coercion(self):
        sde = example1()
        assert sde.sigma.shape == (1, 1)
        assert sde.x0.shape == (1,)
        assert sde.dim == 1 and sde.noise_dim == 1

    def test_noise_dimension_must_match_sigma(self):
        with pytest.raises(ValueError, match="noise dimension"):
            SdeSpec(LinearMeanReversion(1.0, 0.0), np.ones((1, 2)), 0.5, 1.0, Wiener(1))

    def test_x0_shape_must_match(self):
        with pytest.raises(ValueError, match="x0 shape"):
            SdeSpec(LinearMeanReversion(1.0, 0.0), np.ones((2, 1)), [0.5], 1.0, Wiener(1))


class TestRodeRhs:
    def test_zero_noise_reduces_to_drift_exactly(self):
        """f(t, y, 0) == a(t, y) bit for bit."""
        rhs = make_rode_rhs(example1())
        y = np.array([[0.37], [-1.2]])
        w = np.zeros((2, 1))
        np.testing.assert_array_equal(rhs(0.0, y, w), LinearMeanReversion(5.0, 0.4)(0.0, y))

    def test_shift_structure(self):
        rhs = make_rode_rhs(example1())
        y = np.array([0.1])
        w = np.array([2.0])
        # f(t, y, w) = 5(0.4 - (y + 0.61 w))

        np.testing.assert_allclose(rhs(0.0, y, w), 5 * (0.4 - (0.1 + 0.61 * 2.0)))

    def test_constants_example1(self):
        rhs = make_rode_rhs(example1())
        assert rhs.c1 == 5.0
        assert rhs.c2 == 5.0

    def test_constants_example2(self):
        rhs = make_rode_rhs(example2())
        assert rhs.c1 == 15.0
        assert rhs.c2 == 15.0

    def test_constants_with_small_sigma_keep_max_with_one(self):
        sde = SdeSpec(LinearMeanReversion(5.0, 0.4), 0.1, -0.3, 1.0, Wiener(1))
        rhs = make_rode_rhs(sde)
        assert rhs.c1 == 5.0  # max(1, 0.1) = 1

    def test_sup_over_time_for_time_dependent_drift(self):
        # a(t, 0) = 3 sin(pi t): sup over [0,1] is ~3 (grid estimate)
        drift = ExpressionDrift("3*sin(3.141592653589793*t) - x1", lipschitz=1.0)
        sde = SdeSpec(drift, 1.0, 0.0, 1.0, Wiener(1))
        rhs = make_rode_rhs(sde)
        assert rhs.c2 == pytest.approx(3.0, rel=1e-4)
        assert rhs.c2 >= rhs.c1

    def test_unknown_lipschitz_leaves_constants_unset(self):
        sde = SdeSpec(ExpressionDrift("5*(0.4 - x1)"), 0.61, -0.3, 1.0, Wiener(1))
        rhs = make_rode_rhs(sde)
        assert rhs.c1 is None and rhs.c2 is None

    def test_jacobian_y_chain_rule(self):
        rhs = make_rode_rhs(example2())
        y = np.array([[0.2]])
        w = np.array([[1.3]])
        shifted = 0.2 + 0.61 * 1.3
        np.testing.assert_allclose(
            rhs.jacobian_y(0.0, y, w), [[[-15 * math.cos(3 * shifted)]]], rtol=1e-14
        )


class TestLipschitzConstants:
    def test_example1_frozen_values(self):
        c3, c4 = lipschitz_constants(5.0, 1.0, 0.3)
        assert c3 == pytest.approx(964.685534166748, rel=1e-13)
        assert c4 == pytest.approx(139592801.9745876, rel=1e-13)
        assert (c3, c4) == (pytest.approx(C3_E1), pytest.approx(C4_E1))

    def test_monotone_in_horizon(self):
        c3a, c4a = lipschitz_constants(5.0, 0.5, 0.3)
        c3b, c4b = lipschitz_constants(5.0, 1.0, 0.3)
        assert c3b > c3a and c4b > c4a


class TestAPrioriBounds:
    def test_example1_integrated_path_satisfies_bounds(self):
        from spinn.solvers import integrate_rode

        sde = example1()
        rhs = make_rode_rhs(sde)
        grid = TimeGrid(512, 1.0)
        for i in range(20):
            path = sample_wiener_path(grid, 1, derive_seed(400, i))
            y = integrate_rode(rhs, path, sde.x0).values
            report = a_priori_bounds(rhs, sde, path, y)
            assert report.satisfied
            (check,) = report.checks
            assert check.name == "lipschitz"
            assert check.c3 == pytest.approx(C3_E1)
            assert report.sup_y <= check.sup_bound
            assert report.int_dy2 <= check.int_bound

    def test_example2_gets_both_checks(self):
        from spinn.solvers import integrate_rode

        sde = example2()
        rhs = make_rode_rhs(sde)
        grid = TimeGrid(512, 1.0)
        path = sample_wiener_path(grid, 1, derive_seed(401, 0))
        y = integrate_rode(rhs, path, sde.x0).values
        report = a_priori_bounds(rhs, sde, path, y)
        names = [c.name for c in report.checks]
        assert names == ["lipschitz", "bounded-drift"]
        bounded = report.checks[1]
        # D0 = 7: sup bound 0.3 + 7, integral bound 49
        assert bounded.sup_bound == pytest.approx(7.3)
        assert bounded.int_bound == pytest.approx(49.0)
        assert report.satisfied

    def test_violating_trajectory_is_flagged(self):
        sde = example1()
        rhs = make_rode_rhs(sde)
        grid = TimeGrid(16, 1.0)
        path = sample_wiener_path(grid, 1, 3)
        y = np.full((17, 1), 1e6)  # way beyond any bound
        y[0] = sde.x0
        report = a_priori_bounds(rhs, sde, path, y)
        assert not report.satisfied

    def test_no_constants_raises(self):
        sde = SdeSpec(ExpressionDrift("5*(0.4 - x1)"), 0.61, -0.3, 1.0, Wiener(1))
        rhs = make_rode_rhs(sde)
        path = sample_wiener_path(TimeGrid(8, 1.0), 1, 0)
        with pytest.raises(ValueError, match="no usable constants"):
            a_priori_bounds(rhs, sde, path, np.zeros((9, 1)))


class TestDossSussmann:
    def test_gbm_transform_structure(self):
        # dX = mu X dt + sig X dW with mu = 0.8, sig = 0.5:
        # transformed drift is the constant mu - sig^2/2 = 0.675
        mu, sig = 0.8, 0.5
        ds = doss_sussmann_scalar(ExpressionDrift(f"{mu}*x1"), sig, 1.7)
        assert isinstance(ds, DossSussmann)
        assert ds.y0 == pytest.approx(math.log(1.7), rel=1e-15)
        z = np.array([[0.3], [-1.0], [2.0]])
        np.testing.assert_allclose(ds.rhs.drift(0.0, z), 0.675, rtol=1e-12)

    def test_reconstruct_inverts_log(self):
        ds = doss_sussmann_scalar(ExpressionDrift("0.8*x1"), 0.5, 1.7)
        y = np.array([0.2])
        w = np.array([1.1])
        assert ds.reconstruct(y, w) == pytest.approx(math.exp(0.2 + 0.55), rel=1e-15)

    def test_requires_positive_start(self):
        with pytest.raises(ValueError, match="x0 > 0"):
            doss_sussmann_scalar(ExpressionDrift("x1"), 0.5, -1.0)

    def test_log_drift_jacobian_matches_finite_differences(self):
        drift = ExpressionDrift("5*(0.4 - x1)")
        ds = doss_sussmann_scalar(drift, 0.61, 1.0)
        z = np.array([[0.4]])
        h = 1e-6
        fd = (ds.rhs.drift(0.0, z + h) - ds.rhs.drift(0.0, z - h)) / (2 * h)
        np.testing.assert_allclose(ds.rhs.drift.jacobian(0.0, z)[0, :, 0], fd[0], rtol=1e-7)


@pytest.mark.parametrize(
    "drift",
    [
        LinearMeanReversion(5.0, 0.4),
        SineDrift(5.0, 0.4, 3.0),
        ExpressionDrift("5*(0.4 - x1)", lipschitz=5.0),
        ExpressionDrift("x2; -x1", dim=2),
    ],
)
def test_drift_json_round_trip(drift):
    restored = drift_from_jsonable(drift_to_jsonable(drift))
    assert restored == drift
