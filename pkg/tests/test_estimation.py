import numpy as np
import pytest

from odecheck import registry
from odecheck.errors import NoConvergence
from odecheck.estimation import (
    LmSettings,
    NlsConfig,
    TwoStepConfig,
    default_m,
    fd_jacobian,
    levenberg_marquardt,
    nls_estimate,
    trajectory_values,
    two_step_estimate,
    two_step_objective,
    weight_function,
)
from odecheck.ode import OdeModel, solve_at
from odecheck.smoothing import ObservationSet

STUDY1 = registry.get("study1")
LV = registry.get("lotka-volterra")


def _noiseless(entry, n, seed=0):
    t = np.sort(np.random.default_rng(seed).uniform(size=n))
    x = solve_at(entry.model, entry.theta0, entry.x0, t, t0=0.0)
    return ObservationSet(t, x, span=(0.0, 1.0))


def _noisy(entry, n, seed, sigma=0.05):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(size=n))
    x = solve_at(entry.model, entry.theta0, entry.x0, t, t0=0.0)
    return ObservationSet(t, x + sigma * rng.standard_normal(x.shape), span=(0.0, 1.0))


def _oracle_curves(entry):
    def x_curve(t):
        return solve_at(entry.model, entry.theta0, entry.x0, t, t0=0.0)

    def dx_curve(k):
        def curve(t):
            return entry.model.f_batch(t, x_curve(t), entry.theta0)[:, k]

        return curve

    return x_curve, dx_curve


class TestLevenbergMarquardt:
    def test_rosenbrock_residuals(self):
        def fun(th):
            return np.array([10 * (th[1] - th[0] ** 2), 1 - th[0]])

        res = levenberg_marquardt(fun, [-1.2, 1.0], np.array([[-5, 5], [-5, 5]]))
        assert res.converged
        np.testing.assert_allclose(res.theta, [1.0, 1.0], atol=1e-6)

    def test_objective_non_increasing(self):
        def fun(th):
            t = np.linspace(0, 1, 30)
            return np.exp(th[0] * t) * th[1] - np.exp(-2 * t) * 3

        res = levenberg_marquardt(fun, [0.5, 1.0], np.array([[-5, 5], [-5, 5]]))
        assert np.all(np.diff(res.history) <= 0)
        np.testing.assert_allclose(res.theta, [-2.0, 3.0], atol=1e-6)

    def test_bounds_are_respected(self):
        def fun(th):
            return np.array([th[0] - 3.0])

        res = levenberg_marquardt(fun, [0.0], np.array([[-1.0, 1.0]]))
        assert res.theta[0] == 1.0

    def test_zero_column_frozen(self):
        def fun(th):
            return np.array([th[0] - 2.0, 0.0 * th[1]])

        res = levenberg_marquardt(fun, [0.0, 0.7], np.array([[-5, 5], [-5, 5]]))
        assert res.theta[1] == 0.7
        assert res.unidentified.tolist() == [False, True]

    def test_iteration_cap(self):
        def fun(th):
            return np.array([10 * (th[1] - th[0] ** 2), 1 - th[0]])

        res = levenberg_marquardt(fun, [-1.2, 1.0], np.array([[-5, 5], [-5, 5]]), LmSettings(max_iter=2))
        assert not res.converged and res.iterations == 2

    def test_jacobian_stencil_stays_in_box(self):
        seen = []

        def fun(th):
            seen.append(th.copy())
            return np.array([th[0] ** 2])

        jac = fd_jacobian(fun, np.array([1.0]), np.array([[0.0, 1.0]]))
        assert all(s[0] <= 1.0 for s in seen)
        assert jac[0, 0] == pytest.approx(2.0, abs=1e-5)

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            LmSettings(grad_tol=0.0)
        with pytest.raises(ValueError):
            NlsConfig(multistart=0)


class TestNls:
    def test_noiseless_recovers_truth(self):
        data = _noiseless(STUDY1, 100)
        res = nls_estimate(STUDY1.model, data, STUDY1.x0, NlsConfig(seed=1))
        np.testing.assert_allclose(res.theta_hat, STUDY1.theta0, atol=1e-5)
        assert res.method == "NLS"

    def test_start_at_optimum(self):
        start = np.array([-0.1, -0.3])
        t = np.linspace(0.0, 1.0, 40)
        y = trajectory_values(STUDY1.model, start, STUDY1.x0, t, (0.0, 1.0))
        data = ObservationSet(t, y, span=(0.0, 1.0))
        res = nls_estimate(STUDY1.model, data, STUDY1.x0, NlsConfig(multistart=1), theta_init=start)
        assert res.objective == pytest.approx(0.0, abs=1e-20)
        np.testing.assert_array_equal(res.theta_hat, start)
        assert res.start_used == 0

    def test_rk4_path_without_closed_form(self):
        model = registry.get("fhn").model
        entry = registry.get("fhn")
        data = _noiseless(entry, 60, seed=2)
        res = nls_estimate(model, data, entry.x0, NlsConfig(multistart=1), theta_init=entry.theta0 * 1.05)
        np.testing.assert_allclose(res.theta_hat, entry.theta0, atol=1e-5)

    def test_reproducible_multistart(self):
        data = _noisy(STUDY1, 80, seed=3)
        a = nls_estimate(STUDY1.model, data, STUDY1.x0, NlsConfig(multistart=3, seed=9))
        b = nls_estimate(STUDY1.model, data, STUDY1.x0, NlsConfig(multistart=3, seed=9))
        assert np.array_equal(a.theta_hat, b.theta_hat) and a.start_used == b.start_used

    def test_all_starts_failing(self):
        def bad(t, x, theta, c):
            return np.array([np.nan])

        model = OdeModel("bad", p=1, q=1, rhs=bad, theta_bounds=np.array([[0.0, 1.0]]))
        data = ObservationSet(np.linspace(0, 1, 10), np.zeros(10))
        with pytest.raises(NoConvergence):
            nls_estimate(model, data, [1.0], NlsConfig(multistart=2))

    def test_dimension_mismatch(self):
        data = ObservationSet(np.linspace(0, 1, 10), np.zeros(10))
        with pytest.raises(ValueError):
            nls_estimate(STUDY1.model, data, STUDY1.x0)


class TestWeightFunction:
    def test_plateau_and_ends(self):
        assert weight_function(0.5, (0.0, 1.0)) == 1.0
        assert weight_function(0.0, (0.0, 1.0)) == 0.0
        assert weight_function(1.0, (0.0, 1.0)) == 0.0

    def test_ramp_midpoint(self):
        assert weight_function(0.05, (0.0, 1.0), 0.1) == pytest.approx(0.5)
        assert weight_function(2.0 + 0.05 * 4.0, (2.0, 6.0), 0.1) == pytest.approx(0.5)

    def test_continuous_and_bounded(self):
        t = np.linspace(0, 1, 10001)
        w = weight_function(t, (0.0, 1.0), 0.2)
        assert np.all((w >= 0) & (w <= 1))
        assert np.max(np.abs(np.diff(w))) <= 1.0 / (0.2 * 10000) + 1e-12


class TestTwoStep:
    def test_default_grid_size(self):
        assert default_m(300) == 4016  # 300^(4/3) = 2008.3
        assert default_m(8) == 32
        assert default_m(300) >= 300

    def test_oracle_curves_recover_truth(self):
        x_curve, dx = _oracle_curves(STUDY1)
        data = _noiseless(STUDY1, 50)
        for k in (0, 1):
            cfg = TwoStepConfig(component=k, m=400)
            res = two_step_estimate(STUDY1.model, data, cfg, theta_init=[0.1, 0.1], x_curve=x_curve, dx_curve=dx(k))
            if k == 0:
                # b does not enter the first equation
                assert res.theta_hat[0] == pytest.approx(STUDY1.theta0[0], abs=1e-6)
                assert res.unidentified == (False, True)
            else:
                np.testing.assert_allclose(res.theta_hat, STUDY1.theta0, atol=1e-6)

    def test_unidentified_coordinate_left_at_start(self):
        data = _noisy(LV, 150, seed=4)
        res = two_step_estimate(LV.model, data, TwoStepConfig(component=0), theta_init=[0.5, -1.0, -0.7, 1.3])
        assert res.unidentified == (False, False, True, True)
        assert res.theta_hat[2:].tolist() == [-0.7, 1.3]

    def test_relabeling_other_components_is_invisible(self):
        data = _noisy(LV, 120, seed=5)
        model = LV.model

        def swapped_rhs(t, x, theta, c):
            return model.rhs(t, x[::-1].copy(), theta, c)[::-1].copy()

        swapped = OdeModel("lv-swapped", p=2, q=4, rhs=swapped_rhs, consts=model.consts, theta_bounds=model.theta_bounds)
        data_sw = ObservationSet(data.times, data.values[:, ::-1], span=data.span)
        a = two_step_estimate(model, data, TwoStepConfig(component=0), theta_init=LV.theta0)
        b = two_step_estimate(swapped, data_sw, TwoStepConfig(component=1), theta_init=LV.theta0)
        assert np.array_equal(a.theta_hat, b.theta_hat)

    def test_objective_gradient_matches_central_difference(self):
        data = _noisy(LV, 100, seed=6)
        m = 200
        grid = np.linspace(0.1, 0.9, m)
        x_curve, dx = _oracle_curves(LV)
        xs = x_curve(grid)
        dxk = dx(1)(grid) + 0.3 * np.sin(7 * grid)
        w = weight_function(grid, data.span)
        rng = np.random.default_rng(7)
        for _ in range(5):
            theta = rng.uniform(LV.model.theta_bounds[:, 0] + 0.1, LV.model.theta_bounds[:, 1] - 0.1)

            def resid(th):
                return np.sqrt(w / m) * (dxk - LV.model.f_batch(grid, xs, th)[:, 1])

            grad = 2 * fd_jacobian(resid, theta, LV.model.theta_bounds).T @ resid(theta)
            for j in range(4):
                e = np.zeros(4)
                e[j] = 1e-5
                fd = (
                    two_step_objective(LV.model, grid, xs, dxk, w, 1, theta + e)
                    - two_step_objective(LV.model, grid, xs, dxk, w, 1, theta - e)
                ) / 2e-5
                assert grad[j] == pytest.approx(fd, rel=1e-4, abs=1e-10)

    def test_reproducible(self):
        data = _noisy(STUDY1, 100, seed=8)
        cfg = TwoStepConfig(component=1, multistart=3, seed=4)
        a = two_step_estimate(STUDY1.model, data, cfg)
        b = two_step_estimate(STUDY1.model, data, cfg)
        assert np.array_equal(a.theta_hat, b.theta_hat)

    def test_result_serializes(self):
        data = _noisy(STUDY1, 100, seed=9)
        res = two_step_estimate(STUDY1.model, data, TwoStepConfig(component=1), theta_init=STUDY1.theta0)
        doc = res.to_dict()
        assert doc["method"] == "TwoStep" and doc["m"] == default_m(100)
        assert len(doc["bandwidths"]["h_e"]) == 2
        assert doc["objective"] >= 0
