import numpy as np
import pytest

from flowfuse.flow import (
    SampleSchedule,
    VelocityModel,
    analytic_gaussian_velocity,
    estimate_f0,
    euler_sample,
    interpolate,
    rf_loss,
    velocity_target,
)


class TestSchedule:
    def test_uniform_grid(self):
        s = SampleSchedule.uniform(4)
        assert s.steps == 4
        assert s.times == (1.0, 0.75, 0.5, 0.25, 0.0)

    def test_endpoints_and_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            SampleSchedule([1.0, 0.5, 0.5, 0.0])
        with pytest.raises(ValueError):
            SampleSchedule([0.9, 0.0])
        with pytest.raises(ValueError):
            SampleSchedule([1.0, 0.1])


class TestInterpolate:
    def test_endpoints(self):
        x0 = np.array([1.0, 2.0])
        eps = np.array([-1.0, 0.5])
        assert np.array_equal(interpolate(x0, eps, 0.0).data, x0)
        assert np.array_equal(interpolate(x0, eps, 1.0).data, eps)

    def test_midpoint(self):
        assert interpolate(np.array([0.0]), np.array([2.0]), 0.5).data[0] == 1.0

    def test_t_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            interpolate(np.zeros(2), np.zeros(2), 1.5)


class TestVelocityTarget:
    def test_basic_and_degenerate(self):
        assert velocity_target(np.array([0.0]), np.array([1.0])).data[0] == 1.0
        x = np.array([0.3, -0.2])
        assert velocity_target(x, x).max_abs() == 0.0

    def test_consistent_with_interpolation_algebra(self):
        rng = np.random.default_rng(0)
        x0, eps = rng.standard_normal(5), rng.standard_normal(5)
        t = 0.3
        xt = interpolate(x0, eps, t).data
        lhs = (eps - xt) / (1.0 - t)
        assert np.abs(lhs - velocity_target(x0, eps).data).max() < 1e-12


class TestEstimateF0:
    def test_t_zero_identity(self):
        f = np.array([0.4, 0.6])
        assert np.array_equal(estimate_f0(f, np.ones(2), 0.0).data, f)

    def test_worked_example(self):
        # x0 = 3, eps = 1, t = 0.5 -> f_t = 2, v = -2 -> estimate 3
        assert estimate_f0(np.array([2.0]), np.array([-2.0]), 0.5).data[0] == 3.0

    def test_recovers_x0_with_exact_velocity(self):
        rng = np.random.default_rng(1)
        x0, eps = rng.standard_normal(8), rng.standard_normal(8)
        v = velocity_target(x0, eps).data
        for t in np.arange(0.1, 0.95, 0.1):
            ft = interpolate(x0, eps, float(t)).data
            assert np.abs(estimate_f0(ft, v, float(t)).data - x0).max() < 1e-12


class TestRfLoss:
    def test_exact_fit_gives_zero(self):
        c = 1.7
        model = VelocityModel.constant(c)
        rng = np.random.default_rng(2)
        eps = rng.standard_normal((4, 3))
        x0 = eps - c
        loss, grads = rf_loss(model, x0, eps, np.full(4, 0.25))
        assert loss < 1e-28
        assert grads == {}

    def test_zero_model_unit_loss(self):
        model = VelocityModel.constant(0.0)
        x0 = np.zeros((5, 2))
        eps = np.ones((5, 2))
        loss, _ = rf_loss(model, x0, eps, np.linspace(0.0, 0.9, 5))
        assert abs(loss - 1.0) < 1e-12

    def test_t_equal_one_rejected(self):
        model = VelocityModel.constant(0.0)
        with pytest.raises(ValueError, match="pole|\\[0, 1\\)"):
            rf_loss(model, np.zeros((2, 2)), np.ones((2, 2)), np.array([0.5, 1.0]))

    def test_mlp_loss_and_grads_finite(self):
        model = VelocityModel.mlp(dim=2, hidden=(8,), seed=3)
        rng = np.random.default_rng(3)
        loss, grads = rf_loss(
            model, rng.standard_normal((6, 2)), rng.standard_normal((6, 2)),
            rng.uniform(0.0, 0.99, 6))
        assert np.isfinite(loss) and loss > 0
        assert set(grads) == set(model.params.names())
        assert all(np.all(np.isfinite(g)) for g in grads.values())

    def test_mlp_trace_matches_evaluate_bitwise(self):
        import flowfuse.autodiff as ad

        model = VelocityModel.mlp(dim=3, hidden=(5, 4), seed=4)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((7, 3))
        traced = model.trace(ad.constant(x), 0.37).value
        assert np.array_equal(traced, model.evaluate(x, 0.37))


class TestEulerSample:
    def test_constant_field_invariant_to_step_count(self):
        model = VelocityModel.constant(2.0)
        f1 = np.array([1.0])
        outs = [euler_sample(model, f1, SampleSchedule.uniform(n))[-1].data[0]
                for n in (1, 10, 100)]
        assert all(abs(o - (-1.0)) < 1e-12 for o in outs)
        spread = max(outs) - min(outs)
        assert spread < 1e-12

    def test_trajectory_length_and_endpoints(self):
        model = VelocityModel.constant(0.5)
        f1 = np.array([0.0, 1.0])
        traj = euler_sample(model, f1, SampleSchedule.uniform(7))
        assert len(traj) == 8
        assert np.array_equal(traj[0].data, f1)
        assert np.abs(traj[-1].data - (f1 - 0.5)).max() < 1e-12

    def test_translation_equivariance_for_constant_model(self):
        model = VelocityModel.constant(-0.3)
        rng = np.random.default_rng(5)
        f = rng.standard_normal(6)
        delta = 1.234
        sched = SampleSchedule.uniform(13)
        a = euler_sample(model, f, sched)[-1].data
        b = euler_sample(model, f + delta, sched)[-1].data
        assert np.abs(b - (a + delta)).max() < 1e-12

    def test_nonfinite_state_reports_step_index(self):
        bad = VelocityModel.constant(np.inf)
        with pytest.raises(FloatingPointError, match="step 0"):
            euler_sample(bad, np.zeros(2), SampleSchedule.uniform(3))


class TestAnalyticGaussianVelocity:
    def test_at_marginal_mean_velocity_is_minus_mu0(self):
        mu0, s0 = 2.0, 0.5
        for t in (0.0, 0.3, 0.7, 0.99):
            x = np.array([(1.0 - t) * mu0])
            v = analytic_gaussian_velocity(mu0, s0, x, t)
            assert abs(v[0] + mu0) < 1e-12

    def test_sigma_to_zero_limit(self):
        mu0, t = 1.0, 0.4
        x = np.array([0.9])
        v = analytic_gaussian_velocity(mu0, 1e-9, x, t)
        expected = (x - (1.0 - t) * mu0) / t - mu0
        assert abs(v[0] - expected[0]) < 1e-6

    def test_t_one_rejected(self):
        with pytest.raises(ValueError):
            analytic_gaussian_velocity(1.0, 0.5, np.zeros(1), 1.0)

    def test_matches_monte_carlo_conditional_expectation(self):
        # E[eps - x0 | x_t in a 0.01 window around x] from 1e6 draws
        mu0, s0, t, x_query = 1.0, 0.5, 0.4, 0.7
        rng = np.random.default_rng(123)
        n = 1_000_000
        x0 = rng.normal(mu0, s0, n)
        eps = rng.normal(0.0, 1.0, n)
        xt = (1.0 - t) * x0 + t * eps
        sel = np.abs(xt - x_query) < 0.005
        sample = (eps - x0)[sel]
        mc = sample.mean()
        se = sample.std(ddof=1) / np.sqrt(sel.sum())
        v = analytic_gaussian_velocity(mu0, s0, np.array([x_query]), t)[0]
        assert abs(v - mc) < 3.0 * se

    def test_sampling_transports_standard_normal_to_target(self):
        # terminal moments of the flow from N(0,1): mean mu0, std sigma0
        mu0, s0 = 2.0, 0.5
        model = VelocityModel.analytic_gaussian(mu0, s0)
        rng = np.random.default_rng(7)
        starts = rng.standard_normal(10_000)
        out = euler_sample(model, starts, SampleSchedule.uniform(200))[-1].data
        assert abs(out.mean() - mu0) < 0.02 * mu0
        assert abs(out.std() - s0) < 0.03 * s0
