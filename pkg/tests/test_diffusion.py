import numpy as np
import pytest

from diffplan.diffusion import (
    GuidanceConfig, forward_sample, guided_reverse_step, make_schedule,
    posterior_mean, reverse_step, training_loss,
)


class OracleDenoiser:
    """Stub that recovers the exact injected noise from tau_t."""

    def __init__(self, tau0, schedule):
        self.tau0 = tau0
        self.schedule = schedule

    def forward(self, x, t):
        ab = self.schedule.alpha_bar[t - 1]
        return (x - np.sqrt(ab) * self.tau0) / np.sqrt(1 - ab), None

    def backward(self, cache, dout):
        return {}


class ZeroDenoiser:
    def forward(self, x, t):
        return np.zeros_like(x), None

    def backward(self, cache, dout):
        return {}


class TestMakeSchedule:
    @pytest.mark.parametrize("kind", ["linear", "cosine", "exponential"])
    def test_tables_consistent(self, kind):
        s = make_schedule(kind, 25)
        # brute-force cumulative product oracle
        ab = np.array([np.prod(s.alpha[: t + 1]) for t in range(25)])
        np.testing.assert_allclose(s.alpha_bar, ab, atol=1e-15)
        ab_prev = np.concatenate([[1.0], s.alpha_bar[:-1]])
        np.testing.assert_allclose(s.beta_tilde, s.beta * (1 - ab_prev) / (1 - s.alpha_bar))
        np.testing.assert_allclose(s.sigma, np.sqrt(s.beta_tilde))
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all((s.beta > 0) & (s.beta < 1))

    def test_exponential_geometric(self):
        s = make_schedule("exponential", 25, 1e-4, 2e-2)
        ratios = s.beta[1:] / s.beta[:-1]
        np.testing.assert_allclose(ratios, ratios[0])
        assert s.beta[0] == pytest.approx(1e-4)
        assert s.beta[-1] == pytest.approx(2e-2)

    def test_single_step(self):
        s = make_schedule("linear", 1, 1e-4, 1e-4)
        assert s.alpha_bar[0] == pytest.approx(1 - 1e-4)
        assert s.beta_tilde[0] == 0.0

    def test_first_step_deterministic(self):
        s = make_schedule("exponential", 25)
        assert s.beta_tilde[0] == 0.0
        assert s.sigma[0] == 0.0

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            make_schedule("linear", 10, 0.5, 0.1)
        with pytest.raises(ValueError):
            make_schedule("bogus", 10)


class TestForwardSample:
    def setup_method(self):
        self.s = make_schedule("exponential", 25)

    def test_zero_noise(self):
        tau0 = np.ones((4, 2))
        out = forward_sample(self.s, tau0, 5, np.zeros_like(tau0))
        np.testing.assert_allclose(out, np.sqrt(self.s.alpha_bar[4]) * tau0)

    def test_zero_signal(self):
        eps = np.random.default_rng(0).standard_normal((4, 2))
        out = forward_sample(self.s, np.zeros_like(eps), 7, eps)
        np.testing.assert_allclose(out, np.sqrt(1 - self.s.alpha_bar[6]) * eps)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward_sample(self.s, np.zeros((2, 2)), 1, np.zeros((3, 2)))

    def test_matches_iterated_kernel(self):
        # one-shot marginal vs iterating the one-step kernel, 1e4 scalar samples
        rng = np.random.default_rng(1)
        n = 10_000
        for t in (1, 5, 25):
            one_shot = forward_sample(self.s, np.ones(n), t, rng.standard_normal(n))
            x = np.ones(n)
            for i in range(t):
                x = np.sqrt(1 - self.s.beta[i]) * x + np.sqrt(self.s.beta[i]) * rng.standard_normal(n)
            se_mean = np.sqrt(2.0 / n)  # conservative: var <= 1
            assert abs(one_shot.mean() - x.mean()) < 3 * se_mean
            assert abs(one_shot.std() - x.std()) < 3 * se_mean


class TestPosteriorMean:
    def setup_method(self):
        self.s = make_schedule("exponential", 25)

    def test_zero_eps(self):
        tau = np.random.default_rng(2).standard_normal((3, 2))
        np.testing.assert_allclose(posterior_mean(self.s, tau, 4, np.zeros_like(tau)),
                                   tau / np.sqrt(self.s.alpha[3]))

    def test_perfect_noise_equals_q_posterior_mean(self):
        rng = np.random.default_rng(3)
        for t in (2, 10, 25):
            tau0 = rng.standard_normal((5, 3))
            eps = rng.standard_normal((5, 3))
            tau_t = forward_sample(self.s, tau0, t, eps)
            mu = posterior_mean(self.s, tau_t, t, eps)
            ab, ab_prev = self.s.alpha_bar[t - 1], self.s.alpha_bar_prev(t)
            a, b = self.s.alpha[t - 1], self.s.beta[t - 1]
            analytic = (np.sqrt(ab_prev) * b * tau0 + np.sqrt(a) * (1 - ab_prev) * tau_t) / (1 - ab)
            np.testing.assert_allclose(mu, analytic, atol=1e-10)

    def test_linearity(self):
        rng = np.random.default_rng(4)
        tau, eps = rng.standard_normal((2, 4, 2))
        np.testing.assert_allclose(posterior_mean(self.s, 3 * tau, 6, 3 * eps),
                                   3 * posterior_mean(self.s, tau, 6, eps), atol=1e-14)


class TestReverseStep:
    def setup_method(self):
        self.s = make_schedule("exponential", 25)

    def test_zero_z(self):
        mu = np.random.default_rng(5).standard_normal((3, 2))
        np.testing.assert_allclose(reverse_step(self.s, mu, 10, np.zeros_like(mu)), mu)

    def test_deterministic_last_step(self):
        rng = np.random.default_rng(6)
        mu = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(reverse_step(self.s, mu, 1, rng.standard_normal((3, 2))), mu)

    def test_sample_variance(self):
        rng = np.random.default_rng(7)
        t = 20
        n = 100_000
        out = reverse_step(self.s, np.zeros(n), t, rng.standard_normal(n))
        bt = self.s.beta_tilde[t - 1]
        se = bt * np.sqrt(2.0 / n)
        assert abs(np.var(out) - bt) < 3 * se


class TestGuidedReverseStep:
    def setup_method(self):
        self.s = make_schedule("exponential", 25)

    def test_zero_guidance_matches_unguided(self):
        rng = np.random.default_rng(8)
        mu = rng.standard_normal((4, 2))
        z = rng.standard_normal((4, 2))
        for drop in (True, False):
            cfg = GuidanceConfig(drop_sigma_scaling=drop)
            np.testing.assert_array_equal(
                guided_reverse_step(self.s, cfg, mu, np.zeros_like(mu), 9, z),
                reverse_step(self.s, mu, 9, z))

    def test_hard_set_endpoints(self):
        rng = np.random.default_rng(9)
        mu = rng.standard_normal((6, 4))
        start, goal = rng.standard_normal((2, 4))
        out = guided_reverse_step(self.s, GuidanceConfig(), mu, np.zeros_like(mu), 5,
                                  rng.standard_normal((6, 4)), start=start, goal=goal)
        np.testing.assert_array_equal(out[0], start)
        np.testing.assert_array_equal(out[-1], goal)

    def test_gaussian_product_oracle(self):
        # linear log-likelihood a'x + b with sigma^2-scaled guidance: the guided
        # draw is exactly the product Gaussian N(mu + sigma^2 a, sigma^2)
        rng = np.random.default_rng(10)
        t = 15
        a = 1.7
        cfg = GuidanceConfig(drop_sigma_scaling=False)
        n = 100_000
        mu = np.full(n, 0.3)
        out = guided_reverse_step(self.s, cfg, mu, np.full(n, a), t, rng.standard_normal(n))
        var = self.s.beta_tilde[t - 1]
        expected_mean = 0.3 + var * a
        assert abs(out.mean() - expected_mean) < 3 * np.sqrt(var / n)
        assert abs(out.var() - var) < 3 * var * np.sqrt(2.0 / n)

    def test_taylor_limit_quadratic_likelihood(self):
        # quadratic log-likelihood: guided mean approaches the MAP shift as
        # sigma_t^2 -> 0, with the correct sign and first-order magnitude
        k, target, mu = 2.0, 1.0, 0.0
        cfg = GuidanceConfig(drop_sigma_scaling=False)
        for t in (25, 10, 3):
            var = self.s.beta_tilde[t - 1]
            g = -k * (mu - target)
            guided = guided_reverse_step(self.s, cfg, np.array([mu]), np.array([g]), t,
                                         np.zeros(1))[0]
            exact_shift = var * k * (target - mu) / (1 + var * k)
            shift = guided - mu
            assert np.sign(shift) == np.sign(target - mu)
            assert shift == pytest.approx(exact_shift, rel=2 * var * k)


class TestTrainingLoss:
    def setup_method(self):
        self.s = make_schedule("exponential", 25)

    def test_oracle_denoiser_zero_loss(self):
        rng = np.random.default_rng(11)
        tau0 = rng.standard_normal((8, 6, 2))
        loss, _ = training_loss(self.s, OracleDenoiser(tau0[0], self.s),
                                np.tile(tau0[0], (8, 1, 1)), rng)
        assert loss == pytest.approx(0.0, abs=1e-20)

    def test_zero_denoiser_chi_square(self):
        rng = np.random.default_rng(12)
        H, d, B = 6, 2, 2000
        tau0 = np.zeros((B, H, d))
        loss, _ = training_loss(self.s, ZeroDenoiser(), tau0, rng)
        # E||eps||^2 = H*d, sd of the mean ~ sqrt(2*H*d/B)
        assert abs(loss - H * d) < 4 * np.sqrt(2 * H * d / B)

    def test_parameter_gradients_finite_differences(self):
        from diffplan.denoiser import DenoiserConfig, Normalizer, init_model

        rng = np.random.default_rng(13)
        cfg = DenoiserConfig(H=6, d=2, channels=4, n_blocks=1, kernel=3, time_dim=4)
        model = init_model(cfg, Normalizer(-np.ones(2), np.ones(2)), rng)
        for k in model.params:
            model.params[k] = rng.standard_normal(model.params[k].shape) * 0.2
        tau0 = rng.standard_normal((3, 6, 2))

        def loss_at(seed):
            return training_loss(self.s, model, tau0, np.random.default_rng(seed))

        _, grads = loss_at(99)
        h = 1e-6
        for k in model.params:
            flat = model.params[k].reshape(-1)
            for i in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = loss_at(99)
                flat[i] = orig - h
                lm, _ = loss_at(99)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                an = grads[k].reshape(-1)[i]
                assert an == pytest.approx(fd, rel=1e-4, abs=1e-7)
