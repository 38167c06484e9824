import numpy as np
import pytest

from handsfree.diffusion import (
    NoiseSchedule,
    SamplerConfig,
    analytic_gaussian_score,
    estimate_sigma_data,
    final_estimate,
    forward_perturb,
    iid_noise_fn,
    langevin_step,
    precondition,
    reverse_sample,
    score_matching_loss,
    sigma_at,
    single_step_enhance,
    stft_noise_fn,
)
from handsfree.dsp import Spectrogram, StftConfig, Waveform, stft
from handsfree.errors import ConfigError

SCHED = NoiseSchedule()


def toy_spec(n_frames=8, fill=0.0):
    bins = np.full((260, n_frames), fill, dtype=complex)
    # n_samples chosen so StftConfig.n_frames(n_samples) == n_frames
    return Spectrogram(bins, StftConfig(), n_samples=n_frames * 128 - 384)


class TestSchedule:
    def test_boundaries(self):
        assert sigma_at(SCHED, 0.0) == pytest.approx(0.01, abs=1e-15)
        assert sigma_at(SCHED, 1.0) == pytest.approx(5.0, rel=1e-12)

    def test_closed_form_at_t_max(self):
        assert sigma_at(SCHED, 0.3) == pytest.approx(0.01 * 500.0**0.3, abs=1e-12)

    def test_strictly_increasing(self):
        ts = np.linspace(0, 1, 101)
        sig = [sigma_at(SCHED, t) for t in ts]
        assert np.all(np.diff(sig) > 0)

    def test_negative_time_rejected(self):
        with pytest.raises(ConfigError):
            sigma_at(SCHED, -0.01)

    def test_invalid_schedules_rejected(self):
        with pytest.raises(ConfigError):
            NoiseSchedule(sigma_min=0.2, sigma_max=0.1)
        with pytest.raises(ConfigError):
            NoiseSchedule(t_max=0.0)

    def test_json_round_trip(self):
        assert NoiseSchedule.from_json(SCHED.to_json()) == SCHED


class TestSamplerConfig:
    def test_n1_eps1_closed_forms(self):
        co = SamplerConfig(n_steps=1, epsilon=1.0).coefficients(SCHED)
        assert co["dt"] == pytest.approx(0.3, abs=1e-15)
        assert co["gamma"] == pytest.approx(500.0 ** (-0.3), abs=1e-12)
        assert co["eta"] == pytest.approx(1.0 - 500.0 ** (-0.3), abs=1e-12)
        assert co["beta"] == 0.0  # exact: gamma**0 == 1

    def test_beta_zero_for_eps_one_any_n(self):
        for n in (1, 3, 10, 50):
            assert SamplerConfig(n_steps=n, epsilon=1.0).coefficients(SCHED)["beta"] == 0.0

    def test_epsilon_below_one_rejected(self):
        # gamma < 1 makes gamma**(2(eps-1)) > 1 for eps < 1: beta undefined
        with pytest.raises(ConfigError, match="epsilon"):
            SamplerConfig(n_steps=1, epsilon=0.9)

    def test_zero_steps_rejected(self):
        with pytest.raises(ConfigError):
            SamplerConfig(n_steps=0)


class TestForwardPerturb:
    def test_zero_noise_returns_input(self, rng):
        s = toy_spec(fill=1.0 + 0.5j)
        s_t, z = forward_perturb(s, 0.3, SCHED, rng, noise_fn=lambda r: np.zeros_like(s.bins))
        assert np.array_equal(s_t.bins, s.bins)
        assert not z.any()

    def test_monte_carlo_variance_matches_stft_noise(self):
        # per-bin complex variance of STFT noise is the window energy sum
        rng = np.random.default_rng(7)
        wave = Waveform(np.zeros(3000))
        s = stft(wave)
        sig = sigma_at(SCHED, 0.3)
        draws = np.empty(10_000, dtype=complex)
        nf = stft_noise_fn(s)
        for i in range(draws.size):
            draws[i] = nf(rng)[40, 5]
        var = np.var(draws.real) + np.var(draws.imag)
        expected = float(np.sum(s.config.window() ** 2))
        assert var == pytest.approx(expected, rel=0.05)
        s_t, z = forward_perturb(s, 0.3, SCHED, np.random.default_rng(8))
        assert np.allclose(s_t.bins - s.bins, sig * z)

    def test_t0_perturbation_bounded_by_sigma_min(self, rng):
        s = toy_spec(fill=0.3)
        s_t, z = forward_perturb(s, 0.0, SCHED, rng, noise_fn=iid_noise_fn((260, 8)))
        assert np.linalg.norm(s_t.bins - s.bins) == pytest.approx(
            SCHED.sigma_min * np.linalg.norm(z), rel=1e-12
        )


class TestAnalyticGaussianScore:
    def test_degenerate_prior(self):
        s_t = np.array([[1.0 + 1.0j]])
        out = analytic_gaussian_score(s_t, 0.3, 0.0, SCHED)
        sig = sigma_at(SCHED, 0.3)
        assert np.allclose(out, -s_t / sig**2)

    def test_zero_state_zero_score(self):
        assert not analytic_gaussian_score(np.zeros((4, 4)), 0.2, 1.0, SCHED).any()

    def test_matches_finite_difference_log_density(self):
        # p(s) on (re, im) with per-component variance v = sigma_s^2 + sigma_t^2;
        # gradient convention d/d(re) + i d/d(im)
        sig_s, t = 0.7, 0.25
        sig = sigma_at(SCHED, t)
        v = sig_s**2 + sig**2

        def log_p(re, im):
            return -(re**2 + im**2) / (2 * v)

        rng = np.random.default_rng(3)
        pts = rng.standard_normal(20) + 1j * rng.standard_normal(20)
        score = analytic_gaussian_score(pts, t, sig_s, SCHED)
        h = 1e-6
        for p, s in zip(pts, score):
            g_re = (log_p(p.real + h, p.imag) - log_p(p.real - h, p.imag)) / (2 * h)
            g_im = (log_p(p.real, p.imag + h) - log_p(p.real, p.imag - h)) / (2 * h)
            assert abs(g_re + 1j * g_im - s) < 1e-6

    def test_negative_prior_sigma_rejected(self):
        with pytest.raises(ConfigError):
            analytic_gaussian_score(np.zeros(2), 0.1, -1.0, SCHED)


class TestScoreMatchingLoss:
    def test_perfect_score_zero_loss(self, rng):
        s = toy_spec(fill=0.2)
        holder = {}

        def capture_noise(r):
            holder["z"] = iid_noise_fn(s.bins.shape)(r)
            return holder["z"]

        def perfect(s_t, sigma, cond):
            return -holder["z"] / sigma

        loss = score_matching_loss(perfect, s, None, 0.3, SCHED, rng, noise_fn=capture_noise)
        assert loss == pytest.approx(0.0, abs=1e-18)

    def test_zero_score_gives_noise_norm(self, rng):
        s = toy_spec()
        holder = {}

        def capture_noise(r):
            holder["z"] = iid_noise_fn(s.bins.shape)(r)
            return holder["z"]

        loss = score_matching_loss(
            lambda s_t, sigma, cond: np.zeros_like(s_t), s, None, 0.3, SCHED, rng,
            noise_fn=capture_noise,
        )
        sig = sigma_at(SCHED, 0.3)
        assert loss == pytest.approx(np.sum(np.abs(holder["z"]) ** 2) / sig**2, rel=1e-12)

    def test_analytic_score_is_scalar_optimal(self):
        # Gaussian prior over every bin the loss sums; common random draws
        # across candidate gains give a smooth loss curve with argmin at 1
        sig_s, t = 0.5, 0.3
        shape = (260, 4)
        gains = np.linspace(0.6, 1.4, 9)
        totals = np.zeros_like(gains)
        for trial in range(120):
            r = np.random.default_rng(trial)
            spec = Spectrogram(sig_s * iid_noise_fn(shape)(r), StftConfig(), 4 * 128 + 384)
            for gi, g in enumerate(gains):
                fn = lambda s_t, sigma, cond: g * analytic_gaussian_score(s_t, t, sig_s, SCHED)
                totals[gi] += score_matching_loss(
                    fn, spec, None, t, SCHED, np.random.default_rng(10_000 + trial),
                    noise_fn=iid_noise_fn(shape),
                )
        assert gains[int(np.argmin(totals))] == pytest.approx(1.0, abs=0.11)


class TestLangevinStep:
    def test_eps_one_fully_deterministic(self, rng):
        cfg = SamplerConfig(n_steps=3, epsilon=1.0)
        s = toy_spec(fill=0.5)
        calls = {"n": 0}

        def counting_noise(r):
            calls["n"] += 1
            return np.zeros_like(s.bins)

        langevin_step(s, SCHED.t_max, lambda *a: np.zeros_like(s.bins), None,
                      cfg, SCHED, rng, noise_fn=counting_noise)
        assert calls["n"] == 0  # beta == 0 never draws noise

    def test_n1_closed_form_coefficients(self):
        cfg = SamplerConfig(n_steps=1, epsilon=1.0)
        s = toy_spec(fill=1.0)
        sig = sigma_at(SCHED, 0.3)
        out = langevin_step(
            s, 0.3, lambda s_t, sigma, cond: -s_t, None, cfg, SCHED,
            np.random.default_rng(0),
        )
        eta = 1.0 - 500.0 ** (-0.3)
        assert np.allclose(out.bins, s.bins * (1.0 - eta * sig**2), rtol=1e-12)

    def test_zero_score_beta_zero_identity(self, rng):
        cfg = SamplerConfig(n_steps=2, epsilon=1.0)
        s = toy_spec(fill=0.7 - 0.2j)
        out = langevin_step(s, SCHED.t_max, lambda *a: np.zeros_like(s.bins),
                            None, cfg, SCHED, rng)
        assert np.array_equal(out.bins, s.bins)

    def test_off_grid_time_rejected(self, rng):
        cfg = SamplerConfig(n_steps=3, epsilon=1.0)
        with pytest.raises(ConfigError, match="grid"):
            langevin_step(toy_spec(), 0.17, lambda *a: 0, None, cfg, SCHED, rng)


class TestReverseSample:
    def test_single_mode_bit_equals_single_step(self):
        s_cond = toy_spec(fill=0.4 + 0.1j)
        fn = lambda s_t, sigma, cond: -s_t / (1.0 + sigma**2)
        for seed in range(20):
            a = reverse_sample(fn, None, SamplerConfig(1, 1.0), SCHED,
                               np.random.default_rng(seed), init=s_cond, mode="single")
            b = single_step_enhance(s_cond, fn, None, SCHED, np.random.default_rng(seed))
            assert np.array_equal(a.bins, b.bins)

    def test_single_mode_requires_init_and_one_step(self):
        fn = lambda s_t, sigma, cond: -s_t
        with pytest.raises(ConfigError, match="init"):
            reverse_sample(fn, None, SamplerConfig(1, 1.0), SCHED,
                           np.random.default_rng(0), mode="single")
        with pytest.raises(ConfigError, match="n_steps"):
            reverse_sample(fn, None, SamplerConfig(2, 1.0), SCHED,
                           np.random.default_rng(0), init=toy_spec(), mode="single")

    def test_zero_score_beta_zero_n1_returns_s_t(self):
        s = toy_spec()
        fn = lambda s_t, sigma, cond: np.zeros_like(s_t)
        holder = {}

        def capture(r):
            holder.setdefault("z", iid_noise_fn(s.bins.shape)(r))
            return holder["z"]

        out = reverse_sample(fn, None, SamplerConfig(1, 1.0), SCHED,
                             np.random.default_rng(0), template=s, mode="multi",
                             noise_fn=capture)
        sig_t = sigma_at(SCHED, SCHED.t_max)
        assert np.allclose(out.bins, sig_t * holder["z"])

    def test_gaussian_sampler_matches_prior_distribution(self):
        # init from a perfect conditioner draw, eps=2 (reverse-SDE level noise)
        sig_s = 0.5
        cfg = SamplerConfig(n_steps=30, epsilon=2.0)
        rng = np.random.default_rng(5)
        tmpl = toy_spec()
        nf = iid_noise_fn(tmpl.bins.shape)
        fn = lambda s_t, sigma, cond: -s_t / (sig_s**2 + sigma**2)
        vals = []
        for _ in range(300):
            init = tmpl.with_bins(sig_s * nf(rng))
            out = reverse_sample(fn, None, cfg, SCHED, rng, init=init,
                                 mode="multi", noise_fn=nf)
            vals.append(out.bins[:64])
        vals = np.asarray(vals)
        var = 0.5 * (np.var(vals.real) + np.var(vals.imag))
        assert var == pytest.approx(sig_s**2, rel=0.10)

    def test_gaussian_flow_map_closed_form(self):
        # beta=0 trajectory realizes the probability-flow shrinkage; its
        # N -> inf limit is sqrt((v0/vT)) down the schedule then the final
        # Tweedie factor at sigma(0)
        sig_s = 0.5
        cfg = SamplerConfig(n_steps=4000, epsilon=1.0)
        init = toy_spec(fill=1.0)
        fn = lambda s_t, sigma, cond: -s_t / (sig_s**2 + sigma**2)
        out = reverse_sample(fn, None, cfg, SCHED, np.random.default_rng(0),
                             init=init, mode="multi",
                             noise_fn=lambda r: np.zeros_like(init.bins))
        s0, s_t = SCHED.sigma_min, sigma_at(SCHED, SCHED.t_max)
        v0, v_t = sig_s**2 + s0**2, sig_s**2 + s_t**2
        predicted = np.sqrt(v0 / v_t) * sig_s**2 / v0
        assert out.bins[0, 0].real == pytest.approx(predicted, rel=1e-3)


class TestSingleStepEnhance:
    def test_perfect_score_fixed_point(self):
        s_cond = toy_spec(fill=0.3 - 0.6j)
        holder = {}

        def capture(r):
            holder["z"] = iid_noise_fn(s_cond.bins.shape)(r)
            return holder["z"]

        def perfect(s_t, sigma, cond):
            return -holder["z"] / sigma

        out = single_step_enhance(s_cond, perfect, None, SCHED,
                                  np.random.default_rng(1), noise_fn=capture)
        assert np.max(np.abs(out.bins - s_cond.bins)) < 1e-12

    def test_zero_score_zero_noise_identity(self):
        s_cond = toy_spec(fill=0.9)
        out = single_step_enhance(
            s_cond, lambda s_t, sigma, cond: np.zeros_like(s_t), None, SCHED,
            np.random.default_rng(0), noise_fn=lambda r: np.zeros_like(s_cond.bins),
        )
        assert np.array_equal(out.bins, s_cond.bins)

    def test_triangle_norm_bound(self, rng):
        s_cond = toy_spec(fill=0.2 + 0.1j)
        holder = {}

        def capture(r):
            holder["z"] = iid_noise_fn(s_cond.bins.shape)(r)
            return holder["z"]

        fn = lambda s_t, sigma, cond: -0.3 * s_t
        out = single_step_enhance(s_cond, fn, None, SCHED, rng, noise_fn=capture)
        sig_t = sigma_at(SCHED, SCHED.t_max)
        s_big_t = s_cond.bins + sig_t * holder["z"]
        bound = sig_t * np.linalg.norm(holder["z"]) + sig_t**2 * np.linalg.norm(0.3 * s_big_t)
        assert np.linalg.norm(out.bins - s_cond.bins) <= bound + 1e-12


class TestPrecondition:
    def test_sigma_to_zero_approaches_identity(self):
        wrap = precondition(lambda x, c, cond: np.full_like(x, 7.0), sigma_data=0.5)
        c_skip, c_out, _c_in, _ = wrap.scalings(1e-9)
        assert c_skip == pytest.approx(1.0, abs=1e-12)
        assert c_out == pytest.approx(0.0, abs=1e-9)
        s_t = np.ones((4, 4), dtype=complex)
        assert np.allclose(wrap.denoise(s_t, 1e-9, None), s_t, atol=1e-8)

    def test_unit_variance_scaling_algebra(self):
        sd = 0.5
        wrap = precondition(lambda x, c, cond: x, sigma_data=sd)
        for sigma in (0.01, sd, 2.0):
            _, _, c_in, _ = wrap.scalings(sigma)
            assert c_in**2 * (sigma**2 + sd**2) == pytest.approx(1.0, rel=1e-12)

    def test_zero_raw_net_gives_skip_path(self):
        sd = 0.4
        wrap = precondition(lambda x, c, cond: np.zeros_like(x), sigma_data=sd)
        s_t = np.array([[1.0 + 2.0j, -0.5j]])
        sigma = 0.3
        expected = sd**2 / (sigma**2 + sd**2) * s_t
        assert np.allclose(wrap.denoise(s_t, sigma, None), expected, rtol=1e-12)

    def test_score_view_consistent_with_denoiser(self):
        wrap = precondition(lambda x, c, cond: 0.5 * x, sigma_data=0.5)
        s_t = np.array([0.4 + 0.2j, -1.0 + 0.0j])
        sigma = 0.2
        d = wrap.denoise(s_t, sigma, None)
        assert np.allclose(wrap(s_t, sigma, None), (d - s_t) / sigma**2)

    def test_noise_embedding_is_quarter_log_sigma(self):
        wrap = precondition(lambda x, c, cond: x, sigma_data=1.0)
        assert wrap.scalings(0.3)[3] == pytest.approx(np.log(0.3) / 4.0)

    def test_invalid_sigma_data_rejected(self):
        with pytest.raises(ConfigError):
            precondition(lambda *a: None, sigma_data=0.0)


def test_estimate_sigma_data():
    rng = np.random.default_rng(0)
    bins = 0.8 * (rng.standard_normal((260, 50)) + 1j * rng.standard_normal((260, 50)))
    est = estimate_sigma_data([Spectrogram(bins, StftConfig(), 7000)])
    assert est == pytest.approx(0.8, rel=0.02)


def test_final_estimate_formula():
    s = toy_spec(fill=1.0)
    out = final_estimate(s, 0.1, lambda s_t, sigma, cond: -s_t, None)
    assert np.allclose(out.bins, s.bins * (1 - 0.01), rtol=1e-12)
