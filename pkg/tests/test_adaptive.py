import numpy as np
import pytest
from scipy.signal import fftconvolve

from handsfree.adaptive import (
    FdkfConfig,
    FdkfFilter,
    NlmsFilter,
    compensate_delay,
    erle_db,
    erle_over_window,
    fdkf_cancel,
    gcc_phat_delay,
    nlms_cancel,
)
from handsfree.dsp import Waveform
from handsfree.errors import ConfigError, DataError, DivergenceError

FS = 16_000


def shifted(base: np.ndarray, lag: int) -> np.ndarray:
    if lag > 0:
        return np.concatenate([np.zeros(lag), base[:-lag]])
    if lag < 0:
        return np.concatenate([base[-lag:], np.zeros(-lag)])
    return base.copy()


@pytest.fixture(scope="module")
def echo_scene():
    """10 s white-noise far-end through a 64-tap path, no noise/near-end."""
    rng = np.random.default_rng(42)
    path = rng.standard_normal(64) * np.exp(-np.arange(64) / 20.0)
    path /= np.abs(path).sum()
    x = rng.standard_normal(10 * FS) * 0.3
    d = fftconvolve(x, path)[: 10 * FS]
    return Waveform(d), Waveform(x), path


class TestGccPhat:
    def test_identical_signals_zero_lag(self, rng):
        w = Waveform(rng.standard_normal(8000))
        assert gcc_phat_delay(w, w, max_lag=256) == 0

    @pytest.mark.parametrize("lag", [100, -50, 511, -512])
    def test_constructed_shift_exact(self, lag):
        base = np.random.default_rng(1).standard_normal(4 * FS) * 0.1
        mic = Waveform(shifted(base, lag))
        assert gcc_phat_delay(mic, Waveform(base), max_lag=512) == lag

    def test_exhaustive_small_range(self):
        base = np.random.default_rng(2).standard_normal(6000) * 0.1
        for lag in range(-32, 33):
            mic = Waveform(shifted(base, lag))
            assert gcc_phat_delay(mic, Waveform(base), max_lag=32) == lag

    def test_all_zero_rejected(self):
        with pytest.raises(DataError, match="all-zero"):
            gcc_phat_delay(Waveform(np.zeros(1000)), Waveform(np.ones(1000)), 100)

    def test_too_short_rejected(self):
        with pytest.raises(DataError):
            gcc_phat_delay(Waveform(np.ones(100)), Waveform(np.ones(100)), 100)


class TestCompensateDelay:
    def test_zero_lag_identity(self, rng):
        w = Waveform(rng.standard_normal(1000))
        r = Waveform(rng.standard_normal(1000))
        mic, ref = compensate_delay(w, r, 0)
        assert np.array_equal(ref.samples, r.samples)

    @pytest.mark.parametrize("lag", [100, -75])
    def test_compensation_idempotent(self, lag):
        base = np.random.default_rng(3).standard_normal(3 * FS) * 0.1
        mic = Waveform(shifted(base, lag))
        ref = Waveform(base)
        est = gcc_phat_delay(mic, ref, 256)
        mic2, ref2 = compensate_delay(mic, ref, est)
        assert gcc_phat_delay(mic2, ref2, 256) == 0

    def test_lag_beyond_length_rejected(self):
        with pytest.raises(ConfigError):
            compensate_delay(Waveform(np.ones(10)), Waveform(np.ones(10)), 10)


class TestNlms:
    def test_zero_farend_residual_is_mic(self, rng):
        mic = Waveform(rng.standard_normal(FS))
        est, resid = nlms_cancel(mic, Waveform(np.zeros(FS)), taps=64)
        assert np.array_equal(resid.samples, mic.samples)
        assert not est.samples.any()

    def test_zero_step_size_never_adapts(self, echo_scene):
        d, x, _ = echo_scene
        short = slice(0, FS)
        est, resid = nlms_cancel(
            Waveform(d.samples[short]), Waveform(x.samples[short]), taps=64, mu=0.0
        )
        assert not est.samples.any()
        assert np.array_equal(resid.samples, d.samples[short])

    def test_convergence_erle_final_second(self, echo_scene):
        d, x, _ = echo_scene
        _, resid = nlms_cancel(d, x, taps=2048, mu=0.3)
        assert erle_over_window(d, resid, 9.0, 10.0) >= 30.0

    def test_smoothed_residual_power_non_increasing(self, echo_scene):
        d, x, _ = echo_scene
        _, resid = nlms_cancel(d, x, taps=1024, mu=0.3)
        # 0.5 s windows after 1 s burn-in, 1 dB tolerance
        powers = [
            np.mean(resid.samples[int(a * FS) : int((a + 0.5) * FS)] ** 2)
            for a in np.arange(1.0, 9.5, 0.5)
        ]
        ratios = np.array(powers[1:]) / np.array(powers[:-1])
        assert np.all(ratios < 10 ** (1.0 / 10.0))

    def test_invalid_mu_rejected(self):
        with pytest.raises(ConfigError):
            nlms_cancel(Waveform(np.ones(10)), Waveform(np.ones(10)), mu=2.5)

    def test_divergence_detected_with_index(self):
        # zero-power reference with eps=0 drives the update to 0/0
        with pytest.raises(DivergenceError, match="index 0"):
            nlms_cancel(Waveform(np.ones(100)), Waveform(np.zeros(100)), taps=8, eps=0.0)


class TestFdkf:
    def test_zero_farend_residual_is_mic(self, rng):
        mic = Waveform(rng.standard_normal(FS))
        est, resid = fdkf_cancel(mic, Waveform(np.zeros(FS)))
        assert np.allclose(resid.samples, mic.samples)
        assert not est.samples.any()

    def test_convergence_and_faster_than_nlms(self, echo_scene):
        d, x, _ = echo_scene
        _, resid_k = fdkf_cancel(d, x)
        assert erle_over_window(d, resid_k, 9.0, 10.0) >= 30.0
        _, resid_n = nlms_cancel(d, x, taps=2048, mu=0.3)
        erle_k = erle_over_window(d, resid_k, 0.5, 1.5)
        erle_n = erle_over_window(d, resid_n, 0.5, 1.5)
        assert erle_k >= erle_n

    def test_reconvergence_after_path_switch(self, echo_scene):
        _, x, path = echo_scene
        rng = np.random.default_rng(9)
        path2 = rng.standard_normal(64) * np.exp(-np.arange(64) / 15.0)
        path2 /= np.abs(path2).sum()
        half = 5 * FS
        d = np.concatenate([
            fftconvolve(x.samples[:half], path)[:half],
            fftconvolve(x.samples[half:], path2)[:half],
        ])
        d = Waveform(d)
        _, resid = fdkf_cancel(d, x)
        assert erle_over_window(d, resid, 6.0, 7.0) >= 20.0

    def test_matches_nlms_zero_reference_contract(self, rng):
        mic = Waveform(rng.standard_normal(FS))
        zero = Waveform(np.zeros(FS))
        _, r_nlms = nlms_cancel(mic, zero, taps=32)
        _, r_fdkf = fdkf_cancel(mic, zero)
        assert np.allclose(r_nlms.samples, mic.samples)
        assert np.allclose(r_fdkf.samples, mic.samples)

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            FdkfConfig(block=511)
        with pytest.raises(ConfigError):
            FdkfConfig(transition=0.0)


class TestStreaming:
    def test_nlms_chunked_equals_one_shot(self, echo_scene):
        d, x, _ = echo_scene
        n = 2 * FS
        _, resid = nlms_cancel(
            Waveform(d.samples[:n]), Waveform(x.samples[:n]), taps=128, mu=0.4
        )
        dn, xn = d.samples[:n], x.samples[:n]
        filt = NlmsFilter(taps=128, mu=0.4)
        chunks = []
        for lo in range(0, n, 1111):
            _, e = filt.process(dn[lo : lo + 1111], xn[lo : lo + 1111])
            chunks.append(e)
        assert np.array_equal(np.concatenate(chunks), resid.samples)

    def test_fdkf_chunked_equals_one_shot(self, echo_scene):
        d, x, _ = echo_scene
        n = 2 * FS + 100  # not a whole block: exercises the flush path
        _, resid = fdkf_cancel(Waveform(d.samples[:n]), Waveform(x.samples[:n]))
        dn, xn = d.samples[:n], x.samples[:n]
        filt = FdkfFilter()
        parts = []
        for lo in range(0, n, 777):
            _, e = filt.process(dn[lo : lo + 777], xn[lo : lo + 777])
            parts.append(e)
        _, tail = filt.flush()
        parts.append(tail)
        assert np.array_equal(np.concatenate(parts), resid.samples)

    def test_segmented_gcc_matches_full_file(self):
        base = np.random.default_rng(4).standard_normal(5 * FS) * 0.1
        mic = Waveform(shifted(base, 123))
        ref = Waveform(base)
        assert gcc_phat_delay(mic, ref, 256, segment_s=1.0) == 123
        assert gcc_phat_delay(mic, ref, 256) == 123


class TestErle:
    def test_identity_residual_zero_db(self, rng):
        mic = Waveform(rng.standard_normal(1000))
        assert erle_db(mic, mic) == pytest.approx(0.0, abs=1e-12)

    def test_tenth_residual_is_20_db(self, rng):
        mic = Waveform(rng.standard_normal(1000))
        tenth = Waveform(mic.samples / 10.0)
        assert erle_db(mic, tenth) == pytest.approx(20.0, abs=1e-9)

    def test_silent_residual_inf(self, rng):
        mic = Waveform(rng.standard_normal(1000))
        assert erle_db(mic, Waveform(np.zeros(1000))) == float("inf")

    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            erle_db(Waveform(np.ones(10)), Waveform(np.ones(11)))
