import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handsfree.errors import ConfigError, DataError
from handsfree.losses import (
    LossConfig,
    ToyPipelineConfig,
    cc_mse,
    save_run_report,
    total_loss,
    toy_pipeline_train,
)
from handsfree.scenes import SceneRanges, generate_dataset, make_synthetic_pool
from handsfree.toyscore import lr_schedule


@pytest.fixture(scope="module")
def spec_pair():
    rng = np.random.default_rng(1)
    s = rng.standard_normal((64, 12)) + 1j * rng.standard_normal((64, 12))
    s_hat = s + 0.2 * (rng.standard_normal((64, 12)) + 1j * rng.standard_normal((64, 12)))
    return s_hat, s


class TestCcMse:
    def test_equal_arguments_zero(self, spec_pair):
        _, s = spec_pair
        assert cc_mse(s, s) == 0.0

    def test_degenerates_to_plain_complex_mse(self, spec_pair):
        s_hat, s = spec_pair
        cfg = LossConfig(blend=1.0, compression=1.0)
        assert cc_mse(s_hat, s, cfg) == pytest.approx(
            float(np.mean(np.abs(s - s_hat) ** 2)), rel=1e-12
        )

    def test_global_phase_rotation_invariance(self, spec_pair):
        s_hat, s = spec_pair
        rot = np.exp(1j * 1.2345)
        assert cc_mse(rot * s_hat, rot * s) == pytest.approx(cc_mse(s_hat, s), rel=1e-10)

    def test_single_argument_rotation_changes_loss(self, spec_pair):
        s_hat, s = spec_pair
        rot = np.exp(1j * np.pi / 2)
        assert cc_mse(rot * s_hat, s) != pytest.approx(cc_mse(s_hat, s), rel=1e-3)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_non_negative_and_zero_iff_equal(self, seed):
        r = np.random.default_rng(seed)
        a = r.standard_normal((8, 4)) + 1j * r.standard_normal((8, 4))
        b = r.standard_normal((8, 4)) + 1j * r.standard_normal((8, 4))
        assert cc_mse(a, b) > 0.0
        assert cc_mse(a, a) == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataError):
            cc_mse(np.zeros((2, 2), complex), np.zeros((2, 3), complex))

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig(compression=0.0)
        with pytest.raises(ConfigError):
            LossConfig(blend=1.5)


class TestTotalLoss:
    def test_perfect_estimates_zero(self, spec_pair):
        _, s = spec_pair
        assert total_loss(s, s, s, 0.0) == 0.0

    def test_alpha_zero_removes_score_term(self, spec_pair):
        s_hat, s = spec_pair
        cfg = LossConfig(alpha=0.0)
        assert total_loss(s, s_hat, s, 1e9, cfg) == pytest.approx(
            cc_mse(s_hat, s, cfg), rel=1e-12
        )

    def test_default_alpha_contribution(self, spec_pair):
        _, s = spec_pair
        assert total_loss(s, s, s, 2.0) == pytest.approx(0.01, abs=1e-15)

    def test_monotone_in_each_component(self, spec_pair):
        s_hat, s = spec_pair
        base = total_loss(s, s_hat, s, 1.0)
        assert total_loss(s_hat, s_hat, s, 1.0) > base  # worse conditioner
        assert total_loss(s, s_hat, s, 2.0) > base  # larger score loss


class TestLrSchedule:
    def test_shape(self):
        peak = 8e-4
        vals = [lr_schedule(s, 1000, peak) for s in range(1000)]
        assert vals[0] < peak  # warmup
        assert vals[200] == peak  # constant
        assert vals[-1] == pytest.approx(peak * 0.002, rel=0.3)  # floor
        assert max(vals) == peak


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    td = tmp_path_factory.mktemp("toyds")
    speech = make_synthetic_pool(td / "speech", 3, "speech", 2.2, seed=5)
    noise = make_synthetic_pool(td / "noise", 2, "pink", 2.2, seed=6)
    ranges = SceneRanges(duration_s=1.2, rt60_s=(0.2, 0.3), snr_db=(5.0, 10.0))
    return generate_dataset(4, ranges, td / "ds", 11, speech, noise)


class TestToyPipeline:
    def test_holdout_loss_strictly_decreases(self, tiny_manifest):
        cfg = ToyPipelineConfig(steps=1500, seed=3)
        report = toy_pipeline_train(tiny_manifest, cfg)
        assert report["holdout_loss_after"] < report["holdout_loss_before"]
        assert report["improved"]

    def test_zero_steps_echoes_initial_loss(self, tiny_manifest):
        cfg = ToyPipelineConfig(steps=0, seed=3)
        report = toy_pipeline_train(tiny_manifest, cfg)
        assert report["holdout_loss_after"] == report["holdout_loss_before"]
        assert report["loss_trace"] == []

    def test_same_seed_identical_traces(self, tiny_manifest):
        cfg = ToyPipelineConfig(steps=300, seed=9)
        a = toy_pipeline_train(tiny_manifest, cfg)
        b = toy_pipeline_train(tiny_manifest, cfg)
        assert a["loss_trace"] == b["loss_trace"]
        assert a["holdout_loss_after"] == b["holdout_loss_after"]

    def test_report_round_trips_as_json(self, tiny_manifest, tmp_path):
        report = toy_pipeline_train(tiny_manifest, ToyPipelineConfig(steps=50, seed=1))
        out = tmp_path / "report.json"
        save_run_report(report, out)
        assert out.exists() and "loss_trace" in out.read_text()
