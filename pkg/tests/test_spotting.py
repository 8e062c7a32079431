import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alspot import model as mdl
from alspot.data import generate_synthetic, segment_video
from alspot.harness import simulated_oracle_annotate
from alspot.spotting import (PredictedSpot, infer_video, load_predictions, nms_1d,
                             save_predictions)
from conftest import small_dataset_config


class TestNms:
    def test_single_peak(self):
        scores = np.zeros(20)
        scores[8:13] = [0.2, 0.6, 0.9, 0.6, 0.2]  # triangular peak at frame 10
        out = nms_1d(scores, frame_rate=2.0, window=1.0, threshold=0.1)
        assert len(out) == 1
        assert out[0].time == pytest.approx((10 + 0.5) / 2.0)
        assert out[0].confidence == pytest.approx(0.9)

    def test_two_far_peaks_both_kept(self):
        scores = np.zeros(40)
        scores[5] = 0.7
        scores[5 + 12] = 0.7  # 6 s apart at 2 fps, 3x the 2 s window
        out = nms_1d(scores, frame_rate=2.0, window=2.0, threshold=0.1)
        assert len(out) == 2

    def test_close_peaks_suppressed(self):
        # peaks 0.9 and 0.8 half a second apart, window 1 s: by hand, the 0.9
        # pick suppresses every frame within +-1 s, which swallows the 0.8
        scores = np.zeros(20)
        scores[8] = 0.9
        scores[9] = 0.8
        out = nms_1d(scores, frame_rate=2.0, window=1.0, threshold=0.0)
        times = [(8 + 0.5) / 2.0, (9 + 0.5) / 2.0]
        assert times[1] - times[0] == pytest.approx(0.5)
        assert [s.confidence for s in out if s.confidence > 0] == [pytest.approx(0.9)]

    def test_threshold_is_strict(self):
        out = nms_1d(np.full(10, 0.5), frame_rate=2.0, window=1.0, threshold=0.5)
        assert out == []

    def test_output_sorted_by_confidence(self):
        rng = np.random.default_rng(0)
        out = nms_1d(rng.uniform(size=200), 2.0, window=1.0, threshold=0.2)
        confs = [s.confidence for s in out]
        assert confs == sorted(confs, reverse=True)

    def test_top_n_cap(self):
        out = nms_1d(np.linspace(0.1, 0.9, 100), 2.0, window=0.6, threshold=0.0, top_n=5)
        assert len(out) == 5


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), window=st.floats(0.5, 5.0))
def test_nms_properties(seed, window):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(size=80)
    out = nms_1d(scores, frame_rate=2.0, window=window, threshold=0.3)
    times = sorted(s.time for s in out)
    # a) spacing: any two detections are more than `window` apart
    assert all(b - a > window for a, b in zip(times, times[1:]))
    # b) confidences are a subset of the input scores
    assert all(any(np.isclose(s.confidence, v) for v in scores) for s in out)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_lowering_threshold_only_extends(seed):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(size=60)
    hi = nms_1d(scores, 2.0, window=1.0, threshold=0.6)
    lo = nms_1d(scores, 2.0, window=1.0, threshold=0.2)
    assert lo[:len(hi)] == hi


class TestInferVideo:
    def test_zero_weight_model_no_spots_above_half(self, small_dataset):
        params = mdl.init_params(8, 2, mdl.HEAD_FRAME, hidden_dim=8, seed=0)
        for t in params.tensors().values():
            t[:] = 0.0
        out = infer_video(params, small_dataset.videos[0], 20, nms_window=1.0, threshold=0.5)
        assert out == []

    def test_trained_toy_model_finds_single_event(self, toy_sets):
        ds, train_clips, valid_clips = toy_sets
        tc = mdl.TrainConfig(paradigm="scratch", scheduler="fast", max_epochs=60, seed=5)
        params, _ = mdl.train(train_clips, valid_clips, tc, num_classes=2)
        video = ds.videos_for("test")[0]
        out = infer_video(params, video, 30, nms_window=1.0, threshold=0.5)
        for spot in video.spots:
            close = [p for p in out if p.class_id == spot.class_id
                     and abs(p.time - spot.time) <= 1.0]
            assert close, f"no detection within 1 s of {spot}"

    def test_clip_head_suppression_bound(self, small_dataset):
        params = mdl.init_params(8, 2, mdl.HEAD_CLIP, hidden_dim=8, seed=1)
        video = small_dataset.videos[0]
        out = infer_video(params, video, 20, nms_window=1.0, threshold=0.0)
        window_count = int(np.ceil(video.duration / 1.0))
        for k in (0, 1):
            assert sum(1 for s in out if s.class_id == k) <= window_count

    def test_background_never_spotted(self, small_dataset):
        params = mdl.init_params(8, 2, mdl.HEAD_FRAME, hidden_dim=8, seed=2)
        out = infer_video(params, small_dataset.videos[0], 20, nms_window=1.0)
        assert all(0 <= s.class_id < 2 for s in out)


def test_predictions_round_trip(tmp_path):
    preds = {
        "video_b": [PredictedSpot(0, 1.25, 0.5)],
        "video_a": [PredictedSpot(1, 0.25, 0.9), PredictedSpot(0, 3.75, 0.125)],
    }
    path = tmp_path / "preds.jsonl"
    save_predictions(preds, path)
    back = load_predictions(path)
    assert back["video_a"] == preds["video_a"]
    assert back["video_b"] == preds["video_b"]
