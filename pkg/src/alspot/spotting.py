"""Turning per-frame class scores into discrete timestamped detections.

Greedy 1-D non-maximum suppression: repeatedly take the globally highest
remaining score above the threshold, emit a detection at that frame's
center time, and knock out every frame within the suppression window.
Video-level inference tiles the video into clips, runs the model per clip,
concatenates scores, and suppresses per class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as mdl
from .data import Video, segment_video


@dataclass(frozen=True)
class PredictedSpot:
    class_id: int
    time: float
    confidence: float


def nms_1d(scores: np.ndarray, frame_rate: float, window: float,
           threshold: float = 0.0, class_id: int = 0,
           top_n: int | None = None) -> list[PredictedSpot]:
    """Suppress one class's frame scores into detections.

    Emits at most ``top_n`` detections with confidence strictly above
    ``threshold``; any two detections end up more than ``window`` seconds
    apart.  Ties on the maximum resolve to the earliest frame.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    work = scores.copy()
    times = (np.arange(scores.shape[0]) + 0.5) / frame_rate
    out: list[PredictedSpot] = []
    limit = len(scores) if top_n is None else top_n
    while len(out) < limit:
        i = int(np.argmax(work))
        conf = work[i]
        if not conf > threshold:
            break
        out.append(PredictedSpot(class_id=class_id, time=float(times[i]), confidence=float(conf)))
        work[np.abs(times - times[i]) <= window] = -np.inf
    return out


def infer_video(params: mdl.ModelParams, video: Video, frames_per_clip: int,
                nms_window: float, threshold: float = 0.0,
                top_n_per_class: int = 200) -> list[PredictedSpot]:
    """Detections for every action class over a full video.

    The frame head scores each frame; the clip head broadcasts its clip
    score to all frames of the clip before suppression.
    """
    if video.feature_dim != params.feature_dim:
        raise mdl.ConfigurationError(
            f"feature dim mismatch: video has {video.feature_dim}, model has {params.feature_dim}")
    clips = segment_video(video, frames_per_clip)
    if params.head_mode == mdl.HEAD_FRAME:
        scores = np.vstack([mdl.predict_frames(params, c) for c in clips])
    else:
        scores = np.vstack([np.tile(mdl.predict_clip(params, c), (c.num_frames, 1))
                            for c in clips])
    spots: list[PredictedSpot] = []
    for k in range(params.num_classes):  # background column is never spotted
        spots.extend(nms_1d(scores[:, k], video.frame_rate, nms_window,
                            threshold, class_id=k, top_n=top_n_per_class))
    spots.sort(key=lambda s: (-s.confidence, s.class_id, s.time))
    return spots


def save_predictions(predictions: dict[str, list[PredictedSpot]], path: str | Path) -> None:
    """One JSON record per spot: {video_id, class_id, time, confidence}."""
    with Path(path).open("w") as fh:
        for video_id in sorted(predictions):
            for s in predictions[video_id]:
                fh.write(json.dumps({"video_id": video_id, "class_id": s.class_id,
                                     "time": s.time, "confidence": s.confidence}) + "\n")


def load_predictions(path: str | Path) -> dict[str, list[PredictedSpot]]:
    out: dict[str, list[PredictedSpot]] = {}
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.setdefault(rec["video_id"], []).append(
                PredictedSpot(int(rec["class_id"]), float(rec["time"]), float(rec["confidence"])))
    return out
