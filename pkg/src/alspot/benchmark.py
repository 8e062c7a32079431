"""The frozen desk-scale benchmark used by the acceptance suite and scripts.

40 videos of 60 fifteen-second clips (30 frames at 2 fps), 16-dim features,
4 classes, splits 24/4/12.  Class difficulty is graded two ways: classes 0-2
get decreasing rates and signature strength, while class 3 is rare but has a
strong signature, so its detection quality is limited by how many examples
the labeled set contains rather than by noise.  That keeps the learning
curve rising through the mid ratios, which the strategy comparisons need.

Calibrated once; do not retune casually, the directional acceptance checks
are frozen against it.
"""

from __future__ import annotations

from . import harness, model as mdl
from .data import SyntheticConfig


def benchmark_synthetic_config(seed: int = 20240) -> SyntheticConfig:
    return SyntheticConfig(
        num_videos=40,
        clips_per_video=60,
        frames_per_clip=30,
        feature_dim=16,
        num_classes=4,
        frame_rate=2.0,
        events_per_minute=[0.4, 0.3, 0.15, 0.05],
        signature_footprint=5,
        signature_amplitude=[3.0, 2.4, 2.0, 3.0],
        noise_std=1.0,
        split_ratios=(0.6, 0.1, 0.3),
        seed=seed,
    )


def benchmark_al_config(strategy: str, master_seed: int = 0,
                        aggregation: str = "max",
                        dataset_path: str | None = None) -> harness.ALConfig:
    return harness.ALConfig(
        dataset_path=dataset_path,
        strategy=strategy,
        aggregation=aggregation,
        schedule=harness.ScheduleConfig(kind="adaptive"),
        train=mdl.TrainConfig(paradigm="continual", scheduler="fast",
                              head_mode=mdl.HEAD_FRAME, seed=master_seed),
        master_seed=master_seed,
        nms_window=1.0,
        detection_threshold=0.0,
        top_n_per_class=100,
    )
