import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from alspot.data import SyntheticConfig, generate_synthetic, segment_video
from alspot.harness import simulated_oracle_annotate
from alspot.model import TrainConfig


def small_dataset_config(**overrides) -> SyntheticConfig:
    base = dict(num_videos=8, clips_per_video=8, frames_per_clip=20, feature_dim=8,
                num_classes=2, frame_rate=2.0, events_per_minute=1.5, noise_std=0.5,
                signature_amplitude=2.0, seed=3, split_ratios=(0.5, 0.25, 0.25))
    base.update(overrides)
    return SyntheticConfig(**base)


# the frozen noiseless fixture behind the training-accuracy and divergence tests
TOY_CONFIG = SyntheticConfig(
    num_videos=6, clips_per_video=10, frames_per_clip=30, feature_dim=8,
    num_classes=2, frame_rate=2.0, events_per_minute=6.0, noise_std=0.0,
    signature_amplitude=1.0, seed=11, split_ratios=(0.7, 0.15, 0.15))


@pytest.fixture(scope="session")
def toy_sets():
    ds = generate_synthetic(TOY_CONFIG)
    train = simulated_oracle_annotate(
        [c for v in ds.videos_for("train") for c in segment_video(v, 30)], ds, "full")
    valid = simulated_oracle_annotate(
        [c for v in ds.videos_for("valid") for c in segment_video(v, 30)], ds, "full")
    return ds, train, valid


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(small_dataset_config())


def fast_train_config(**overrides) -> TrainConfig:
    base = dict(paradigm="continual", scheduler="fast", bootstrap_epochs=8,
                finetune_epochs=3, seed=0)
    base.update(overrides)
    return TrainConfig(**base)
