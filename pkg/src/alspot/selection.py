"""Active-learning scoring and batch selection.

Two uncertainty scores over model confidences:

- ``um_score``: 1 - 2*|p - 0.5|, peaked where the top-class confidence sits
  at 0.5, applied to the maximum class probability;
- ``em_score``: Shannon entropy of the class distribution (natural log,
  0*log 0 = 0), peaked at the uniform prediction.

Frame-head scores are pooled per clip with mean or max before ranking.
Random selection is the passive baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .data import Clip, ConfigurationError

STRATEGY_RANDOM = "rs"
STRATEGY_UNCERTAINTY = "um"
STRATEGY_ENTROPY = "em"
STRATEGIES = (STRATEGY_RANDOM, STRATEGY_UNCERTAINTY, STRATEGY_ENTROPY)

AGGREGATIONS = ("mean", "max")

ClipRef = tuple[str, int]


@dataclass(frozen=True)
class ActiveScore:
    video_id: str
    clip_index: int
    score: float

    @property
    def ref(self) -> ClipRef:
        return (self.video_id, self.clip_index)


@dataclass
class SelectionConfig:
    strategy: str = STRATEGY_ENTROPY
    aggregation: str = "max"  # frame head only
    budget: int = 1
    seed: int | None = None  # random strategy only
    include_background: bool = True  # entropy over all K+1 entries vs action classes only
    um_probe: str = "top"  # top | action_max

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"unknown aggregation {self.aggregation!r}")
        if self.budget < 1:
            raise ConfigurationError("budget must be >= 1")
        if self.um_probe not in ("top", "action_max"):
            raise ConfigurationError(f"unknown um_probe {self.um_probe!r}")


def um_score(p: float) -> float:
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"probability out of range: {p!r}")
    return 1.0 - 2.0 * abs(p - 0.5)


def _entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def em_score(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0.0):
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities must sum to 1, got {p.sum()!r}")
    return _entropy(p)


def aggregate_frame_scores(values, mode: str) -> float:
    values = list(values)
    if not values:
        raise ValueError("cannot aggregate an empty score list")
    if mode == "mean":
        return float(np.mean(values))
    if mode == "max":
        return float(np.max(values))
    raise ConfigurationError(f"unknown aggregation {mode!r}")


def _probe_probs(probs: np.ndarray, config: SelectionConfig) -> np.ndarray:
    """Top-class probability per row, either overall or action classes only."""
    if config.um_probe == "action_max":
        return probs[..., :-1].max(axis=-1)
    return probs.max(axis=-1)


def _row_scores(probs: np.ndarray, config: SelectionConfig) -> np.ndarray:
    """Per-row AL score for a (n, K+1) probability matrix."""
    if config.strategy == STRATEGY_UNCERTAINTY:
        p = _probe_probs(probs, config)
        return 1.0 - 2.0 * np.abs(p - 0.5)
    body = probs if config.include_background else probs[..., :-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(body > 0.0, body * np.log(body), 0.0)
    return -terms.sum(axis=-1)


def score_pool(params: mdl.ModelParams, pool: list[Clip],
               config: SelectionConfig) -> list[ActiveScore]:
    """AL score per unlabeled clip, in (video_id, clip_index) order."""
    config.validate()
    if config.strategy == STRATEGY_RANDOM:
        raise ConfigurationError("random selection does not score the pool")
    if not pool:
        raise ConfigurationError("pool is empty")
    out = []
    for clip in sorted(pool, key=lambda c: c.ref):
        if params.head_mode == mdl.HEAD_FRAME:
            probs = mdl.predict_frames(params, clip)
            score = aggregate_frame_scores(_row_scores(probs, config), config.aggregation)
        else:
            probs = mdl.predict_clip(params, clip)
            score = float(_row_scores(probs[None, :], config)[0])
        out.append(ActiveScore(clip.video_id, clip.clip_index, score))
    return out


def select_top_k(scores: list[ActiveScore], budget: int) -> list[ClipRef]:
    """The ``budget`` highest-scoring clips; ties break on (video_id, clip_index)."""
    ranked = sorted(scores, key=lambda s: (-s.score, s.video_id, s.clip_index))
    chosen = ranked[:min(budget, len(ranked))]
    return sorted(s.ref for s in chosen)


def select_random(pool: list[ClipRef], budget: int, seed: int) -> list[ClipRef]:
    """Uniform sample without replacement, deterministic given the seed."""
    ordered = sorted(pool)
    take = min(budget, len(ordered))
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ordered), size=take, replace=False)
    return sorted(ordered[i] for i in idx)
