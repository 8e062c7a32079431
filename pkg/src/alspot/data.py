"""Synthetic per-frame feature sequences with timestamped event annotations.

Each "video" is a matrix of D-dimensional feature vectors at a fixed frame
rate.  Events deposit a class-specific signature vector onto the frames
around their timestamp, with linearly decaying magnitude, on top of Gaussian
background noise.  Videos are segmented into fixed-length non-overlapping
clips, the unit of labeling and selection.

Datasets persist as newline-delimited JSON: one header record (schema
version, generator config, split assignment) followed by one record per
video with base64-packed float32 frames.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

LABEL_UNLABELED = "unlabeled"
LABEL_WEAK = "weak"
LABEL_FULL = "full"


class ConfigurationError(ValueError):
    """Invalid generator or run configuration."""


class SegmentationError(ValueError):
    """Video cannot be tiled into fixed-length clips."""


class DatasetParseError(ValueError):
    """Dataset file is malformed, truncated, or has an unsupported schema."""


def round_half_up(x: float) -> int:
    """Deterministic rounding, half away from zero (round() is half-even)."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, order=True)
class Spot:
    """One event occurrence: class id and timestamp in seconds."""

    class_id: int
    time: float


@dataclass
class Video:
    video_id: str
    frame_rate: float
    frames: np.ndarray  # (num_frames, D) float32
    spots: list[Spot]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return self.num_frames / self.frame_rate


@dataclass
class Clip:
    """Fixed-length window of a video.

    ``labels`` holds clip-relative spots when label_kind is "full";
    ``label_classes`` holds the deduplicated class set when "weak".
    """

    video_id: str
    clip_index: int
    start_time: float
    frame_rate: float
    frames: np.ndarray  # (J, D) float32
    label_kind: str = LABEL_UNLABELED
    labels: list[Spot] | None = None
    label_classes: tuple[int, ...] | None = None

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.num_frames / self.frame_rate

    @property
    def ref(self) -> tuple[str, int]:
        return (self.video_id, self.clip_index)


@dataclass
class SyntheticConfig:
    num_videos: int
    clips_per_video: int
    frames_per_clip: int
    feature_dim: int
    num_classes: int
    frame_rate: float = 2.0
    # scalar applies to every class; a list gives one rate per class
    events_per_minute: float | list[float] = 2.0
    signature_footprint: int = 5  # frames; also the minimum event separation
    signature_amplitude: float | list[float] = 1.0
    noise_std: float = 0.5
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    class_names: list[str] | None = None

    def validate(self) -> None:
        if min(self.num_videos, self.clips_per_video, self.frames_per_clip,
               self.feature_dim, self.num_classes) <= 0:
            raise ConfigurationError("counts and dimensions must be positive")
        if self.frame_rate <= 0:
            raise ConfigurationError("frame_rate must be positive")
        if np.any(self.rates() <= 0):
            raise ConfigurationError("event rates must be positive")
        if self.signature_footprint < 1:
            raise ConfigurationError("signature_footprint must be >= 1")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be non-negative")
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios) \
                or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigurationError("split_ratios must be three non-negative values summing to 1")

    def rates(self) -> np.ndarray:
        r = self.events_per_minute
        if isinstance(r, (int, float)):
            return np.full(self.num_classes, float(r))
        arr = np.asarray(r, dtype=float)
        if arr.shape != (self.num_classes,):
            raise ConfigurationError("events_per_minute list must have one entry per class")
        return arr

    def amplitudes(self) -> np.ndarray:
        a = self.signature_amplitude
        if isinstance(a, (int, float)):
            return np.full(self.num_classes, float(a))
        arr = np.asarray(a, dtype=float)
        if arr.shape != (self.num_classes,):
            raise ConfigurationError("signature_amplitude list must have one entry per class")
        return arr

    def catalog(self) -> dict[int, str]:
        if self.class_names is not None:
            if len(self.class_names) != self.num_classes:
                raise ConfigurationError("class_names must have one entry per class")
            return dict(enumerate(self.class_names))
        return {k: f"class_{k}" for k in range(self.num_classes)}


@dataclass
class DatasetSplit:
    train: list[str]
    valid: list[str]
    test: list[str]


@dataclass
class Dataset:
    config: SyntheticConfig
    videos: list[Video]
    splits: DatasetSplit

    def video(self, video_id: str) -> Video:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def videos_for(self, split: str) -> list[Video]:
        ids = getattr(self.splits, split)
        by_id = {v.video_id: v for v in self.videos}
        return [by_id[i] for i in ids]


def class_signatures(config: SyntheticConfig) -> np.ndarray:
    """Per-class signature vectors (K, D), drawn once per dataset seed.

    Orthonormal rows via QR when D >= K, unit-norm Gaussian rows otherwise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x51]))
    k, d = config.num_classes, config.feature_dim
    g = rng.normal(size=(d, max(k, 1)))
    if d >= k:
        q, _ = np.linalg.qr(g)
        sig = q[:, :k].T
    else:
        sig = rng.normal(size=(k, d))
        sig /= np.linalg.norm(sig, axis=1, keepdims=True)
    return np.ascontiguousarray(sig)


def _place_events(rng: np.random.Generator, config: SyntheticConfig) -> list[tuple[int, int]]:
    """Sample (class_id, frame_index) events for one video.

    Per-class Poisson counts, then sequential placement rejecting any frame
    closer than one footprint to an already placed event.  Events that do
    not fit after repeated tries are dropped.
    """
    n_frames = config.clips_per_video * config.frames_per_clip
    minutes = n_frames / config.frame_rate / 60.0
    counts = rng.poisson(config.rates() * minutes)
    class_list = np.repeat(np.arange(config.num_classes), counts)
    rng.shuffle(class_list)
    min_sep = config.signature_footprint
    placed_frames: list[int] = []
    events: list[tuple[int, int]] = []
    for k in class_list:
        for _ in range(100):
            f = int(rng.integers(0, n_frames))
            if all(abs(f - p) >= min_sep for p in placed_frames):
                placed_frames.append(f)
                events.append((int(k), f))
                break
    return events


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Build a dataset deterministically from the config (seed included)."""
    config.validate()
    signatures = class_signatures(config)
    amps = config.amplitudes()
    n_frames = config.clips_per_video * config.frames_per_clip
    fps = config.frame_rate
    footprint = config.signature_footprint

    videos = []
    for i in range(config.num_videos):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, i]))
        events = _place_events(rng, config)
        frames = rng.normal(0.0, config.noise_std, size=(n_frames, config.feature_dim))
        spots = []
        for k, f in events:
            spots.append(Spot(class_id=k, time=(f + 0.5) / fps))
            for d in range(-footprint + 1, footprint):
                j = f + d
                if 0 <= j < n_frames:
                    w = 1.0 - abs(d) / footprint
                    frames[j] += amps[k] * w * signatures[k]
        spots.sort(key=lambda s: (s.time, s.class_id))
        videos.append(Video(
            video_id=f"video_{i:03d}",
            frame_rate=fps,
            frames=frames.astype(np.float32),
            spots=spots,
        ))

    n_train = round_half_up(config.split_ratios[0] * config.num_videos)
    n_valid = round_half_up(config.split_ratios[1] * config.num_videos)
    n_train = min(n_train, config.num_videos)
    n_valid = min(n_valid, config.num_videos - n_train)
    ids = [v.video_id for v in videos]
    splits = DatasetSplit(
        train=ids[:n_train],
        valid=ids[n_train:n_train + n_valid],
        test=ids[n_train + n_valid:],
    )
    return Dataset(config=config, videos=videos, splits=splits)


def segment_video(video: Video, frames_per_clip: int) -> list[Clip]:
    """Tile a video into unlabeled clips of exactly ``frames_per_clip`` frames."""
    if frames_per_clip < 1:
        raise SegmentationError("frames_per_clip must be >= 1")
    if video.num_frames % frames_per_clip != 0:
        raise SegmentationError(
            f"{video.video_id}: {video.num_frames} frames not divisible by {frames_per_clip}")
    clips = []
    for n in range(video.num_frames // frames_per_clip):
        lo = n * frames_per_clip
        clips.append(Clip(
            video_id=video.video_id,
            clip_index=n,
            start_time=n * frames_per_clip / video.frame_rate,
            frame_rate=video.frame_rate,
            frames=video.frames[lo:lo + frames_per_clip],
        ))
    return clips


def spots_in_window(video_spots: list[Spot], start: float, end: float) -> list[Spot]:
    """Spots falling in the half-open window [start, end), shifted to window-relative."""
    return [Spot(s.class_id, s.time - start) for s in video_spots if start <= s.time < end]


def spots_in_clip(video_spots: list[Spot], clip: Clip) -> list[Spot]:
    """Spots falling in the clip's half-open window, shifted clip-relative."""
    return spots_in_window(video_spots, clip.start_time, clip.start_time + clip.duration)


# ---------------------------------------------------------------------------
# persistence


def _encode_frames(frames: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(frames, dtype=np.float32).tobytes()).decode("ascii")


def _decode_frames(blob: str, num_frames: int, dim: int, line: int) -> np.ndarray:
    raw = base64.b64decode(blob.encode("ascii"))
    expected = num_frames * dim * 4
    if len(raw) != expected:
        raise DatasetParseError(f"line {line}: frame payload has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.float32).reshape(num_frames, dim).copy()


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    header = {
        "schema": SCHEMA_VERSION,
        "kind": "alspot-dataset",
        "num_videos": len(dataset.videos),
        "config": asdict(dataset.config),
        "splits": asdict(dataset.splits),
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for v in dataset.videos:
            fh.write(json.dumps({
                "video_id": v.video_id,
                "fps": v.frame_rate,
                "feature_dim": v.feature_dim,
                "num_frames": v.num_frames,
                "frames_b64": _encode_frames(v.frames),
                "spots": [{"k": s.class_id, "t": s.time} for s in v.spots],
            }) + "\n")


def _parse_record(text: str, line: int) -> dict:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetParseError(f"line {line}: invalid record ({e.msg})") from e
    if not isinstance(rec, dict):
        raise DatasetParseError(f"line {line}: record is not an object")
    return rec


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetParseError("line 1: empty file")
    header = _parse_record(lines[0], 1)
    if header.get("schema") != SCHEMA_VERSION:
        raise DatasetParseError(f"line 1: unsupported schema version {header.get('schema')!r}")
    try:
        cfg_dict = dict(header["config"])
        cfg_dict["split_ratios"] = tuple(cfg_dict["split_ratios"])
        config = SyntheticConfig(**cfg_dict)
        splits = DatasetSplit(**header["splits"])
        declared = int(header["num_videos"])
    except (KeyError, TypeError) as e:
        raise DatasetParseError(f"line 1: malformed header ({e})") from e

    videos = []
    for i, text in enumerate(lines[1:], start=2):
        rec = _parse_record(text, i)
        try:
            frames = _decode_frames(rec["frames_b64"], int(rec["num_frames"]),
                                    int(rec["feature_dim"]), i)
            spots = [Spot(int(s["k"]), float(s["t"])) for s in rec["spots"]]
            videos.append(Video(
                video_id=rec["video_id"],
                frame_rate=float(rec["fps"]),
                frames=frames,
                spots=spots,
            ))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, DatasetParseError):
                raise
            raise DatasetParseError(f"line {i}: malformed video record ({e})") from e
    if len(videos) != declared:
        raise DatasetParseError(
            f"line {len(lines)}: file truncated, {len(videos)} of {declared} videos present")
    return Dataset(config=config, videos=videos, splits=splits)
