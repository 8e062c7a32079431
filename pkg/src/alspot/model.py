"""Desk-scale trainable spotting model.

A two-layer perceptron maps each frame's context window (the concatenation
of 2w+1 neighboring frames, edge-clamped) to K+1 class logits, background
last.  Two heads share the same parameters:

- frame head: one softmax row per frame, targets from timestamped labels
  (a frame is positive for the nearest event within ``positive_radius``);
- clip head: one softmax over the clip, input is the mean frame feature
  tiled across the context window, targets are the normalized class-presence
  multi-hot (weak supervision, no localization).

Training is bit-deterministic: clips are sorted by (video_id, clip_index)
before batching, batch order is fixed, weights come from a seeded RNG, and
all arithmetic is float64.  Checkpoints pack tensors as float32.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Clip, ConfigurationError, LABEL_FULL, LABEL_WEAK

HEAD_FRAME = "frame"
HEAD_CLIP = "clip"

CHECKPOINT_SCHEMA = 1

# Adam caps the per-step movement at the LR, so a runaway LR inflates the
# loss polynomially instead of overflowing to inf; a weighted cross-entropy
# anywhere near this bound can only mean the optimizer blew up (legitimate
# values stay below ~10 even at random init).
DIVERGENCE_LOSS_LIMIT = 1e6

SCHEDULER_PRESETS = {
    # scheduler -> (initial_lr, min_lr, plateau_patience)
    "original": (1e-3, 1e-8, 10),
    "fast": (1e-2, 1e-4, 5),
}


class DivergenceError(RuntimeError):
    """Training loss became non-finite or exploded."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    paradigm: str = "scratch"  # scratch | continual
    scheduler: str = "fast"  # original | fast
    initial_lr: float | None = None
    min_lr: float | None = None
    plateau_patience: int | None = None
    plateau_factor: float = 10.0
    max_epochs: int = 150
    bootstrap_epochs: int = 20
    finetune_epochs: int = 5
    finetune_lr: float = 1e-2
    batch_size: int = 256
    seed: int = 0
    head_mode: str = HEAD_FRAME
    hidden_dim: int = 64
    context: int = 2  # half-width w; window is 2w+1 frames
    positive_radius: float = 0.5  # seconds

    def __post_init__(self):
        if self.scheduler not in SCHEDULER_PRESETS:
            raise ConfigurationError(f"unknown scheduler {self.scheduler!r}")
        lr0, lr_min, patience = SCHEDULER_PRESETS[self.scheduler]
        if self.initial_lr is None:
            self.initial_lr = lr0
        if self.min_lr is None:
            self.min_lr = lr_min
        if self.plateau_patience is None:
            self.plateau_patience = patience
        if self.paradigm not in ("scratch", "continual"):
            raise ConfigurationError(f"unknown paradigm {self.paradigm!r}")
        if self.head_mode not in (HEAD_FRAME, HEAD_CLIP):
            raise ConfigurationError(f"unknown head_mode {self.head_mode!r}")
        if not (self.initial_lr > self.min_lr > 0):
            raise ConfigurationError("need initial_lr > min_lr > 0")
        if self.plateau_patience < 1:
            raise ConfigurationError("plateau_patience must be >= 1")


@dataclass
class ModelParams:
    w1: np.ndarray  # (in_dim, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, K+1)
    b2: np.ndarray  # (K+1,)
    context: int
    feature_dim: int
    num_classes: int  # K action classes; output width is K+1
    head_mode: str

    @property
    def input_dim(self) -> int:
        return (2 * self.context + 1) * self.feature_dim

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "ModelParams":
        return ModelParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
                           self.context, self.feature_dim, self.num_classes, self.head_mode)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors().values())


def init_params(feature_dim: int, num_classes: int, head_mode: str,
                hidden_dim: int = 64, context: int = 2, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    in_dim = (2 * context + 1) * feature_dim
    out_dim = num_classes + 1
    w1 = rng.normal(0.0, math.sqrt(2.0 / in_dim), size=(in_dim, hidden_dim))
    w2 = rng.normal(0.0, math.sqrt(2.0 / hidden_dim), size=(hidden_dim, out_dim))
    return ModelParams(w1, np.zeros(hidden_dim), w2, np.zeros(out_dim),
                       context, feature_dim, num_classes, head_mode)


# ---------------------------------------------------------------------------
# inputs and targets


def frame_inputs(frames: np.ndarray, context: int) -> np.ndarray:
    """(J, D) frames -> (J, (2w+1)*D) context windows, edges clamped."""
    j = frames.shape[0]
    offsets = np.arange(-context, context + 1)
    idx = np.clip(np.arange(j)[:, None] + offsets[None, :], 0, j - 1)
    return frames[idx].reshape(j, -1).astype(np.float64)


def clip_input(frames: np.ndarray, context: int) -> np.ndarray:
    """Order-invariant clip feature: mean frame tiled across the window."""
    mean = frames.astype(np.float64).mean(axis=0)
    return np.tile(mean, 2 * context + 1)


def frame_targets(clip: Clip, num_classes: int, positive_radius: float) -> np.ndarray:
    """(J, K+1) one-hot rows; nearest in-radius event wins, else background."""
    if clip.label_kind != LABEL_FULL:
        raise ConfigurationError(
            f"frame targets need full labels, clip {clip.ref} is {clip.label_kind}")
    j = clip.num_frames
    q = np.zeros((j, num_classes + 1))
    centers = (np.arange(j) + 0.5) / clip.frame_rate
    best = np.full(j, np.inf)
    cls = np.full(j, num_classes)  # background index
    for s in clip.labels or []:
        d = np.abs(centers - s.time)
        hit = (d <= positive_radius) & (d < best)
        best[hit] = d[hit]
        cls[hit] = s.class_id
    q[np.arange(j), cls] = 1.0
    return q


def clip_target(clip: Clip, num_classes: int) -> np.ndarray:
    """(K+1,) class-presence multi-hot normalized to a distribution."""
    if clip.label_kind == LABEL_FULL:
        present = sorted({s.class_id for s in clip.labels or []})
    elif clip.label_kind == LABEL_WEAK:
        present = sorted(clip.label_classes or ())
    else:
        raise ConfigurationError(f"clip {clip.ref} is unlabeled")
    q = np.zeros(num_classes + 1)
    if present:
        q[list(present)] = 1.0 / len(present)
    else:
        q[num_classes] = 1.0
    return q


# ---------------------------------------------------------------------------
# forward / backward


def _logits(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.maximum(x @ params.w1 + params.b1, 0.0)
    return h @ params.w2 + params.b2, h


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_probs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    z, _ = _logits(params, x)
    return _softmax(z)


def loss_and_gradients(params: ModelParams, x: np.ndarray, q: np.ndarray,
                       sample_weights: np.ndarray | None = None
                       ) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted-mean cross-entropy between softmax(logits) and target rows q.

    Uses log-sum-exp directly so the loss stays finite as long as the logits
    do, which keeps the divergence guard meaningful.
    """
    n = x.shape[0]
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    wsum = w.sum()
    z, h = _logits(params, x)
    zmax = z.max(axis=1, keepdims=True)
    lse = (zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1)))
    per_sample = lse - (q * z).sum(axis=1)
    loss = float((w * per_sample).sum() / wsum)

    p = _softmax(z)
    dz = (p - q) * (w / wsum)[:, None]
    dw2 = h.T @ dz
    db2 = dz.sum(axis=0)
    dh = dz @ params.w2.T
    dh[h <= 0.0] = 0.0
    dw1 = x.T @ dh
    db1 = dh.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def predict_frames(params: ModelParams, clip: Clip) -> np.ndarray:
    """Per-frame probabilities, (J, K+1); rows sum to 1."""
    if params.head_mode != HEAD_FRAME:
        raise ConfigurationError("predict_frames requires a frame-head model")
    if clip.frames.shape[1] != params.feature_dim:
        raise ConfigurationError(
            f"feature dim mismatch: clip has {clip.frames.shape[1]}, model has {params.feature_dim}")
    return forward_probs(params, frame_inputs(clip.frames, params.context))


def predict_clip(params: ModelParams, clip: Clip) -> np.ndarray:
    """Whole-clip probabilities, (K+1,)."""
    if params.head_mode != HEAD_CLIP:
        raise ConfigurationError("predict_clip requires a clip-head model")
    if clip.frames.shape[1] != params.feature_dim:
        raise ConfigurationError(
            f"feature dim mismatch: clip has {clip.frames.shape[1]}, model has {params.feature_dim}")
    return forward_probs(params, clip_input(clip.frames, params.context)[None, :])[0]


# ---------------------------------------------------------------------------
# LR schedule


@dataclass
class PlateauState:
    """Reduce-on-plateau: divide LR by ``factor`` after ``patience`` epochs
    without a relative validation-loss improvement of at least 1e-6; signal
    stop instead of dropping below ``min_lr``.
    """

    lr: float
    min_lr: float
    patience: int
    factor: float = 10.0
    best: float = math.inf
    stale: int = 0
    stop: bool = False

    REL_IMPROVEMENT = 1e-6

    def update(self, valid_loss: float) -> float:
        if valid_loss < self.best * (1.0 - self.REL_IMPROVEMENT):
            self.best = valid_loss
            self.stale = 0
            return self.lr
        self.stale += 1
        if self.stale >= self.patience:
            candidate = self.lr / self.factor
            if candidate < self.min_lr * (1.0 - 1e-9):
                self.stop = True
            else:
                self.lr = candidate
            self.stale = 0
        return self.lr


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float
    lr: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            fh.write("epoch,train_loss,valid_loss,lr\n")
            for r in self.records:
                fh.write(f"{r.epoch},{r.train_loss!r},{r.valid_loss!r},{r.lr!r}\n")


def plateau_scheduler_update(log: TrainingLog, config: TrainConfig) -> tuple[float, bool]:
    """Replay a log through the plateau rule; returns (current LR, stop flag)."""
    if not log.records:
        raise ConfigurationError("plateau update needs at least one recorded epoch")
    state = PlateauState(lr=config.initial_lr, min_lr=config.min_lr,
                         patience=config.plateau_patience, factor=config.plateau_factor)
    for r in log.records:
        state.update(r.valid_loss)
    return state.lr, state.stop


# ---------------------------------------------------------------------------
# training


def _sorted_clips(clips) -> list[Clip]:
    return sorted(clips, key=lambda c: (c.video_id, c.clip_index))


def _build_samples(clips: list[Clip], config: TrainConfig, num_classes: int
                   ) -> tuple[np.ndarray, np.ndarray]:
    if config.head_mode == HEAD_FRAME:
        xs = [frame_inputs(c.frames, config.context) for c in clips]
        qs = [frame_targets(c, num_classes, config.positive_radius) for c in clips]
        return np.vstack(xs), np.vstack(qs)
    xs = [clip_input(c.frames, config.context) for c in clips]
    qs = [clip_target(c, num_classes) for c in clips]
    return np.stack(xs), np.stack(qs)


def _background_weights(q: np.ndarray) -> np.ndarray:
    """Down-weight background-target samples by the positive/negative ratio.

    Background rows dominate on sparse data; without this the all-background
    model is a loss minimum.
    """
    is_bg = q[:, -1] > 0.5
    n_neg = int(is_bg.sum())
    n_pos = q.shape[0] - n_neg
    w = np.ones(q.shape[0])
    if n_pos > 0 and n_neg > 0:
        w[is_bg] = n_pos / n_neg
    return w


class _Adam:
    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors().items()}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, tensor in params.tensors().items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            tensor -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _check_finite(loss: float, params: ModelParams, epoch: int) -> None:
    if not math.isfinite(loss) or loss > DIVERGENCE_LOSS_LIMIT or not params.is_finite():
        raise DivergenceError(epoch, loss)


def train(labeled: list[Clip], valid: list[Clip], config: TrainConfig,
          init: ModelParams | None = None,
          num_classes: int | None = None) -> tuple[ModelParams, TrainingLog]:
    """Train on the labeled clips; validation drives the plateau scheduler.

    Scratch paradigm ignores ``init`` and trains a fresh model under the
    configured scheduler until the LR floor or max_epochs.  Continual
    paradigm trains at a fixed LR: ``bootstrap_epochs`` from fresh weights
    when ``init`` is None, else ``finetune_epochs`` starting from ``init``.

    ``num_classes`` should come from the dataset config; inferring it from
    the labels breaks when a rare class is absent from the labeled set.
    """
    if not labeled:
        raise ConfigurationError("labeled set is empty")
    if not valid:
        raise ConfigurationError("validation set is empty")
    clips = _sorted_clips(labeled)
    dims = {c.frames.shape[1] for c in clips + list(valid)}
    lens = {c.num_frames for c in clips + list(valid)}
    if len(dims) != 1 or len(lens) != 1:
        raise ConfigurationError("clips must share feature dim and length")
    if num_classes is None:
        num_classes = init.num_classes if init is not None else _infer_num_classes(clips, valid)
    elif init is not None and init.num_classes != num_classes:
        raise ConfigurationError("num_classes disagrees with the init model")

    x, q = _build_samples(clips, config, num_classes)
    w = _background_weights(q)
    xv, qv = _build_samples(_sorted_clips(valid), config, num_classes)
    wv = np.ones(xv.shape[0])
    if w.min() < 1.0:  # apply the train-set background ratio to validation too
        wv = np.where(qv[:, -1] > 0.5, w.min(), 1.0)

    continual = config.paradigm == "continual"
    if continual:
        if init is not None and config.finetune_epochs == 0:
            return init.copy(), TrainingLog()
        model = init.copy() if init is not None else init_params(
            x.shape[1] // (2 * config.context + 1), num_classes, config.head_mode,
            config.hidden_dim, config.context, config.seed)
        epochs = config.finetune_epochs if init is not None else config.bootstrap_epochs
        lr_state = None
        lr = config.finetune_lr
    else:
        model = init_params(x.shape[1] // (2 * config.context + 1), num_classes,
                            config.head_mode, config.hidden_dim, config.context, config.seed)
        epochs = config.max_epochs
        lr_state = PlateauState(lr=config.initial_lr, min_lr=config.min_lr,
                                patience=config.plateau_patience, factor=config.plateau_factor)
        lr = config.initial_lr

    adam = _Adam(model)
    log = TrainingLog()
    n = x.shape[0]
    bs = max(1, config.batch_size)
    for epoch in range(1, epochs + 1):
        loss_sum = 0.0
        weight_sum = 0.0
        for lo in range(0, n, bs):
            sl = slice(lo, min(lo + bs, n))
            loss, grads = loss_and_gradients(model, x[sl], q[sl], w[sl])
            _check_finite(loss, model, epoch)
            adam.step(model, grads, lr)
            _check_finite(loss, model, epoch)
            bw = w[sl].sum()
            loss_sum += loss * bw
            weight_sum += bw
        valid_loss, _ = loss_and_gradients(model, xv, qv, wv)
        _check_finite(valid_loss, model, epoch)
        log.records.append(EpochRecord(epoch, loss_sum / weight_sum, valid_loss, lr))
        if lr_state is not None:
            lr = lr_state.update(valid_loss)
            if lr_state.stop:
                break
    return model, log


def _infer_num_classes(labeled: list[Clip], valid: list[Clip]) -> int:
    seen = -1
    for c in list(labeled) + list(valid):
        if c.label_kind == LABEL_FULL:
            for s in c.labels or []:
                seen = max(seen, s.class_id)
        elif c.label_kind == LABEL_WEAK:
            for k in c.label_classes or ():
                seen = max(seen, k)
    if seen < 0:
        raise ConfigurationError(
            "cannot infer class count from all-background labels; pass init params")
    return seen + 1


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    if not params.is_finite():
        raise ValueError("refusing to write a checkpoint with non-finite parameters")
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "feature_dim": params.feature_dim,
        "context": params.context,
        "num_classes": params.num_classes,
        "head_mode": params.head_mode,
        "hidden_dim": params.w1.shape[1],
    }
    with Path(path).open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for name, tensor in params.tensors().items():
            packed = base64.b64encode(tensor.astype(np.float32).tobytes()).decode("ascii")
            fh.write(json.dumps({"name": name, "shape": list(tensor.shape), "data": packed}) + "\n")


def load_checkpoint(path: str | Path) -> ModelParams:
    with Path(path).open() as fh:
        lines = fh.read().splitlines()
    header = json.loads(lines[0])
    if header.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {header.get('schema')!r}")
    tensors = {}
    for text in lines[1:]:
        rec = json.loads(text)
        arr = np.frombuffer(base64.b64decode(rec["data"]), dtype=np.float32)
        tensors[rec["name"]] = arr.reshape(rec["shape"]).astype(np.float64)
    return ModelParams(tensors["w1"], tensors["b1"], tensors["w2"], tensors["b2"],
                       header["context"], header["feature_dim"],
                       header["num_classes"], header["head_mode"])
