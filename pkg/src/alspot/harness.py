"""The pool-based active-learning loop.

One run owns a dataset, a labeled set L and an unlabeled pool U over the
training clips, and repeats: train on L, evaluate on the held-out test
split, score U with the current model, select a batch, have the oracle
label it, and merge it into L.  The first batch is always drawn at random
since no model exists yet.

Budgets are percents of the full training universe.  Each round targets a
cumulative percent (so curves hit whole-percent ratios exactly); the fixed
schedule adds a constant percent per round, the adaptive schedule grows the
step from 1% to 2% at 15% labeled, 5% at 25%, and 10% at 40%.

Everything is deterministic given the master seed: weight init, random
selection, batch order, and therefore every emitted artifact except the
wall-clock timings (kept out of the curve file for that reason).
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import metrics, model as mdl, selection as sel, spotting
from .data import (Clip, ConfigurationError, Dataset, LABEL_FULL, LABEL_WEAK, Spot, Video,
                   load_dataset, round_half_up, segment_video, spots_in_clip, spots_in_window)

ADAPTIVE_TIERS = ((0.15, 1.0), (0.25, 2.0), (0.40, 5.0))
ADAPTIVE_FINAL = 10.0


@dataclass
class ScheduleConfig:
    kind: str = "fixed"  # fixed | adaptive
    percent: float = 1.0

    def validate(self) -> None:
        if self.kind not in ("fixed", "adaptive"):
            raise ConfigurationError(f"unknown schedule {self.kind!r}")
        if self.kind == "fixed" and not (0.0 < self.percent <= 100.0):
            raise ConfigurationError("fixed schedule percent must be in (0, 100]")


@dataclass
class StopConfig:
    kind: str = "pool_exhausted"  # pool_exhausted | target_avg_map | max_steps
    target: float | None = None
    max_steps: int | None = None

    def validate(self) -> None:
        if self.kind not in ("pool_exhausted", "target_avg_map", "max_steps"):
            raise ConfigurationError(f"unknown stop condition {self.kind!r}")
        if self.kind == "target_avg_map" and not (self.target and 0.0 < self.target <= 1.0):
            raise ConfigurationError("target_avg_map needs a target in (0, 1]")
        if self.kind == "max_steps" and not (self.max_steps and self.max_steps >= 1):
            raise ConfigurationError("max_steps must be >= 1")


@dataclass
class ALConfig:
    dataset_path: str | None = None
    name: str | None = None
    strategy: str = sel.STRATEGY_ENTROPY
    aggregation: str = "max"
    include_background: bool = True
    um_probe: str = "top"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: mdl.TrainConfig = field(default_factory=mdl.TrainConfig)
    label_kind: str = LABEL_FULL
    oracle: str = "simulated"  # simulated | remote
    eval_regime: str = "loose"
    stop: StopConfig = field(default_factory=StopConfig)
    master_seed: int = 0
    nms_window: float = 1.0
    detection_threshold: float = 0.0
    top_n_per_class: int = 200
    oracle_timeout: float | None = None
    restart_on_divergence: bool = False

    def validate(self) -> None:
        if self.strategy not in sel.STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.aggregation not in sel.AGGREGATIONS:
            raise ConfigurationError(f"unknown aggregation {self.aggregation!r}")
        if self.label_kind not in (LABEL_FULL, LABEL_WEAK):
            raise ConfigurationError(f"oracle cannot grant label_kind {self.label_kind!r}")
        if self.label_kind == LABEL_WEAK and self.train.head_mode == mdl.HEAD_FRAME:
            raise ConfigurationError(
                "weak labels carry no timestamps; frame-head training is undefined")
        if self.eval_regime not in metrics.REGIMES:
            raise ConfigurationError(f"unknown eval regime {self.eval_regime!r}")
        if self.oracle not in ("simulated", "remote"):
            raise ConfigurationError(f"unknown oracle kind {self.oracle!r}")
        self.schedule.validate()
        self.stop.validate()

    def label(self) -> str:
        if self.name:
            return self.name
        bits = [self.strategy]
        if self.strategy != sel.STRATEGY_RANDOM and self.train.head_mode == mdl.HEAD_FRAME:
            bits.append(self.aggregation)
        bits.append(self.schedule.kind if self.schedule.kind == "adaptive"
                    else f"fixed{self.schedule.percent:g}")
        bits.append(self.train.paradigm)
        return "-".join(bits)


def config_to_dict(config: ALConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> ALConfig:
    d = dict(d)
    if "schedule" in d and isinstance(d["schedule"], dict):
        d["schedule"] = ScheduleConfig(**d["schedule"])
    if "stop" in d and isinstance(d["stop"], dict):
        d["stop"] = StopConfig(**d["stop"])
    if "train" in d and isinstance(d["train"], dict):
        d["train"] = mdl.TrainConfig(**d["train"])
    return ALConfig(**d)


# ---------------------------------------------------------------------------
# step schedule


def next_step_size(labeled_ratio: float, schedule: ScheduleConfig) -> float:
    """Percent of the training universe to annotate in the next round."""
    if not (0.0 <= labeled_ratio < 1.0):
        raise ValueError(f"labeled_ratio out of range: {labeled_ratio!r}")
    if schedule.kind == "fixed":
        return schedule.percent
    for bound, pct in ADAPTIVE_TIERS:
        if labeled_ratio < bound:
            return pct
    return ADAPTIVE_FINAL


def count_annotation_rounds(schedule: ScheduleConfig, universe: int) -> int:
    """Rounds (seed batch included) to label the whole universe."""
    labeled = 0
    target_pct = 0.0
    rounds = 0
    while labeled < universe:
        target_pct = min(target_pct + next_step_size(labeled / universe, schedule), 100.0)
        target = min(universe, round_half_up(target_pct / 100.0 * universe))
        labeled += max(1, target - labeled)
        rounds += 1
    return rounds


# ---------------------------------------------------------------------------
# oracles


@dataclass
class AnnotationRequest:
    """What the oracle sees for one clip awaiting labels."""

    step: int
    video_id: str
    clip_index: int
    start_time: float
    duration: float
    class_catalog: dict[int, str]
    energy_sketch: list[int]
    suggestions: list[spotting.PredictedSpot]


class SimulatedOracle:
    """Answers annotation requests straight from the dataset's ground truth."""

    def __init__(self, dataset: Dataset):
        self._videos = {v.video_id: v for v in dataset.videos}

    def annotate(self, requests: list[AnnotationRequest]) -> list[list[Spot]]:
        out = []
        for req in requests:
            video = self._videos.get(req.video_id)
            if video is None:
                raise KeyError(f"clip {req.video_id}/{req.clip_index} is not in the dataset")
            if req.start_time + req.duration > video.duration + 1e-9:
                raise KeyError(f"clip {req.video_id}/{req.clip_index} exceeds the video")
            out.append(spots_in_window(video.spots, req.start_time,
                                       req.start_time + req.duration))
        return out


def attach_labels(clip: Clip, spots: list[Spot], label_kind: str) -> Clip:
    """Labeled copy of the clip; weak labels keep only the class set."""
    ordered = sorted(spots, key=lambda s: (s.time, s.class_id))
    for s in ordered:
        if not (0.0 <= s.time < clip.duration):
            raise ValueError(f"label time {s.time!r} outside clip {clip.ref}")
    if label_kind == LABEL_FULL:
        return dataclasses.replace(clip, label_kind=LABEL_FULL, labels=ordered)
    if label_kind == LABEL_WEAK:
        classes = tuple(sorted({s.class_id for s in ordered}))
        return dataclasses.replace(clip, label_kind=LABEL_WEAK, label_classes=classes)
    raise ConfigurationError(f"cannot attach labels of kind {label_kind!r}")


def simulated_oracle_annotate(clips: list[Clip], dataset: Dataset,
                              label_kind: str) -> list[Clip]:
    """Label clips with ground truth, full spots or weak class presence."""
    oracle = SimulatedOracle(dataset)
    requests = [AnnotationRequest(0, c.video_id, c.clip_index, c.start_time, c.duration,
                                  {}, [], []) for c in clips]
    return [attach_labels(c, spots, label_kind)
            for c, spots in zip(clips, oracle.annotate(requests))]


def energy_sketch(frames: np.ndarray, levels: int = 8) -> list[int]:
    """Per-frame feature magnitude quantized to ``levels`` buckets."""
    energy = np.linalg.norm(frames.astype(np.float64), axis=1)
    lo, hi = energy.min(), energy.max()
    if hi - lo < 1e-12:
        return [0] * len(energy)
    q = np.floor((energy - lo) / (hi - lo) * levels).astype(int)
    return [int(v) for v in np.minimum(q, levels - 1)]


def clip_suggestions(params: mdl.ModelParams | None, clip: Clip, nms_window: float,
                     threshold: float = 0.2, top_n: int = 20) -> list[spotting.PredictedSpot]:
    """Current model's detections inside one clip, clip-relative times."""
    if params is None:
        return []
    if params.head_mode == mdl.HEAD_FRAME:
        scores = mdl.predict_frames(params, clip)
    else:
        scores = np.tile(mdl.predict_clip(params, clip), (clip.num_frames, 1))
    out = []
    for k in range(params.num_classes):
        out.extend(spotting.nms_1d(scores[:, k], clip.frame_rate, nms_window,
                                   threshold, class_id=k, top_n=top_n))
    out.sort(key=lambda s: (-s.confidence, s.class_id, s.time))
    return out


# ---------------------------------------------------------------------------
# evaluation


def evaluate_model(params: mdl.ModelParams, videos: list[Video], frames_per_clip: int,
                   nms_window: float, threshold: float, top_n_per_class: int) -> dict:
    preds = {v.video_id: spotting.infer_video(params, v, frames_per_clip, nms_window,
                                              threshold, top_n_per_class)
             for v in sorted(videos, key=lambda v: v.video_id)}
    groups = [(preds[v.video_id], v.spots) for v in sorted(videos, key=lambda v: v.video_id)]
    return {
        "loose": metrics.avg_map_grouped(groups, "loose"),
        "tight": metrics.avg_map_grouped(groups, "tight"),
        "predictions": preds,
        "groups": groups,
    }


# ---------------------------------------------------------------------------
# the loop


@dataclass
class CurveRow:
    step: int
    labeled_ratio: float
    labeled_clips: int
    loose_avg_map: float
    tight_avg_map: float

    def value(self, regime: str) -> float:
        return self.loose_avg_map if regime == "loose" else self.tight_avg_map


@dataclass
class ALResult:
    config: ALConfig
    curve: list[CurveRow]
    model: mdl.ModelParams | None
    report: dict
    out_dir: Path | None

    def curve_points(self, regime: str | None = None) -> metrics.LearningCurve:
        regime = regime or self.config.eval_regime
        return metrics.LearningCurve(
            [metrics.CurvePoint(r.labeled_ratio, r.value(regime)) for r in self.curve])


def _selection_seed(master_seed: int, round_index: int) -> int:
    return int(np.random.SeedSequence([master_seed, 0xA1, round_index]).generate_state(1)[0])


def _write_curve_csv(rows: list[CurveRow], path: Path) -> None:
    with path.open("w") as fh:
        fh.write("step,labeled_ratio,labeled_clips,loose_avg_map,tight_avg_map\n")
        for r in rows:
            fh.write(f"{r.step},{r.labeled_ratio!r},{r.labeled_clips},"
                     f"{r.loose_avg_map!r},{r.tight_avg_map!r}\n")


def _write_selection_csv(step: int, scores: list[sel.ActiveScore] | None,
                         batch: list[sel.ClipRef], pool: list[sel.ClipRef],
                         path: Path) -> None:
    chosen = set(batch)
    with path.open("w") as fh:
        fh.write("step,video_id,clip_index,score,selected_flag\n")
        if scores is None:  # random strategy scores nothing
            for ref in sorted(pool):
                fh.write(f"{step},{ref[0]},{ref[1]},,{int(ref in chosen)}\n")
        else:
            for s in scores:
                fh.write(f"{step},{s.video_id},{s.clip_index},{s.score!r},"
                         f"{int(s.ref in chosen)}\n")


def _build_report(config: ALConfig, rows: list[CurveRow], final_eval: dict | None,
                  universe: int, status: str, error: str | None = None) -> dict:
    report: dict = {
        "status": status,
        "run": config.label(),
        "universe_clips": universe,
        "curve_points": len(rows),
    }
    if error:
        report["error"] = error
    if rows:
        curve = [(r.labeled_ratio, r.value(config.eval_regime)) for r in rows]
        report["final"] = {
            "labeled_ratio": rows[-1].labeled_ratio,
            "loose_avg_map": rows[-1].loose_avg_map,
            "tight_avg_map": rows[-1].tight_avg_map,
        }
        report["aulc"] = metrics.aulc(curve) if len(rows) >= 2 else None
        md = {}
        for x in (5, 10):
            try:
                md[str(x)] = metrics.md_at(curve, x)
            except ValueError:
                md[str(x)] = None
        report["md"] = md
        report["mp"] = {str(y): metrics.mp_at(curve, y) for y in (90, 99)}
    if final_eval is not None:
        report["per_class_ap"] = {
            str(k): v for k, v in metrics.per_class_ap_grouped(
                final_eval["groups"], config.eval_regime).items()}
    return report


def run_active_learning(config: ALConfig, dataset: Dataset | None = None,
                        oracle=None, on_phase=None,
                        out_dir: str | Path | None = None) -> ALResult:
    """Run one active-learning experiment end to end.

    ``oracle`` defaults to the simulated one; anything with a compatible
    ``annotate`` method (e.g. the annotation service bridge) can stand in.
    ``on_phase`` is called with ("training" | "selecting" | "curve_point" |
    "done" | "failed", payload) as the loop advances.
    """
    config.validate()
    if dataset is None:
        if not config.dataset_path:
            raise ConfigurationError("config has no dataset_path and no dataset was passed")
        dataset = load_dataset(config.dataset_path)
    notify = on_phase or (lambda phase, payload: None)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "resolved_config.json").open("w") as fh:
            json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
            fh.write("\n")

    ds_cfg = dataset.config
    catalog = ds_cfg.catalog()
    frames_per_clip = ds_cfg.frames_per_clip
    train_cfg = dataclasses.replace(config.train, seed=config.master_seed)
    sel_cfg = sel.SelectionConfig(strategy=config.strategy, aggregation=config.aggregation,
                                  include_background=config.include_background,
                                  um_probe=config.um_probe)

    train_videos = dataset.videos_for("train")
    valid_videos = dataset.videos_for("valid")
    test_videos = dataset.videos_for("test")
    if not train_videos or not valid_videos or not test_videos:
        raise ConfigurationError("dataset must populate train, valid and test splits")

    clip_by_ref: dict[sel.ClipRef, Clip] = {}
    for v in sorted(train_videos, key=lambda v: v.video_id):
        for c in segment_video(v, frames_per_clip):
            clip_by_ref[c.ref] = c
    universe = len(clip_by_ref)
    valid_clips = simulated_oracle_annotate(
        [c for v in sorted(valid_videos, key=lambda v: v.video_id)
         for c in segment_video(v, frames_per_clip)],
        dataset, config.label_kind)

    if oracle is None:
        oracle = SimulatedOracle(dataset)

    labeled: dict[sel.ClipRef, Clip] = {}
    pool: set[sel.ClipRef] = set(clip_by_ref)
    rows: list[CurveRow] = []
    timings: list[tuple[int, float]] = []
    params: mdl.ModelParams | None = None
    target_pct = 0.0
    finished = "completed"
    error_text = None

    def annotate_batch(step: int, batch: list[sel.ClipRef]) -> None:
        requests = []
        for ref in batch:
            clip = clip_by_ref[ref]
            requests.append(AnnotationRequest(
                step=step, video_id=clip.video_id, clip_index=clip.clip_index,
                start_time=clip.start_time, duration=clip.duration,
                class_catalog=catalog, energy_sketch=energy_sketch(clip.frames),
                suggestions=clip_suggestions(params, clip, config.nms_window)))
        answers = oracle.annotate(requests)
        for ref, spots in zip(batch, answers):
            labeled[ref] = attach_labels(clip_by_ref[ref], spots, config.label_kind)
            pool.discard(ref)

    def next_budget() -> int:
        nonlocal target_pct
        ratio = len(labeled) / universe
        target_pct = min(target_pct + next_step_size(ratio, config.schedule), 100.0)
        target = min(universe, round_half_up(target_pct / 100.0 * universe))
        return min(max(1, target - len(labeled)), len(pool))

    try:
        # seed batch: random regardless of strategy, no model exists yet
        notify("selecting", {"step": 0})
        seed_batch = sel.select_random(sorted(pool), next_budget(),
                                       _selection_seed(config.master_seed, 0))
        annotate_batch(0, seed_batch)

        step = 0
        while True:
            t0 = time.perf_counter()
            notify("training", {"step": step, "labeled_clips": len(labeled)})
            train_input = sorted(labeled.values(), key=lambda c: c.ref)
            init = params if train_cfg.paradigm == "continual" else None
            try:
                params, log = mdl.train(train_input, valid_clips, train_cfg, init=init,
                                        num_classes=ds_cfg.num_classes)
            except mdl.DivergenceError:
                if not config.restart_on_divergence:
                    raise
                params, log = mdl.train(train_input, valid_clips, train_cfg, init=None,
                                        num_classes=ds_cfg.num_classes)
            if out is not None:
                log.to_csv(out / f"train_log_step_{step:03d}.csv")

            ev = evaluate_model(params, test_videos, frames_per_clip, config.nms_window,
                                config.detection_threshold, config.top_n_per_class)
            row = CurveRow(step=step, labeled_ratio=len(labeled) / universe,
                           labeled_clips=len(labeled),
                           loose_avg_map=ev["loose"], tight_avg_map=ev["tight"])
            rows.append(row)
            timings.append((step, time.perf_counter() - t0))
            notify("curve_point", {"row": row})
            if out is not None:
                _write_curve_csv(rows, out / "curve.csv")

            if not pool:
                break
            if config.stop.kind == "target_avg_map" and row.value(config.eval_regime) >= config.stop.target:
                break
            if config.stop.kind == "max_steps" and len(rows) >= config.stop.max_steps:
                break

            notify("selecting", {"step": step + 1})
            budget = next_budget()
            pool_refs = sorted(pool)
            if config.strategy == sel.STRATEGY_RANDOM:
                scores = None
                batch = sel.select_random(pool_refs, budget,
                                          _selection_seed(config.master_seed, step + 1))
            else:
                scores = sel.score_pool(params, [clip_by_ref[r] for r in pool_refs], sel_cfg)
                batch = sel.select_top_k(scores, budget)
            if out is not None:
                _write_selection_csv(step + 1, scores, batch, pool_refs,
                                     out / f"selection_step_{step + 1:03d}.csv")
            annotate_batch(step + 1, batch)
            step += 1
    except mdl.DivergenceError as e:
        finished = "diverged"
        error_text = str(e)
        report = _build_report(config, rows, None, universe, finished, error_text)
        if out is not None:
            _write_artifacts(out, rows, timings, report, params=None, final_eval=None)
        notify("failed", {"error": error_text})
        raise
    except Exception as e:
        finished = "failed"
        error_text = str(e)
        report = _build_report(config, rows, None, universe, finished, error_text)
        if out is not None:
            _write_artifacts(out, rows, timings, report, params=None, final_eval=None)
        notify("failed", {"error": error_text})
        raise

    final_eval = evaluate_model(params, test_videos, frames_per_clip, config.nms_window,
                                config.detection_threshold, config.top_n_per_class)
    report = _build_report(config, rows, final_eval, universe, finished)
    if out is not None:
        _write_artifacts(out, rows, timings, report, params, final_eval)
    result = ALResult(config=config, curve=rows, model=params, report=report, out_dir=out)
    notify("done", {"report": report})
    return result


def _write_artifacts(out: Path, rows, timings, report, params, final_eval) -> None:
    _write_curve_csv(rows, out / "curve.csv")
    with (out / "timings.csv").open("w") as fh:
        fh.write("step,wall_seconds\n")
        for step, secs in timings:
            fh.write(f"{step},{secs:.3f}\n")
    with (out / "report.json").open("w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if params is not None:
        mdl.save_checkpoint(params, out / "model.ckpt")
    if final_eval is not None:
        spotting.save_predictions(final_eval["predictions"], out / "predictions.jsonl")


# ---------------------------------------------------------------------------
# strategy comparison


def compare_strategies(configs: list[ALConfig], seeds: list[int],
                       dataset: Dataset | None = None,
                       out_dir: str | Path | None = None) -> dict:
    """Run each config over each seed and tabulate curve metrics.

    A config wins a seed when it has that seed's highest AULC.  Mp medians
    treat never-reached thresholds as worse than any ratio and render "-".
    """
    if len(configs) < 2:
        raise ConfigurationError("need at least two configs to compare")
    paths = {c.dataset_path for c in configs}
    if len(paths) != 1:
        raise ConfigurationError("configs must share one dataset")
    if dataset is None:
        dataset = load_dataset(configs[0].dataset_path)

    runs: dict[str, dict[int, dict]] = {}
    for config in configs:
        label = config.label()
        runs[label] = {}
        for seed_value in seeds:
            cfg = dataclasses.replace(config, master_seed=seed_value)
            result = run_active_learning(cfg, dataset=dataset)
            runs[label][seed_value] = result.report

    wins = {label: 0 for label in runs}
    for seed_value in seeds:
        best = max(runs[label][seed_value]["aulc"] for label in runs)
        for label in runs:
            if runs[label][seed_value]["aulc"] == best:
                wins[label] += 1

    def _median(values: list[float | None]) -> float:
        return float(np.median([math.inf if v is None else v for v in values]))

    rows = []
    for label, by_seed in runs.items():
        reports = [by_seed[s] for s in seeds]
        rows.append({
            "run": label,
            "seeds": len(seeds),
            "aulc_mean": float(np.mean([r["aulc"] for r in reports])),
            "md5_mean": _mean_or_none([r["md"]["5"] for r in reports]),
            "md10_mean": _mean_or_none([r["md"]["10"] for r in reports]),
            "mp90_median": _median([r["mp"]["90"] for r in reports]),
            "mp99_median": _median([r["mp"]["99"] for r in reports]),
            "aulc_wins": wins[label],
        })
    table = render_comparison(rows)
    out = {"rows": rows, "per_seed": runs, "table": table}
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        with (out_path / "report.json").open("w") as fh:
            json.dump({"rows": rows, "per_seed": runs}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        (out_path / "report.txt").write_text(table)
    return out


def _mean_or_none(values: list[float | None]) -> float | None:
    known = [v for v in values if v is not None]
    return float(np.mean(known)) if known else None


def _fmt_pct(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isinf(value)):
        return "-"
    return f"{100.0 * value:.2f}"


def render_comparison(rows: list[dict]) -> str:
    header = f"{'run':<28} {'AULC':>7} {'Md@5':>7} {'Md@10':>7} {'Mp@90':>7} {'Mp@99':>7} {'wins':>5}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['run']:<28} {_fmt_pct(r['aulc_mean']):>7} {_fmt_pct(r['md5_mean']):>7} "
            f"{_fmt_pct(r['md10_mean']):>7} {_fmt_pct(r['mp90_median']):>7} "
            f"{_fmt_pct(r['mp99_median']):>7} {r['aulc_wins']:>5}")
    return "\n".join(lines) + "\n"
