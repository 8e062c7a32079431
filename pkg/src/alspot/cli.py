"""Command-line entry points.

    alspot gen-data --config cfg.json --out dataset.jsonl
    alspot run --config run.json [--strategy em --aggregate max ...] --out dir
    alspot compare --configs dir --seeds 0,1,2 --out dir
    alspot eval --predictions preds.jsonl --dataset dataset.jsonl [--split test]
    alspot serve --config run.json --bind 127.0.0.1:8787 [--out dir]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness, metrics, spotting
from .data import SyntheticConfig, generate_synthetic, load_dataset, save_dataset


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _apply_overrides(config: harness.ALConfig, args) -> harness.ALConfig:
    if args.strategy:
        config.strategy = args.strategy
    if args.aggregate:
        config.aggregation = args.aggregate
    if args.schedule:
        if args.schedule == "adaptive":
            config.schedule = harness.ScheduleConfig(kind="adaptive")
        elif args.schedule.startswith("fixed:"):
            config.schedule = harness.ScheduleConfig(kind="fixed",
                                                     percent=float(args.schedule.split(":", 1)[1]))
        else:
            raise SystemExit(f"bad --schedule {args.schedule!r}; use adaptive or fixed:<pct>")
    if args.paradigm:
        config.train.paradigm = args.paradigm
    if args.oracle:
        config.oracle = args.oracle
    if args.seed is not None:
        config.master_seed = args.seed
    return config


def cmd_gen_data(args) -> int:
    cfg_dict = _load_json(args.config)
    if "split_ratios" in cfg_dict:
        cfg_dict["split_ratios"] = tuple(cfg_dict["split_ratios"])
    config = SyntheticConfig(**cfg_dict)
    dataset = generate_synthetic(config)
    save_dataset(dataset, args.out)
    total = sum(len(v.spots) for v in dataset.videos)
    print(f"wrote {len(dataset.videos)} videos, {total} events -> {args.out}")
    return 0


def cmd_run(args) -> int:
    config = harness.config_from_dict(_load_json(args.config))
    config = _apply_overrides(config, args)
    if config.oracle == "remote":
        raise SystemExit("remote oracle runs live under `alspot serve`")
    result = harness.run_active_learning(config, out_dir=args.out)
    print(json.dumps(result.report, indent=2, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    config_dir = Path(args.configs)
    files = sorted(config_dir.glob("*.json"))
    if len(files) < 2:
        raise SystemExit(f"need at least two config files in {config_dir}")
    configs = []
    for f in files:
        cfg = harness.config_from_dict(_load_json(str(f)))
        if not cfg.name:
            cfg.name = f.stem
        configs.append(cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = harness.compare_strategies(configs, seeds, out_dir=args.out)
    print(out["table"], end="")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    predictions = spotting.load_predictions(args.predictions)
    videos = dataset.videos_for(args.split)
    groups = [(predictions.get(v.video_id, []), v.spots)
              for v in sorted(videos, key=lambda v: v.video_id)]
    report = {
        "split": args.split,
        "loose_avg_map": metrics.avg_map_grouped(groups, "loose"),
        "tight_avg_map": metrics.avg_map_grouped(groups, "tight"),
        "per_class_ap": {str(k): v for k, v in
                         metrics.per_class_ap_grouped(groups, "loose").items()},
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import Session, create_app

    config = harness.config_from_dict(_load_json(args.config))
    config.oracle = "remote"
    session = Session(session_id=args.session_id, config=config, out_dir=args.out)
    sessions = {session.session_id: session}
    session.start()
    host, _, port = args.bind.rpartition(":")
    print(f"session {session.session_id!r} live at http://{args.bind}  "
          f"(GET /sessions/{session.session_id}/tasks)")
    uvicorn.run(create_app(sessions), host=host or "127.0.0.1", port=int(port),
                log_level="warning")
    session.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alspot",
                                     description="active learning for temporal action spotting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run one active-learning experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", choices=["rs", "um", "em"])
    p.add_argument("--aggregate", choices=["mean", "max"])
    p.add_argument("--schedule", help="adaptive or fixed:<pct>")
    p.add_argument("--paradigm", choices=["scratch", "continual"])
    p.add_argument("--oracle", choices=["simulated", "remote"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several configs over shared seeds")
    p.add_argument("--configs", required=True, help="directory of ALConfig json files")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="score a predictions file against a dataset split")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve a session for human annotation")
    p.add_argument("--config", required=True)
    p.add_argument("--bind", default="127.0.0.1:8787")
    p.add_argument("--out", default=None)
    p.add_argument("--session-id", default="main")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
