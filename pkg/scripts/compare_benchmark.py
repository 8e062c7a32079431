#!/usr/bin/env python3
"""Strategy comparison on the frozen desk benchmark.

Runs RS, UM-max and EM-max over shared master seeds with the continual
fast-scheduler setup and prints the AULC / Md@x / Mp@y table.  Expect a few
minutes per (strategy, seed) pair.

Usage: python scripts/compare_benchmark.py [--seeds 0,1,2,3,4] [--out DIR]
"""

import argparse

from alspot.benchmark import benchmark_al_config, benchmark_synthetic_config
from alspot.data import generate_synthetic
from alspot.harness import compare_strategies


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--out", default="benchmark_report")
    parser.add_argument("--strategies", default="rs,um,em")
    args = parser.parse_args()

    dataset = generate_synthetic(benchmark_synthetic_config())
    configs = []
    for strategy in args.strategies.split(","):
        cfg = benchmark_al_config(strategy)
        cfg.name = f"{strategy}-max" if strategy != "rs" else "rs"
        cfg.dataset_path = "benchmark(frozen)"
        configs.append(cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = compare_strategies(configs, seeds, dataset=dataset, out_dir=args.out)
    print(out["table"], end="")


if __name__ == "__main__":
    main()
