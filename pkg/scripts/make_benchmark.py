#!/usr/bin/env python3
"""Generate the frozen desk benchmark dataset file.

Usage: python scripts/make_benchmark.py [out.jsonl]
"""

import sys

from alspot.benchmark import benchmark_synthetic_config
from alspot.data import generate_synthetic, save_dataset


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "benchmark.jsonl"
    dataset = generate_synthetic(benchmark_synthetic_config())
    save_dataset(dataset, out)
    total = sum(len(v.spots) for v in dataset.videos)
    per_class = {}
    for v in dataset.videos:
        for s in v.spots:
            per_class[s.class_id] = per_class.get(s.class_id, 0) + 1
    print(f"wrote {out}: {len(dataset.videos)} videos, {total} events "
          f"(per class {dict(sorted(per_class.items()))})")


if __name__ == "__main__":
    main()
