"""Run the synthetic album benchmark over several seeds and print median accuracies.

Usage: ``python3 scripts/run_trend_benchmark.py [--seeds 0 1 2 3 4] [--out trends.json]``
"""

import argparse
import json
import logging
import time

from geocells.pipeline import BenchmarkConfig, median_over_seeds, run_benchmark


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--out", help="optional JSON file for per-seed and median results")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    cfg = BenchmarkConfig()
    per_seed = []
    for seed in args.seeds:
        start = time.perf_counter()
        per_seed.append(run_benchmark(cfg, seed))
        street = {m: round(v["street"], 3) for m, v in per_seed[-1].items()}
        print(f"seed {seed} ({time.perf_counter() - start:.1f} s): {street}")

    levels = list(per_seed[0]["single"])
    medians = {level: median_over_seeds(per_seed, level) for level in levels}
    print("\nmedian accuracy over seeds")
    print("method       " + "  ".join(f"{lv:>9}" for lv in levels))
    for method in per_seed[0]:
        print(f"{method:<12} " + "  ".join(f"{medians[lv][method]:9.3f}" for lv in levels))
    street = medians["street"]
    print(f"\nsingle < average < basic: {street['single'] < street['average'] < street['basic']}")
    if "blstm25" in street and "repeated25" in street:
        print(f"blstm25 > repeated25: {street['blstm25'] > street['repeated25']}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"seeds": args.seeds, "per_seed": per_seed, "median": medians}, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
