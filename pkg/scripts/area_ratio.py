"""Print the max/min cell area ratio per level, with the closed-form oracle alongside.

Usage: ``python3 scripts/area_ratio.py [--max-level 10]``
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import cell_solid_angle  # noqa: E402

from geocells.sphere import level_areas  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--max-level", type=int, default=10)
    args = parser.parse_args()
    print("level  cells      max/min   oracle(face 0)  seconds")
    for level in range(args.max_level + 1):
        start = time.perf_counter()
        areas = level_areas(level)
        elapsed = time.perf_counter() - start
        n = 1 << level
        # every face has the same area distribution, so face 0 suffices for the oracle
        oracle = "-"
        if level <= 7:
            ref = np.array([cell_solid_angle(i, j, level) for i in range(n) for j in range(n)])
            oracle = f"{ref.max() / ref.min():.4f}"
        print(f"{level:5d}  {areas.size:9d}  {areas.max() / areas.min():.4f}    {oracle:>14}  {elapsed:7.2f}")


if __name__ == "__main__":
    main()
