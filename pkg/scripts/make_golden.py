"""Regenerate the CLI golden partition from the independent brute-force partitioner.

The points are a seeded 3-hotspot mixture, so only the token list is stored.
Run from the repository root: ``python scripts/make_golden.py``.
"""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import brute_partition, hotspot_mixture  # noqa: E402

GOLDEN = {"n": 30_000, "seed": 21, "t1": 500, "t2": 20, "max_level": 30}


def main():
    lat, lon = hotspot_mixture(GOLDEN["n"], seed=GOLDEN["seed"])
    leaves = brute_partition(lat, lon, GOLDEN["t1"], GOLDEN["t2"], GOLDEN["max_level"])
    out = ROOT / "tests" / "data" / "golden_partition.json"
    payload = {**GOLDEN, "tokens": [t for t, _ in leaves], "counts": [n for _, n in leaves]}
    out.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"{len(leaves)} cells -> {out}")


if __name__ == "__main__":
    main()
