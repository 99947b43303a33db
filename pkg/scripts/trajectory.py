"""Print the per-iteration WER of every configuration found under run folders.

    python3 scripts/trajectory.py runs/default --split validation

Rows are configurations (grouped by config hash, averaged over distinct
seeds); the selected checkpoint of each run is counted in the last column.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from collections import Counter

from plrefine.cli import SPLITS_REPORTED, _variant, find_manifests


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+")
    ap.add_argument("--split", choices=[*SPLITS_REPORTED, "validation"], default="unlabeled")
    args = ap.parse_args(argv)

    groups: dict[str, dict[int, dict]] = {}
    for path in find_manifests(args.runs):
        m = json.loads(path.read_text())
        groups.setdefault(m["config_hash"], {})[m["seed"]] = m

    for by_seed in groups.values():
        ms = list(by_seed.values())
        curves = [[r["wer"][args.split] for r in m["iterations"]] for m in ms]
        depth = min(len(c) for c in curves)
        means = [statistics.fmean(c[t] for c in curves) for t in range(depth)]
        picks = Counter(m["selected_checkpoint"] for m in ms)
        label = _variant(ms[0]["loop"]) if "loop" in ms[0] else ms[0]["method"]
        cells = "  ".join(f"t{t + 1}={v:6.2f}" for t, v in enumerate(means))
        chosen = ", ".join(f"t{t}x{n}" for t, n in sorted(picks.items()))
        print(f"{label}\n    {cells}    selected: {chosen}  (n={len(ms)})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
