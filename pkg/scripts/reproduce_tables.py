"""Run the comparison studies on the simulation backend and print their tables.

    python3 scripts/reproduce_tables.py --table methods
    python3 scripts/reproduce_tables.py --table all --seeds 0-4 --workers 4

Each study is a set of loop variants run over the same seeds and the default
synthetic corpus. Runs go to ``<out>/<table>/``, which is cleared first, and
a markdown summary is printed per study. The dynamics study also prints the
mean unlabeled WER at every iteration.
"""

from __future__ import annotations

import argparse
import json
import shutil
import statistics
import sys
from pathlib import Path

from plrefine.cli import BackendSpec, ExperimentConfig, cmd_run, find_manifests, format_markdown, parse_seeds, summarize
from plrefine.corpus import SynthConfig
from plrefine.loop import METHODS, LoopConfig

BASE = {"max_iterations": 3, "saturation_epsilon": None}

STUDIES = {
    "methods": [dict(BASE, method=m) for m in METHODS],
    "modality": [dict(BASE, corrector_mode=mode) for mode in ("audio_aware", "text_only")],
    "decoding": [
        dict(BASE, decoding={"strategy": "greedy"}),
        dict(BASE, decoding={"strategy": "beam", "width": 5}),
        dict(BASE, decoding={"strategy": "sample", "temperature": 0.7}),
    ],
    "dynamics": [dict(BASE, max_iterations=5), dict(BASE, max_iterations=5, decay=True)],
}


def run_study(name: str, seeds: tuple[int, ...], out: Path, workers: int) -> list[dict]:
    folder = out / name
    shutil.rmtree(folder, ignore_errors=True)
    for loop in STUDIES[name]:
        cfg = ExperimentConfig(SynthConfig(), LoopConfig.from_dict(loop), BackendSpec(), seeds, str(folder))
        code = cmd_run(cfg, [cfg.loop.method], workers, overwrite=True)
        if code != 0:
            raise SystemExit(code)
    return [json.loads(p.read_text()) for p in find_manifests([folder])]


def trajectories(manifests: list[dict]) -> str:
    by_decay: dict[bool, list[list[float]]] = {}
    for m in manifests:
        by_decay.setdefault(m["loop"]["decay"], []).append([r["wer"]["unlabeled"] for r in m["iterations"]])
    lines = ["| Decay | " + " | ".join(f"t={t}" for t in range(1, 6)) + " |", "|---" * 6 + "|"]
    for decay, runs in sorted(by_decay.items()):
        means = [statistics.fmean(col) for col in zip(*runs)]
        lines.append(f"| {'yes' if decay else 'no'} | " + " | ".join(f"{v:.2f}" for v in means) + " |")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--table", choices=[*STUDIES, "all"], default="all")
    ap.add_argument("--seeds", type=parse_seeds, default=(0, 1, 2, 3, 4))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/tables"))
    args = ap.parse_args(argv)

    for name in STUDIES if args.table == "all" else [args.table]:
        manifests = run_study(name, args.seeds, args.out, args.workers)
        print(f"\n## {name}\n")
        print(format_markdown(summarize(manifests)))
        if name == "dynamics":
            print(trajectories(manifests))
    return 0


if __name__ == "__main__":
    sys.exit(main())
