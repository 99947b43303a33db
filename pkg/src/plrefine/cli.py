"""Command-line entry point: ``plrefine gen-corpus | run | report``.

An experiment config is a JSON (or YAML) object::

    {
      "corpus":  {... synthetic corpus settings ...}  or  "path/to/corpus_dir",
      "loop":    {"method": "rehear", "max_iterations": 3, ...},
      "backend": {"kind": "sim", "params": {...}}
                 or {"kind": "external", "command": ["prog", "arg"], "timeout": 30},
      "seeds":   [0, 1, 2, 3, 4],
      "out":     "runs"
    }

Every section is optional. Unknown keys anywhere are rejected before any
work starts. Relative paths are resolved against the config file's folder.

Exit status: 0 success, 2 configuration error, 3 backend or protocol error,
4 file-system error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import shutil
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from .backends import BackendError, SimConfig
from .backends.types import DecodingSpec
from .backends import protocol as P
from .corpus import Corpus, CorpusError, SynthConfig, load_corpus, save_corpus, synth_corpus
from .loop import MANIFEST_FILE, METHODS, LoopConfig, canonical_method, config_hash, run_experiment, simulation_run

logger = logging.getLogger("plrefine")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_IO = 0, 2, 3, 4

SPLITS_REPORTED = ("test", "unlabeled")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _check_types(cls, d: dict, section: str) -> None:
    """Reject values whose JSON type cannot be right for the dataclass field."""
    for f in fields(cls):
        if f.name not in d or f.default is MISSING:
            continue
        v, default = d[f.name], f.default
        optional = "Optional" in str(f.type)
        if v is None:
            if optional:
                continue
            raise ConfigError(f"{section}.{f.name} may not be null")
        if isinstance(default, bool):
            ok = isinstance(v, bool)
        elif isinstance(default, int):
            ok = isinstance(v, int) and not isinstance(v, bool)
        elif isinstance(default, float):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        elif isinstance(default, str):
            ok = isinstance(v, str)
        elif isinstance(default, tuple):
            ok = isinstance(v, list)
        else:
            continue
        if not ok:
            raise ConfigError(f"{section}.{f.name} has the wrong type ({type(v).__name__})")


def _section(cls, d, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{section} must be an object")
    _check_types(cls, d, section)
    try:
        return cls.from_dict(d)
    except KeyError as e:
        raise ConfigError(e.args[0]) from None
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{section}: {e}") from None


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "sim"
    sim: SimConfig = field(default_factory=SimConfig)
    command: tuple[str, ...] = ()
    timeout: float = 30.0

    @classmethod
    def from_dict(cls, d: dict) -> "BackendSpec":
        if not isinstance(d, dict):
            raise ConfigError("backend must be an object")
        kind = d.get("kind", "sim")
        if kind == "sim":
            unknown = sorted(set(d) - {"kind", "params"})
            if unknown:
                raise ConfigError(f"unknown backend key: {unknown[0]}")
            return cls("sim", _section(SimConfig, d.get("params", {}), "backend.params"))
        if kind == "external":
            unknown = sorted(set(d) - {"kind", "command", "timeout"})
            if unknown:
                raise ConfigError(f"unknown backend key: {unknown[0]}")
            cmd = d.get("command")
            if not isinstance(cmd, list) or not cmd or not all(isinstance(c, str) for c in cmd):
                raise ConfigError("backend.command must be a non-empty list of strings")
            timeout = d.get("timeout", 30.0)
            if isinstance(timeout, bool) or not isinstance(timeout, (int, float)) or timeout <= 0:
                raise ConfigError("backend.timeout must be a positive number")
            return cls("external", SimConfig(), tuple(cmd), float(timeout))
        raise ConfigError(f"backend.kind must be 'sim' or 'external', got {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "sim":
            return {"kind": "sim", "params": self.sim.to_dict()}
        return {"kind": "external", "command": list(self.command), "timeout": self.timeout}


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: object = field(default_factory=SynthConfig)  # SynthConfig or a corpus directory
    loop: LoopConfig = field(default_factory=LoopConfig)
    backend: BackendSpec = field(default_factory=BackendSpec)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out: str = "runs"

    KEYS = ("corpus", "loop", "backend", "seeds", "out")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("the config must be an object at the top level")
        unknown = sorted(set(d) - set(cls.KEYS))
        if unknown:
            raise ConfigError(f"unknown key: {unknown[0]}")
        base_dir = base_dir or Path(".")
        corpus = d.get("corpus", {})
        if isinstance(corpus, str):
            corpus = os.path.normpath(base_dir / corpus)
        else:
            corpus = _section(SynthConfig, corpus, "corpus")
        loop = d.get("loop", {})
        if isinstance(loop, dict) and "seed" in loop:
            raise ConfigError("loop.seed is set per run; list seeds under 'seeds'")
        loop = _section(LoopConfig, loop, "loop")
        backend = BackendSpec.from_dict(d.get("backend", {}))
        seeds = d.get("seeds", [0, 1, 2, 3, 4])
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds contains duplicates")
        out = d.get("out", "runs")
        if not isinstance(out, str):
            raise ConfigError("out must be a string")
        return cls(corpus, loop, backend, tuple(seeds), os.path.normpath(base_dir / out))

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus if isinstance(self.corpus, str) else self.corpus.to_dict(),
            "loop": {k: v for k, v in self.loop.to_dict().items() if k != "seed"},
            "backend": self.backend.to_dict(),
            "seeds": list(self.seeds),
            "out": self.out,
        }


def read_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e.strerror}") from e
    if path.suffix in (".yaml", ".yml"):
        import yaml

        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from None
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e.msg} at line {e.lineno})") from None
    return ExperimentConfig.from_dict(data if data is not None else {}, path.parent)


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,1,2"``, ``"1-5"`` or a mix of both."""
    seeds: list[int] = []
    for part in text.split(","):
        m = re.fullmatch(r"\s*(\d+)\s*(?:-\s*(\d+)\s*)?", part)
        if not m:
            raise ConfigError(f"cannot parse seeds {text!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        seeds.extend(range(lo, hi + 1))
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigError(f"seeds {text!r} must be non-empty and distinct")
    return tuple(seeds)


# ---------------------------------------------------------------------------
# running


_CORPUS_CACHE: dict[str, Corpus] = {}


def build_corpus(source) -> Corpus:
    key = source if isinstance(source, str) else json.dumps(source.to_dict(), sort_keys=True)
    if key not in _CORPUS_CACHE:
        _CORPUS_CACHE[key] = load_corpus(source) if isinstance(source, str) else synth_corpus(source)
    return _CORPUS_CACHE[key]


def experiment_hash(loop: LoopConfig, corpus: Corpus, backend: BackendSpec) -> str:
    """Hash of everything that determines a run except its seed."""
    return config_hash({"loop": {**loop.to_dict(), "seed": None}, "corpus": corpus.fingerprint(), "backend": backend.to_dict()})


def run_dir_name(method: str, run_hash: str, seed: int) -> str:
    return f"{method}-{run_hash}-seed{seed}"


@dataclass(frozen=True)
class SeedJob:
    corpus: object
    loop: LoopConfig
    backend: BackendSpec
    run_dir: str
    run_hash: str


def run_seed(job: SeedJob) -> tuple[int, Optional[str]]:
    """Run one seed and write its manifest; returns (exit status, message)."""
    try:
        corpus = build_corpus(job.corpus)
    except (CorpusError, OSError) as e:
        return EXIT_IO, f"cannot load corpus: {e}"
    out = Path(job.run_dir)
    try:
        if job.backend.kind == "sim":
            simulation_run(job.loop, corpus, job.backend.sim, out_dir=out, run_hash=job.run_hash)
        else:
            from .backends.external import ExternalCorrector, ExternalRecognizer, PeerProcess

            with PeerProcess(job.backend.command, timeout=job.backend.timeout) as peer:
                recognizer = ExternalRecognizer(peer)
                corrector = ExternalCorrector(peer, job.loop.corrector_mode) if "corrector" in peer.roles else None
                factory = (lambda: corrector.fresh()) if corrector is not None else None
                run_experiment(job.loop, corpus, recognizer, factory, job.run_hash, out_dir=out)
    except (BackendError, P.ProtocolError) as e:
        return EXIT_BACKEND, f"backend failure: {e}"
    except OSError as e:
        return EXIT_IO, f"cannot write {out}: {e}"
    return EXIT_OK, None


def cmd_run(cfg: ExperimentConfig, methods: Sequence[str], workers: int, overwrite: bool) -> int:
    corpus = build_corpus(cfg.corpus)
    out_root = Path(cfg.out)
    jobs: list[tuple[int, SeedJob]] = []
    for method in methods:
        loop0 = LoopConfig.from_dict({**cfg.loop.to_dict(), "method": method})
        run_hash = experiment_hash(loop0, corpus, cfg.backend)
        for seed in cfg.seeds:
            loop = LoopConfig.from_dict({**loop0.to_dict(), "seed": seed})
            run_dir = out_root / run_dir_name(loop.method, run_hash, seed)
            jobs.append((seed, SeedJob(cfg.corpus, loop, cfg.backend, str(run_dir), run_hash)))

    existing = [j.run_dir for _s, j in jobs if Path(j.run_dir).exists()]
    if existing and not overwrite:
        print(f"error: {len(existing)} run folder(s) already exist, e.g. {existing[0]}; pass --overwrite to replace them", file=sys.stderr)
        return EXIT_IO
    for d in existing:
        shutil.rmtree(d)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            results = list(pool.map(run_seed, [j for _s, j in jobs]))
    else:
        results = [run_seed(j) for _s, j in jobs]

    status = EXIT_OK
    for (seed, job), (code, message) in zip(jobs, results):
        if code == EXIT_OK:
            print(job.run_dir)
        else:
            print(f"error: {job.loop.method} seed {seed}: {message}", file=sys.stderr)
            status = max(status, code)
    return status


# ---------------------------------------------------------------------------
# reporting


def find_manifests(paths: Sequence[str | Path]) -> list[Path]:
    found: list[Path] = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif (p / MANIFEST_FILE).is_file():
            found.append(p / MANIFEST_FILE)
        elif p.is_dir():
            found.extend(sorted(p.rglob(MANIFEST_FILE)))
        else:
            raise OSError(f"no such run folder: {p}")
    return sorted(set(found))


def _variant(loop: dict) -> str:
    """Method name plus any loop settings that differ from the defaults."""
    defaults = LoopConfig(method=loop["method"]).to_dict()
    diffs = []
    for k, v in sorted(loop.items()):
        if k in ("method", "seed") or defaults.get(k) == v:
            continue
        text = DecodingSpec.from_dict(v).label if k == "decoding" else json.dumps(v, sort_keys=True)
        diffs.append(f"{k}={text}")
    return loop["method"] + (f" [{', '.join(diffs)}]" if diffs else "")


@dataclass
class ReportRow:
    label: str
    method: str
    config_hash: str
    split: str
    n: int
    mean: float
    sd: float


def summarize(manifests: Sequence[dict]) -> list[ReportRow]:
    """Mean and sample sd of selected-checkpoint WER per configuration and split."""
    corpora = {m["corpus"] for m in manifests}
    if len(corpora) > 1:
        raise ConfigError(f"manifests come from {len(corpora)} different corpora: {', '.join(sorted(corpora))}")
    groups: dict[str, dict[int, dict]] = {}
    for m in manifests:
        if m.get("selected") is None:
            raise ConfigError(f"run {m['config_hash']} seed {m['seed']} has no selected checkpoint (stop reason: {m.get('stop_reason')})")
        # a config and seed found in two folders is the same deterministic run; count it once
        groups.setdefault(m["config_hash"], {})[m["seed"]] = m
    order = {name: i for i, name in enumerate(METHODS)}
    rows = []
    for h, by_seed in groups.items():
        ms = [by_seed[k] for k in sorted(by_seed)]
        first = ms[0]
        label = _variant(first["loop"]) if "loop" in first else first["method"]
        for split in SPLITS_REPORTED:
            vals = [m["selected"]["wer"][split] for m in ms]
            sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
            rows.append(ReportRow(label, first["method"], h, split, len(vals), statistics.fmean(vals), sd))
    rows.sort(key=lambda r: (order.get(r.method, len(order)), r.label, r.config_hash, SPLITS_REPORTED.index(r.split)))
    return rows


CSV_FIELDS = ("label", "method", "config_hash", "split", "n", "mean", "sd")


def format_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        # repr keeps floats exact through a csv round trip
        w.writerow([r.label, r.method, r.config_hash, r.split, r.n, repr(r.mean), repr(r.sd)])
    return buf.getvalue()


def format_markdown(rows: Sequence[ReportRow]) -> str:
    """Method rows, split columns; best mean bold, runner-up underlined."""
    configs: dict[str, dict[str, ReportRow]] = {}
    for r in rows:
        configs.setdefault(r.config_hash, {})[r.split] = r
    rank: dict[tuple[str, str], int] = {}
    for split in SPLITS_REPORTED:
        means = sorted({round(c[split].mean, 2) for c in configs.values()})
        for h, c in configs.items():
            rank[h, split] = means.index(round(c[split].mean, 2))
    lines = ["| Method | Test WER | Unlabeled WER | Runs |", "|---|---|---|---|"]
    for h, c in configs.items():
        cells = []
        for split in SPLITS_REPORTED:
            r = c[split]
            text = f"{r.mean:.2f} ± {r.sd:.2f}"
            if rank[h, split] == 0 and len(configs) > 1:
                text = f"**{text}**"
            elif rank[h, split] == 1:
                text = f"<u>{text}</u>"
            cells.append(text)
        n = c[SPLITS_REPORTED[0]].n
        lines.append(f"| {c[SPLITS_REPORTED[0]].label} | {cells[0]} | {cells[1]} | {n}{' (n=1, no sd)' if n == 1 else ''} |")
    return "\n".join(lines) + "\n"


def cmd_report(paths: Sequence[str], fmt: str) -> str:
    manifests = []
    for p in find_manifests(paths):
        try:
            manifests.append(json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: not a manifest ({e.msg})") from None
    if not manifests:
        raise ConfigError("no manifests found")
    rows = summarize(manifests)
    return format_csv(rows) if fmt == "csv" else format_markdown(rows)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plrefine", description="Pseudo-label refinement experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="generate and save a synthetic corpus")
    g.add_argument("--config", help="experiment config; only its corpus section is used")
    g.add_argument("--out", required=True, help="corpus folder to write")
    g.add_argument("--overwrite", action="store_true")

    r = sub.add_parser("run", help="run the loop for every seed and write manifests")
    r.add_argument("--config", help="experiment config (JSON or YAML)")
    r.add_argument("--out", help="parent folder for run folders (overrides the config)")
    r.add_argument("--seeds", help="e.g. 0,1,2 or 1-5 (overrides the config)")
    r.add_argument("--method", help="comma-separated methods, aliases such as rehear+rule allowed")
    r.add_argument("--workers", type=int, default=1, help="seeds run in parallel (default 1)")
    r.add_argument("--overwrite", action="store_true", help="replace existing run folders")

    p = sub.add_parser("report", help="summarize manifests as a table")
    p.add_argument("runs", nargs="+", help="run folders, manifest files, or folders containing them")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    return ap


def _load(args) -> ExperimentConfig:
    return read_config(args.config) if args.config else ExperimentConfig()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-corpus":
            cfg = _load(args)
            if isinstance(cfg.corpus, str):
                raise ConfigError("gen-corpus needs synthetic corpus settings, not a corpus folder")
            out = Path(args.out)
            if out.exists() and any(out.iterdir()) and not args.overwrite:
                print(f"error: {out} is not empty; pass --overwrite to replace it", file=sys.stderr)
                return EXIT_IO
            save_corpus(synth_corpus(cfg.corpus), out)
            print(out)
            return EXIT_OK
        if args.command == "run":
            cfg = _load(args)
            if args.seeds:
                cfg = ExperimentConfig(cfg.corpus, cfg.loop, cfg.backend, parse_seeds(args.seeds), cfg.out)
            if args.out:
                cfg = ExperimentConfig(cfg.corpus, cfg.loop, cfg.backend, cfg.seeds, args.out)
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            try:
                methods = [canonical_method(m) for m in args.method.split(",")] if args.method else [cfg.loop.method]
            except ValueError as e:
                raise ConfigError(str(e)) from None
            return cmd_run(cfg, methods, args.workers, args.overwrite)
        sys.stdout.write(cmd_report(args.runs, args.format))
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CorpusError as e:
        print(f"corpus error: {e}", file=sys.stderr)
        return EXIT_IO
    except (BackendError, P.ProtocolError) as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
