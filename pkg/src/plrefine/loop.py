"""The refinement loop: ASR inference, corrector training, correction,
filtering and ASR training, repeated for a fixed number of iterations.

Training-path code only ever sees :class:`TrainingView`, which carries
unlabeled audio without transcripts. Hidden references live in the
:class:`Evaluator` and are read for reporting only.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

from .backends import AUDIO_AWARE, MODES, Corrector, DecodingSpec, Hypothesis, Recognizer
from .corpus import Corpus, HiddenReferences, Segment, UnlabeledItem
from .filters import (
    DegenerateTrainingSet,
    ModelFilter,
    ipl_filter,
    model_filter_apply,
    model_filter_train,
    rule_filter_correction,
)
from .metrics import corpus_wer
from .textnorm import DEFAULT_CONFIG, NormalizationConfig, TokenSeq, normalize, tokenize

logger = logging.getLogger(__name__)

ISL, IPL, IPL_RULE = "isl", "ipl", "ipl_rule"
REHEAR, REHEAR_RULE, REHEAR_MODEL = "rehear", "rehear_rule", "rehear_model"
METHODS = (ISL, IPL, IPL_RULE, REHEAR, REHEAR_RULE, REHEAR_MODEL)
CORRECTING = (REHEAR, REHEAR_RULE, REHEAR_MODEL)

METHOD_ALIASES = {
    "isl": ISL,
    "ipl": IPL,
    "ipl+rule": IPL_RULE,
    "ipl_rule": IPL_RULE,
    "rehear": REHEAR,
    "rehear+rule": REHEAR_RULE,
    "rehear_rule": REHEAR_RULE,
    "rehear+model": REHEAR_MODEL,
    "rehear_model": REHEAR_MODEL,
}

DROP, KEEP_HYPOTHESIS = "drop", "keep_hypothesis"

# rng stage codes
_INFER_L, _INFER_U, _CORRECT, _XFIT = 1, 2, 3, 4
_EVAL = {"validation": 10, "test": 11, "unlabeled": 12}

MAX_ITERATIONS = "max_iterations"
SATURATED = "saturated"


def canonical_method(name: str) -> str:
    key = name.strip().lower()
    if key not in METHOD_ALIASES:
        raise ValueError(f"unknown method {name!r}; expected one of {sorted(METHOD_ALIASES)}")
    return METHOD_ALIASES[key]


@dataclass(frozen=True)
class LoopConfig:
    method: str = REHEAR
    max_iterations: int = 3
    decay: bool = False
    eta0: float = 1.0
    epochs0: int = 5
    corrector_mode: str = AUDIO_AWARE
    decoding: DecodingSpec = field(default_factory=lambda: DecodingSpec.beam(5))
    saturation_epsilon: Optional[float] = 0.05
    seed: int = 0
    rejected: str = DROP
    reset_student: bool = False
    unlabeled_weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", canonical_method(self.method))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.epochs0 < 1:
            raise ValueError("epochs0 must be >= 1")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.corrector_mode not in MODES:
            raise ValueError(f"unknown corrector mode {self.corrector_mode!r}")
        if self.rejected not in (DROP, KEEP_HYPOTHESIS):
            raise ValueError(f"rejected must be {DROP!r} or {KEEP_HYPOTHESIS!r}")
        if self.unlabeled_weight <= 0:
            raise ValueError("unlabeled_weight must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"unknown loop key: {unknown[0]}")
        kw = dict(d)
        if "decoding" in kw and isinstance(kw["decoding"], dict):
            kw["decoding"] = DecodingSpec.from_dict(kw["decoding"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["decoding"] = self.decoding.to_dict()
        return d


def decay_schedule(t: int, cfg: LoopConfig) -> tuple[float, int]:
    if t < 1:
        raise ValueError("iterations are 1-based")
    if not cfg.decay:
        return cfg.eta0, cfg.epochs0
    return cfg.eta0 / 2 ** (t - 1), max(1, cfg.epochs0 - (t - 1))


def select_checkpoint(records: Sequence[dict]) -> int:
    """1-based iteration with the lowest validation WER; ties go to the earliest."""
    if not records:
        raise ValueError("no iterations to select from")
    best = min(records, key=lambda r: (r["wer"]["validation"], r["t"]))
    return best["t"]


def should_stop(manifest: dict, cfg: LoopConfig) -> tuple[bool, Optional[str]]:
    records = manifest["iterations"]
    if not records:
        raise ValueError("should_stop needs at least one completed iteration")
    t = records[-1]["t"]
    if t >= cfg.max_iterations:
        return True, MAX_ITERATIONS
    if cfg.saturation_epsilon is not None:
        vals = [manifest["baseline"]["wer"]["validation"]] if manifest.get("baseline") else []
        vals += [r["wer"]["validation"] for r in records]
        if len(vals) >= 2:
            before, after = min(vals[:-1]), min(vals)
            if before - after <= cfg.saturation_epsilon:
                return True, SATURATED
    return False, None


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# data views


@dataclass(frozen=True)
class LabeledItem:
    audio: tuple[int, ...]
    tokens: tuple[str, ...]
    duration: float


@dataclass
class TrainingView:
    """Everything training may read: labeled pairs and unlabeled audio."""

    labeled: list[LabeledItem]
    unlabeled: list[UnlabeledItem]


class Evaluator:
    def __init__(
        self,
        validation: Sequence[Segment],
        test: Sequence[Segment],
        unlabeled: Sequence[UnlabeledItem],
        hidden: HiddenReferences,
        norm: NormalizationConfig = DEFAULT_CONFIG,
    ):
        self.norm = norm
        self.sets = {
            "validation": [(s.audio, tuple(s.tokens(norm))) for s in validation],
            "test": [(s.audio, tuple(s.tokens(norm))) for s in test],
            "unlabeled": [(u.audio, tuple(tokenize(normalize(hidden.for_evaluation(u.key), norm)))) for u in unlabeled],
        }
        self._unlabeled_refs = [ref for _a, ref in self.sets["unlabeled"]]

    def evaluate(self, recognizer: Recognizer, seed: int) -> dict[str, float]:
        out = {}
        for split, items in self.sets.items():
            pairs = [
                (list(ref), list(recognizer.transcribe(audio, [seed, _EVAL[split], k]).tokens))
                for k, (audio, ref) in enumerate(items)
            ]
            out[split] = 100.0 * corpus_wer(pairs)
        return out

    def pseudo_label_wer(self, keyed_labels: Sequence[tuple[int, Sequence[str]]]) -> Optional[float]:
        if not keyed_labels:
            return None
        return 100.0 * corpus_wer([(list(self._unlabeled_refs[k]), list(lab)) for k, lab in keyed_labels])


def split_corpus(corpus: Corpus, hidden: Optional[HiddenReferences] = None) -> tuple[TrainingView, Evaluator]:
    sp = corpus.splits
    norm = corpus.normalization
    view = TrainingView(
        [LabeledItem(s.audio, tuple(s.tokens(norm)), s.duration) for s in sp.labeled],
        list(sp.unlabeled),
    )
    return view, Evaluator(sp.validation, sp.test, sp.unlabeled, hidden or sp.hidden, norm)


# ---------------------------------------------------------------------------
# one iteration


@dataclass
class IterationState:
    t: int
    recognizer: Recognizer
    corrector: Optional[Corrector]
    d_l_prime: list = field(default_factory=list)
    d_u_prime: list = field(default_factory=list)
    d_u_double: list = field(default_factory=list)
    d_u_filtered: list = field(default_factory=list)
    wer: dict = field(default_factory=dict)
    record: dict = field(default_factory=dict)


def _cross_fit_filter_examples(
    corrector_factory: Callable[[], Corrector], d_l_prime: list, cfg: LoopConfig, t: int
) -> list:
    """(hyp, corr, truth, confidence) from correctors that never saw the item."""
    folds = [d_l_prime[0::2], d_l_prime[1::2]]
    out = []
    for k in (0, 1):
        train, held = folds[1 - k], folds[k]
        if not train or not held:
            continue
        c = corrector_factory()
        c.train([(a, list(h.tokens), list(y)) for a, y, h in train])
        for n, (a, y, h) in enumerate(held):
            dec = cfg.decoding.with_seed(hash_seed(cfg.seed, _XFIT, t, 2 * n + k))
            out.append((list(h.tokens), c.correct(a, h, dec), list(y), h.confidence))
    return out


def hash_seed(*parts: int) -> int:
    h = hashlib.sha256(",".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def run_iteration(
    state: IterationState,
    cfg: LoopConfig,
    view: TrainingView,
    corrector_factory: Optional[Callable[[], Corrector]] = None,
    base_snapshot=None,
) -> IterationState:
    t = state.t
    rec = state.recognizer
    method = cfg.method

    # (a) ASR inference
    d_l_prime = [
        (it.audio, it.tokens, rec.transcribe(it.audio, [cfg.seed, _INFER_L, t, k]))
        for k, it in enumerate(view.labeled)
    ]
    d_u_prime = [(u, rec.transcribe(u.audio, [cfg.seed, _INFER_U, t, u.key])) for u in view.unlabeled]

    # (b) corrector training, (c) correction
    corrector = state.corrector
    if method in CORRECTING:
        if corrector_factory is None:
            raise ValueError(f"method {method} needs a corrector backend")
        corrector = corrector_factory()
        corrector.train([(a, list(h.tokens), list(y)) for a, y, h in d_l_prime])
        d_u_double = []
        for u, h in d_u_prime:
            dec = cfg.decoding.with_seed(hash_seed(cfg.seed, _CORRECT, t, u.key))
            d_u_double.append((u, h, corrector.correct(u.audio, h, dec)))
    else:
        d_u_double = [(u, h, list(h.tokens)) for u, h in d_u_prime]

    # (d) filtering
    reasons: Counter = Counter()
    extra: dict = {}
    d_u_filtered = []
    if method == ISL:
        pass
    else:
        mfilter: Optional[ModelFilter] = None
        if method == REHEAR_MODEL:
            try:
                mfilter = model_filter_train(
                    _cross_fit_filter_examples(corrector_factory, d_l_prime, cfg, t), seed=cfg.seed
                )
            except DegenerateTrainingSet as e:
                logger.info("iteration %d: model filter disabled (%s)", t, e)
                extra["model_filter_degenerate"] = True
        for u, h, corr in d_u_double:
            hyp = list(h.tokens)
            if method == IPL_RULE:
                decision = ipl_filter(h, u.duration)
            elif method == REHEAR_RULE:
                decision = rule_filter_correction(hyp, corr)
            elif method == REHEAR_MODEL and mfilter is not None:
                decision = model_filter_apply(mfilter, hyp, corr, h.confidence)
            else:
                decision = None
            if decision is None or decision.accept:
                reasons["ok"] += 1
                d_u_filtered.append((u, corr))
            else:
                reasons[decision.reason] += 1
                if cfg.rejected == KEEP_HYPOTHESIS:
                    d_u_filtered.append((u, hyp))

    # (e) ASR training
    eta, epochs = decay_schedule(t, cfg)
    examples = [(it.audio, list(it.tokens)) for it in view.labeled]
    weights = [1.0] * len(examples)
    examples += [(u.audio, list(lab)) for u, lab in d_u_filtered]
    weights += [cfg.unlabeled_weight] * len(d_u_filtered)
    if cfg.reset_student and base_snapshot is not None:
        rec.restore(base_snapshot)
    rec.train(examples, eta, epochs, weights=weights)

    stats = {
        "total": len(d_u_double) if method != ISL else 0,
        "accepted": len(d_u_filtered) if method != ISL else 0,
        "reasons": dict(sorted(reasons.items())),
    }
    stats.update(extra)
    record = {
        "t": t,
        "eta": eta,
        "epochs": epochs,
        "sizes": {
            "D_L": len(view.labeled),
            "D'_L": len(d_l_prime),
            "D'_U": len(d_u_prime),
            "D''_U": len(d_u_double),
            "D^f_U": len(d_u_filtered),
        },
        "filter": stats,
    }
    return IterationState(t, rec, corrector, d_l_prime, d_u_prime, d_u_double, d_u_filtered, {}, record)


# ---------------------------------------------------------------------------
# experiment


@dataclass
class RunResult:
    manifest: dict
    recognizer: Recognizer
    corrector: Optional[Corrector]
    checkpoint: object = None
    states: list = field(default_factory=list)


def run_experiment(
    cfg: LoopConfig,
    corpus: Corpus,
    recognizer: Recognizer,
    corrector_factory: Optional[Callable[[], Corrector]] = None,
    run_hash: Optional[str] = None,
    hidden: Optional[HiddenReferences] = None,
    keep_states: bool = False,
    out_dir: Optional[Path] = None,
) -> RunResult:
    view, evaluator = split_corpus(corpus, hidden)
    base = recognizer.snapshot()
    if run_hash is None:
        run_hash = config_hash({"loop": {**cfg.to_dict(), "seed": None}, "corpus": corpus.fingerprint()})
    manifest = {
        "config_hash": run_hash,
        "corpus": corpus.fingerprint(),
        "method": cfg.method,
        "seed": cfg.seed,
        "loop": cfg.to_dict(),
        "baseline": {"t": 0, "wer": evaluator.evaluate(recognizer, cfg.seed)},
        "iterations": [],
        "selected_checkpoint": None,
        "stop_reason": None,
    }
    snapshots = {}
    states = []
    state = IterationState(1, recognizer, None)
    try:
        while True:
            state = run_iteration(state, cfg, view, corrector_factory, base)
            rec = state.record
            rec["wer"] = evaluator.evaluate(state.recognizer, cfg.seed)
            rec["pseudo_label_wer"] = {
                "D''_U": evaluator.pseudo_label_wer([(u.key, c) for u, _h, c in state.d_u_double])
                if cfg.method != ISL
                else None,
                "D^f_U": evaluator.pseudo_label_wer([(u.key, c) for u, c in state.d_u_filtered])
                if cfg.method != ISL
                else None,
            }
            manifest["iterations"].append(rec)
            snapshots[state.t] = state.recognizer.snapshot()
            if keep_states:
                states.append(state)
            stop, reason = should_stop(manifest, cfg)
            if stop:
                manifest["stop_reason"] = reason
                break
            state = IterationState(state.t + 1, state.recognizer, state.corrector)
    except Exception as e:
        manifest["stop_reason"] = f"error: {type(e).__name__}: {e}"
        if out_dir is not None:
            write_manifest(manifest, out_dir)
        raise
    best = select_checkpoint(manifest["iterations"])
    manifest["selected_checkpoint"] = best
    manifest["selected"] = {"t": best, "wer": manifest["iterations"][best - 1]["wer"]}
    if out_dir is not None:
        write_manifest(manifest, out_dir)
    return RunResult(manifest, state.recognizer, state.corrector, snapshots[best], states)


MANIFEST_FILE = "manifest.json"


def dump_manifest(manifest: dict) -> str:
    return json.dumps(manifest, indent=1, sort_keys=True) + "\n"


def write_manifest(manifest: dict, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_FILE
    path.write_text(dump_manifest(manifest), encoding="utf-8")
    return path


def simulation_run(
    cfg: LoopConfig,
    corpus: Corpus,
    sim=None,
    hidden: Optional[HiddenReferences] = None,
    keep_states: bool = False,
    out_dir: Optional[Path] = None,
    run_hash: Optional[str] = None,
) -> RunResult:
    """Run the loop with freshly built simulation backends."""
    from .backends import SimConfig, SimCorrector, SimRecognizer, base_student

    sim = sim or SimConfig()
    recognizer = SimRecognizer(base_student(corpus, sim), sim.student_forgetting)
    template = SimCorrector.from_config(corpus, sim, cfg.corrector_mode)

    def factory():
        return template.fresh()

    if run_hash is None:
        run_hash = config_hash(
            {"loop": {**cfg.to_dict(), "seed": None}, "corpus": corpus.fingerprint(), "backend": sim.to_dict()}
        )
    return run_experiment(cfg, corpus, recognizer, factory, run_hash, hidden, keep_states, out_dir)


__all__ = [
    "METHODS",
    "Evaluator",
    "IterationState",
    "LoopConfig",
    "RunResult",
    "TrainingView",
    "canonical_method",
    "config_hash",
    "decay_schedule",
    "run_experiment",
    "run_iteration",
    "select_checkpoint",
    "should_stop",
    "simulation_run",
]
