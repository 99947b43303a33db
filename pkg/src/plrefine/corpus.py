"""Segments, synthetic corpora, segment merging/filtering and source-level splits."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .textnorm import DEFAULT_CONFIG, NormalizationConfig, TokenSeq, normalize, tokenize

SPLITS = ("labeled", "unlabeled", "validation", "test")
MIN_SEGMENT_S = 0.05
MAX_SEGMENT_S = 30.0


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    source_id: str
    start_s: float
    end_s: float
    transcript: str
    audio: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not (0 <= self.start_s < self.end_s):
            raise CorpusError(f"bad segment span [{self.start_s}, {self.end_s}] in {self.source_id}")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def tokens(self, cfg: NormalizationConfig = DEFAULT_CONFIG) -> TokenSeq:
        return tokenize(normalize(self.transcript, cfg))


@dataclass(frozen=True)
class UnlabeledItem:
    """An unlabeled segment as seen by training code: no transcript attribute."""

    key: int
    source_id: str
    start_s: float
    end_s: float
    audio: tuple[int, ...]

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


class HiddenReferences:
    """Evaluation-only store of unlabeled transcripts, keyed by item key."""

    def __init__(self, transcripts: dict[int, str]):
        self._transcripts = dict(transcripts)

    def for_evaluation(self, key: int) -> str:
        return self._transcripts[key]

    def keys(self):
        return self._transcripts.keys()

    def poisoned(self, garbage: str = "zzz qqq") -> "HiddenReferences":
        return HiddenReferences({k: garbage for k in self._transcripts})


@dataclass
class CorpusSplits:
    labeled: list[Segment]
    unlabeled: list[UnlabeledItem]
    validation: list[Segment]
    test: list[Segment]
    hidden: HiddenReferences

    def source_sets(self) -> dict[str, set[str]]:
        return {
            "labeled": {s.source_id for s in self.labeled},
            "unlabeled": {s.source_id for s in self.unlabeled},
            "validation": {s.source_id for s in self.validation},
            "test": {s.source_id for s in self.test},
        }

    def duration(self, split: str) -> float:
        return sum(s.duration for s in getattr(self, split))

    def unlabeled_segments(self) -> list[Segment]:
        """Evaluation view: unlabeled items re-joined with hidden transcripts."""
        return [
            Segment(u.source_id, u.start_s, u.end_s, self.hidden.for_evaluation(u.key), u.audio)
            for u in self.unlabeled
        ]


# ---------------------------------------------------------------------------
# merging and filtering


def _check_sorted(segments: Sequence[Segment]) -> None:
    last: dict[str, Segment] = {}
    for seg in segments:
        prev = last.get(seg.source_id)
        if prev is not None:
            if seg.start_s < prev.start_s:
                raise CorpusError(f"segments of {seg.source_id} not sorted by start_s")
            if seg.start_s < prev.end_s:
                raise CorpusError(f"segments of {seg.source_id} overlap at {seg.start_s}")
        last[seg.source_id] = seg


def merge_segments(
    segments: Sequence[Segment],
    max_chunk_s: float = 30.0,
    gap_s: float = 2.0,
    pad_s: float = 0.1,
    source_ends: Optional[dict[str, float]] = None,
) -> list[Segment]:
    """Greedy left-to-right merge of same-source neighbours separated by < gap_s.

    A merge is refused when the merged span plus padding on both sides would
    exceed ``max_chunk_s``. Outputs are padded by ``pad_s`` and clamped to
    ``[0, source end]``; without ``source_ends`` the upper clamp is open.
    """
    _check_sorted(segments)
    ends = source_ends or {}
    merged: list[Segment] = []
    open_: dict[str, int] = {}
    for seg in segments:
        idx = open_.get(seg.source_id)
        if idx is not None:
            cur = merged[idx]
            gap = seg.start_s - cur.end_s
            span = seg.end_s - cur.start_s
            if gap < gap_s and span + 2 * pad_s <= max_chunk_s:
                merged[idx] = Segment(
                    cur.source_id,
                    cur.start_s,
                    seg.end_s,
                    f"{cur.transcript} {seg.transcript}",
                    cur.audio + seg.audio,
                )
                continue
        open_[seg.source_id] = len(merged)
        merged.append(seg)

    out = []
    for seg in merged:
        hi = seg.end_s + pad_s
        if seg.source_id in ends:
            hi = min(hi, ends[seg.source_id])
        out.append(Segment(seg.source_id, max(0.0, seg.start_s - pad_s), hi, seg.transcript, seg.audio))
    return out


@dataclass(frozen=True)
class Rejection:
    index: int
    source_id: str
    reason: str


def filter_segments(
    segments: Sequence[Segment],
    cfg: NormalizationConfig = DEFAULT_CONFIG,
    min_s: float = MIN_SEGMENT_S,
    max_s: float = MAX_SEGMENT_S,
) -> tuple[list[Segment], list[Rejection]]:
    kept, log = [], []
    for i, seg in enumerate(segments):
        if seg.duration < min_s:
            log.append(Rejection(i, seg.source_id, "too_short"))
        elif seg.duration > max_s:
            log.append(Rejection(i, seg.source_id, "too_long"))
        elif not normalize(seg.transcript, cfg):
            log.append(Rejection(i, seg.source_id, "empty"))
        else:
            kept.append(seg)
    return kept, log


# ---------------------------------------------------------------------------
# partitioning


def assign_sources(
    segments: Sequence[Segment], ratios: Sequence[float], seed: int
) -> dict[str, int]:
    """Map each source_id to a split index, filling splits toward target durations."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    if any(r < 0 for r in ratios):
        raise CorpusError("split ratios must be non-negative")
    dur: dict[str, float] = {}
    for seg in segments:
        dur[seg.source_id] = dur.get(seg.source_id, 0.0) + seg.duration
    sources = sorted(dur)
    active = [k for k, r in enumerate(ratios) if r > 0]
    if len(sources) < len(active):
        raise CorpusError(f"{len(sources)} sources cannot fill {len(active)} non-empty splits")

    order = np.random.default_rng(seed).permutation(len(sources))
    total = sum(dur.values())
    target = [r * total for r in ratios]
    filled = [0.0] * len(ratios)
    assign: dict[str, int] = {}
    # seed every non-empty split with one source, largest target first
    seeded = sorted(active, key=lambda k: (-ratios[k], k))
    for pos, i in enumerate(order):
        src = sources[i]
        if pos < len(seeded):
            k = seeded[pos]
        else:
            k = max(active, key=lambda a: ((target[a] - filled[a]) / target[a], -a))
        assign[src] = k
        filled[k] += dur[src]
    return assign


def partition(
    segments: Sequence[Segment],
    ratios: Sequence[float],
    seed: int,
) -> CorpusSplits:
    if len(ratios) != len(SPLITS):
        raise CorpusError(f"expected {len(SPLITS)} ratios, got {len(ratios)}")
    assign = assign_sources(segments, ratios, seed)
    buckets: dict[int, list[Segment]] = {k: [] for k in range(len(SPLITS))}
    for seg in segments:
        buckets[assign[seg.source_id]].append(seg)
    unlabeled = []
    hidden = {}
    for key, seg in enumerate(buckets[1]):
        unlabeled.append(UnlabeledItem(key, seg.source_id, seg.start_s, seg.end_s, seg.audio))
        hidden[key] = seg.transcript
    return CorpusSplits(buckets[0], unlabeled, buckets[2], buckets[3], HiddenReferences(hidden))


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 200
    homophone_class_count: int = 40
    class_size: int = 2
    digit_token_fraction: float = 0.05
    utterance_length_range: tuple[int, int] = (6, 14)
    acoustic_noise: float = 0.0
    split_sizes: tuple[int, int, int, int] = (200, 600, 200, 400)
    utterances_per_source: int = 4
    zipf_exponent: float = 1.0
    context_strength: float = 0.6
    successors: int = 6
    seconds_per_token: float = 0.4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.homophone_class_count * self.class_size > self.vocab_size:
            raise CorpusError("homophone_class_count * class_size exceeds vocab_size")
        if self.homophone_class_count and self.class_size < 2:
            raise CorpusError("homophone classes need class_size >= 2")
        if not 0 <= self.acoustic_noise < 1:
            raise CorpusError(f"acoustic_noise must lie in [0, 1), got {self.acoustic_noise}")
        lo, hi = self.utterance_length_range
        if not 1 <= lo <= hi:
            raise CorpusError(f"bad utterance_length_range {self.utterance_length_range}")
        if not 0 <= self.digit_token_fraction <= 1:
            raise CorpusError("digit_token_fraction must lie in [0, 1]")
        if not 0 <= self.context_strength <= 1:
            raise CorpusError("context_strength must lie in [0, 1]")
        if len(self.split_sizes) != 4 or min(self.split_sizes) < 0 or sum(self.split_sizes) == 0:
            raise CorpusError(f"bad split_sizes {self.split_sizes}")
        if self.utterances_per_source < 1 or self.vocab_size < 2 or self.seconds_per_token <= 0:
            raise CorpusError("utterances_per_source, vocab_size and seconds_per_token must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"unknown corpus key: {unknown[0]}")
        kw = dict(d)
        for k in ("utterance_length_range", "split_sizes"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["utterance_length_range"] = list(self.utterance_length_range)
        d["split_sizes"] = list(self.split_sizes)
        return d


@dataclass
class ObservationMap:
    """Word token -> acoustic observation symbol; homophone classes share a symbol."""

    word_to_symbol: dict[str, int]
    n_symbols: int

    def __call__(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.word_to_symbol[t] for t in tokens)

    def classes(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for w, o in self.word_to_symbol.items():
            out.setdefault(o, []).append(w)
        return out

    def inverse(self) -> dict[int, str]:
        """Symbol -> word for symbols of singleton classes only."""
        return {o: ws[0] for o, ws in self.classes().items() if len(ws) == 1}


@dataclass
class Corpus:
    splits: CorpusSplits
    vocabulary: list[str]
    observation_map: ObservationMap
    unigram: list[float]
    config: SynthConfig
    normalization: NormalizationConfig = field(default_factory=NormalizationConfig)

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(json.dumps(self.config.to_dict(), sort_keys=True).encode())
        for split in ("labeled", "validation", "test"):
            for s in getattr(self.splits, split):
                h.update(f"{split}|{s.source_id}|{s.start_s!r}|{s.transcript}|{list(s.audio)}".encode())
        for u in self.splits.unlabeled:
            h.update(f"unlabeled|{u.source_id}|{u.start_s!r}|{list(u.audio)}".encode())
        return h.hexdigest()[:16]


_CONS = "bcdfghjklmnprstvwz"
_VOW = "aeiou"


def _make_vocabulary(n_words: int, n_digits: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < n_words:
        length = int(rng.integers(3, 7))
        w = "".join(
            (_CONS if k % 2 == 0 else _VOW)[int(rng.integers(0, len(_CONS if k % 2 == 0 else _VOW)))]
            for k in range(length)
        )
        if w not in seen:
            seen.add(w)
            words.append(w)
    digits: list[str] = []
    while len(digits) < n_digits:
        d = str(int(rng.integers(0, 10 ** int(rng.integers(1, 5)))))
        if d not in seen:
            seen.add(d)
            digits.append(d)
    return words + digits


def synth_language(cfg: SynthConfig) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Vocabulary, unigram law and word-to-word transition matrix."""
    rng = np.random.default_rng([cfg.seed, 1])
    n_digits = int(round(cfg.digit_token_fraction * cfg.vocab_size))
    vocab = _make_vocabulary(cfg.vocab_size - n_digits, n_digits, rng)
    ranks = rng.permutation(cfg.vocab_size)
    unigram = 1.0 / (ranks + 1.0) ** cfg.zipf_exponent
    unigram /= unigram.sum()
    trans = np.empty((cfg.vocab_size, cfg.vocab_size))
    k = min(cfg.successors, cfg.vocab_size)
    for w in range(cfg.vocab_size):
        succ = rng.choice(cfg.vocab_size, size=k, replace=False, p=unigram)
        weights = np.zeros(cfg.vocab_size)
        weights[succ] = unigram[succ] / unigram[succ].sum()
        trans[w] = (1 - cfg.context_strength) * unigram + cfg.context_strength * weights
    return vocab, unigram, trans


def synth_observation_map(cfg: SynthConfig, vocab: list[str]) -> ObservationMap:
    rng = np.random.default_rng([cfg.seed, 2])
    # homophones are drawn from alphabetic words only so digit tokens stay unambiguous
    alpha = [i for i, w in enumerate(vocab) if not w.isdigit()]
    n_class_words = cfg.homophone_class_count * cfg.class_size
    if n_class_words > len(alpha):
        raise CorpusError("not enough alphabetic words for the requested homophone classes")
    chosen = rng.choice(alpha, size=n_class_words, replace=False) if n_class_words else np.array([], int)
    w2s: dict[str, int] = {}
    for c in range(cfg.homophone_class_count):
        for i in chosen[c * cfg.class_size:(c + 1) * cfg.class_size]:
            w2s[vocab[int(i)]] = c
    nxt = cfg.homophone_class_count
    for w in vocab:
        if w not in w2s:
            w2s[w] = nxt
            nxt += 1
    return ObservationMap(w2s, nxt)


def _raw_transcript(tokens: Sequence[str]) -> str:
    text = " ".join(tokens)
    return text[:1].upper() + text[1:] + "."


def synth_corpus(cfg: SynthConfig) -> Corpus:
    vocab, unigram, trans = synth_language(cfg)
    omap = synth_observation_map(cfg, vocab)
    rng = np.random.default_rng([cfg.seed, 3])
    n_utts = sum(cfg.split_sizes)
    lo, hi = cfg.utterance_length_range
    segments: list[Segment] = []
    n_sources = -(-n_utts // cfg.utterances_per_source)
    width = len(str(n_sources))
    u = 0
    for s in range(n_sources):
        src = f"src{s:0{width}d}"
        t = 0.0
        for _ in range(min(cfg.utterances_per_source, n_utts - u)):
            length = int(rng.integers(lo, hi + 1))
            ids = [int(rng.choice(cfg.vocab_size, p=unigram))]
            for _k in range(length - 1):
                ids.append(int(rng.choice(cfg.vocab_size, p=trans[ids[-1]])))
            tokens = [vocab[i] for i in ids]
            clean = omap(tokens)
            noisy = []
            for o in clean:
                if rng.random() < cfg.acoustic_noise:
                    noisy.append(int(rng.integers(0, omap.n_symbols)))
                else:
                    noisy.append(o)
            t += round(float(rng.uniform(0.5, 3.0)), 2)
            start = round(t, 2)
            end = round(start + cfg.seconds_per_token * length, 2)
            segments.append(Segment(src, start, end, _raw_transcript(tokens), tuple(noisy)))
            t = end
            u += 1
    total = sum(cfg.split_sizes)
    ratios = [x / total for x in cfg.split_sizes]
    ratios[-1] = 1.0 - sum(ratios[:-1])
    splits = partition(segments, ratios, seed=cfg.seed)
    return Corpus(splits, vocab, omap, [float(p) for p in unigram], cfg)


# ---------------------------------------------------------------------------
# persistence

SEGMENTS_FILE = "segments.jsonl"
SPLITS_FILE = "splits.json"
META_FILE = "corpus.json"


def _segment_record(seg, split: str, transcript: str) -> dict:
    return {
        "source_id": seg.source_id,
        "start": seg.start_s,
        "end": seg.end_s,
        "audio": list(seg.audio),
        "transcript": transcript,
        "split": split,
    }


def save_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sp = corpus.splits
    lines = []
    for split in SPLITS:
        if split == "unlabeled":
            for u in sp.unlabeled:
                lines.append(_segment_record(u, split, sp.hidden.for_evaluation(u.key)))
        else:
            for s in getattr(sp, split):
                lines.append(_segment_record(s, split, s.transcript))
    with open(out / SEGMENTS_FILE, "w", encoding="utf-8") as f:
        for rec in lines:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    index = {k: sorted(v) for k, v in sp.source_sets().items()}
    (out / SPLITS_FILE).write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    meta = {
        "config": corpus.config.to_dict(),
        "vocabulary": corpus.vocabulary,
        "unigram": corpus.unigram,
        "observation_map": corpus.observation_map.word_to_symbol,
        "n_symbols": corpus.observation_map.n_symbols,
        "normalization": corpus.normalization.to_dict(),
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_corpus(corpus_dir: str | Path) -> Corpus:
    d = Path(corpus_dir)
    try:
        meta = json.loads((d / META_FILE).read_text(encoding="utf-8"))
        index = json.loads((d / SPLITS_FILE).read_text(encoding="utf-8"))
        records = [json.loads(line) for line in (d / SEGMENTS_FILE).read_text(encoding="utf-8").splitlines() if line]
    except (OSError, json.JSONDecodeError) as e:
        raise CorpusError(f"cannot load corpus from {d}: {e}") from e
    buckets: dict[str, list] = {k: [] for k in SPLITS}
    hidden = {}
    for rec in records:
        split = rec["split"]
        if split not in buckets:
            raise CorpusError(f"unknown split {split!r} in {SEGMENTS_FILE}")
        if rec["source_id"] not in index[split]:
            raise CorpusError(f"source {rec['source_id']} not listed under {split} in {SPLITS_FILE}")
        if split == "unlabeled":
            key = len(buckets[split])
            buckets[split].append(
                UnlabeledItem(key, rec["source_id"], rec["start"], rec["end"], tuple(rec["audio"]))
            )
            hidden[key] = rec["transcript"]
        else:
            buckets[split].append(
                Segment(rec["source_id"], rec["start"], rec["end"], rec["transcript"], tuple(rec["audio"]))
            )
    splits = CorpusSplits(
        buckets["labeled"], buckets["unlabeled"], buckets["validation"], buckets["test"], HiddenReferences(hidden)
    )
    omap = ObservationMap({k: int(v) for k, v in meta["observation_map"].items()}, int(meta["n_symbols"]))
    norm = meta.get("normalization")
    return Corpus(
        splits,
        list(meta["vocabulary"]),
        omap,
        [float(p) for p in meta["unigram"]],
        SynthConfig.from_dict(meta["config"]),
        NormalizationConfig.from_dict(norm) if norm else NormalizationConfig(),
    )


__all__ = [
    "SPLITS",
    "Corpus",
    "CorpusError",
    "CorpusSplits",
    "HiddenReferences",
    "ObservationMap",
    "Rejection",
    "Segment",
    "SynthConfig",
    "UnlabeledItem",
    "assign_sources",
    "filter_segments",
    "load_corpus",
    "merge_segments",
    "partition",
    "save_corpus",
    "synth_corpus",
]
