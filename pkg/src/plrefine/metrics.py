"""Edit-distance alignment, error rates and the scalar features used by filters."""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .textnorm import TokenSeq, render_chars

GAP = None

# backtracking preference, highest first
_CORRECT, _SUB, _DEL, _INS = range(4)


@dataclass(frozen=True)
class Alignment:
    substitutions: int
    deletions: int
    insertions: int
    correct: int
    pairs: tuple[tuple[Optional[int], Optional[int]], ...]

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _dp_table(ref: Sequence, hyp: Sequence) -> list[list[int]]:
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        row, prev = d[i], d[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            cost = prev[j - 1] + (r != hyp[j - 1])
            if prev[j] + 1 < cost:
                cost = prev[j] + 1
            if row[j - 1] + 1 < cost:
                cost = row[j - 1] + 1
            row[j] = cost
    return d


def edit_alignment(ref: Sequence, hyp: Sequence) -> Alignment:
    """Minimum-cost alignment under unit costs.

    Backtracking from the end prefers correct > substitution > deletion >
    insertion among the moves that stay on an optimal path. ``pairs`` holds
    ``(ref_index, hyp_index)`` with ``None`` marking a gap.
    """
    d = _dp_table(ref, hyp)
    i, j = len(ref), len(hyp)
    pairs = []
    s = dl = ins = c = 0
    while i > 0 or j > 0:
        here = d[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d[i - 1][j - 1] == here:
            c += 1
            i, j = i - 1, j - 1
            pairs.append((i, j))
        elif i > 0 and j > 0 and d[i - 1][j - 1] + 1 == here:
            s += 1
            i, j = i - 1, j - 1
            pairs.append((i, j))
        elif i > 0 and d[i - 1][j] + 1 == here:
            dl += 1
            i -= 1
            pairs.append((i, GAP))
        else:
            ins += 1
            j -= 1
            pairs.append((GAP, j))
    pairs.reverse()
    return Alignment(s, dl, ins, c, tuple(pairs))


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Unit-cost Levenshtein distance, two-row DP (no backtrace)."""
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i]
        for j, h in enumerate(hyp, 1):
            cur.append(min(prev[j - 1] + (r != h), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class ErrorRate:
    value: float
    edits: int
    ref_len: int
    degenerate: bool = False


def error_rate(ref: Sequence, hyp: Sequence) -> ErrorRate:
    edits = edit_distance(ref, hyp)
    if len(ref) == 0:
        # empty reference: 0 if both empty, otherwise |hyp| / 1, flagged
        return ErrorRate(float(len(hyp)), edits, 0, degenerate=len(hyp) > 0)
    return ErrorRate(edits / len(ref), edits, len(ref))


def wer(ref: TokenSeq, hyp: TokenSeq) -> float:
    return error_rate(ref, hyp).value


def cer(ref: str, hyp: str) -> float:
    return error_rate(ref, hyp).value


def corpus_wer(pairs: Sequence[tuple[TokenSeq, TokenSeq]]) -> float:
    """Pooled WER over many utterances: total edits over total reference words."""
    edits = words = 0
    for ref, hyp in pairs:
        edits += edit_distance(ref, hyp)
        words += len(ref)
    if words == 0:
        return float(edits)
    return edits / words


@dataclass(frozen=True)
class FeatureRecord:
    wer: float
    cer: float
    length_ratio: Optional[float]
    unique_token_ratio: Optional[float]
    digit_mismatch: int
    compression_ratio: float
    speaking_rate: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def length_ratio(hyp: TokenSeq, corr: TokenSeq) -> Optional[float]:
    h = len(render_chars(hyp))
    if h == 0:
        return None
    return len(render_chars(corr)) / h


def unique_token_ratio(corr: TokenSeq) -> Optional[float]:
    if not corr:
        return None
    return len(set(corr)) / len(corr)


def digit_mismatch(hyp: TokenSeq, corr: TokenSeq) -> int:
    a = Counter(t for t in hyp if any(c.isdigit() for c in t))
    b = Counter(t for t in corr if any(c.isdigit() for c in t))
    return sum(((a - b) + (b - a)).values())


def compression_ratio(text: str) -> float:
    """Raw-DEFLATE (level 6) bytes over raw bytes, capped at 1.

    Short transcripts can expand under DEFLATE; the cap keeps the value in
    (0, 1]. Empty text counts as incompressible (1.0).
    """
    raw = text.encode("utf-8")
    if not raw:
        return 1.0
    comp = zlib.compressobj(6, zlib.DEFLATED, -15)
    packed = comp.compress(raw) + comp.flush()
    return min(1.0, len(packed) / len(raw))


def features(
    hyp: TokenSeq,
    corr: TokenSeq,
    confidence: Optional[float] = None,
    duration_s: Optional[float] = None,
) -> FeatureRecord:
    """Feature record of a correction ``corr`` against the hypothesis ``hyp``.

    ``confidence`` is accepted for interface symmetry with the filters but is
    not a feature of the pair itself. ``speaking_rate`` is None unless a
    duration is given.
    """
    del confidence
    if duration_s is not None and duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    same = list(hyp) == list(corr)
    return FeatureRecord(
        wer=0.0 if same and hyp else wer(hyp, corr),
        cer=0.0 if same and hyp else cer(render_chars(hyp), render_chars(corr)),
        length_ratio=length_ratio(hyp, corr),
        unique_token_ratio=unique_token_ratio(corr),
        digit_mismatch=digit_mismatch(hyp, corr),
        compression_ratio=compression_ratio(render_chars(corr)),
        speaking_rate=None if duration_s is None else len(corr) / duration_s,
    )
