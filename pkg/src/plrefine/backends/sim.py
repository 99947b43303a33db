"""Count-table recognizer and corrector over a discrete observation channel.

The recognizer ("student") is a context-free table P(word | observation).
The corrector conditions on (observation, hypothesis token) with backoff to
observation-only, hypothesis-only and uniform, plus a bigram language model.
All randomness comes from explicit integer keys so every stage is a pure
function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from ..corpus import Corpus
from ..metrics import edit_alignment
from .types import BEAM, GREEDY, SAMPLE, DecodingSpec, Hypothesis, TrainStats

AUDIO_AWARE = "audio_aware"
TEXT_ONLY = "text_only"
MODES = (AUDIO_AWARE, TEXT_ONLY)


class BackendError(RuntimeError):
    pass


def _rng(key) -> np.random.Generator:
    return np.random.default_rng(key)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the simulated recognizer and corrector."""

    student_alpha: float = 0.01
    p_del: float = 0.01
    p_ins: float = 0.01
    prior_strength: float = 100.0
    domain_fraction: float = 0.6
    domain_prior_strength: float = 60.0
    domain_confident_fraction: float = 0.5
    sink_words: int = 8
    student_forgetting: float = 0.1
    corrector_alpha: float = 0.002
    lm_weight: float = 0.3
    copy_bias: float = 0.5
    corrector_knowledge: float = 0.5
    corrector_knowledge_strength: float = 5.0

    def __post_init__(self) -> None:
        if self.student_alpha <= 0 or self.corrector_alpha <= 0:
            raise ValueError("smoothing constants must be positive")
        if not (0 <= self.p_del < 1 and 0 <= self.p_ins < 1 and self.p_del + self.p_ins < 1):
            raise ValueError("p_del and p_ins must be probabilities summing below 1")
        if not 0 <= self.domain_fraction <= 1:
            raise ValueError("domain_fraction must lie in [0, 1]")
        if self.lm_weight < 0:
            raise ValueError("lm_weight must be non-negative")
        if not 0 <= self.student_forgetting < 1:
            raise ValueError("student_forgetting must lie in [0, 1)")
        if not 0 <= self.copy_bias <= 1:
            raise ValueError("copy_bias must lie in [0, 1]")
        if not 0 <= self.corrector_knowledge <= 1:
            raise ValueError("corrector_knowledge must lie in [0, 1]")
        if self.corrector_knowledge_strength < 0:
            raise ValueError("corrector_knowledge_strength must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"unknown simulation key: {unknown[0]}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# student


class StudentModel:
    """Recognizer table ``counts[observation, word]`` with add-alpha smoothing."""

    def __init__(self, counts: np.ndarray, alpha: float, p_del: float, p_ins: float, vocabulary: Sequence[str]):
        counts = np.array(counts, dtype=np.float64)
        if counts.ndim != 2 or counts.shape[1] != len(vocabulary):
            raise ValueError("counts must be (n_observations, |vocabulary|)")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        counts.setflags(write=False)
        self.counts = counts
        self.alpha = float(alpha)
        self.p_del = float(p_del)
        self.p_ins = float(p_ins)
        self.vocabulary = tuple(vocabulary)
        self.index = {w: i for i, w in enumerate(self.vocabulary)}
        probs = self.probabilities()
        self._best = probs.argmax(axis=1)
        self._best_p = probs[np.arange(len(probs)), self._best]

    @property
    def n_observations(self) -> int:
        return self.counts.shape[0]

    def probabilities(self) -> np.ndarray:
        num = self.counts + self.alpha
        return num / num.sum(axis=1, keepdims=True)

    def _check(self, audio: Sequence[int]) -> None:
        for o in audio:
            if not (isinstance(o, (int, np.integer)) and 0 <= o < self.n_observations):
                raise BackendError(f"unknown observation symbol {o!r}")

    def greedy_decode(self, audio: Sequence[int]) -> list[str]:
        self._check(audio)
        return [self.vocabulary[self._best[o]] for o in audio]

    def with_counts(self, counts: np.ndarray) -> "StudentModel":
        return StudentModel(counts, self.alpha, self.p_del, self.p_ins, self.vocabulary)


def base_student(corpus: Corpus, cfg: SimConfig) -> StudentModel:
    """Out-of-domain starting recognizer.

    General words are known with ``prior_strength`` pseudo-counts and
    homophone classes resolve to their most frequent member. A share
    (``domain_fraction``) of the remaining non-digit words is unknown to the
    base model and its observation is mapped to frequent "sink" words: a
    ``domain_confident_fraction`` of them confidently to one sink, the rest
    spread over three sinks, each with ``domain_prior_strength`` total mass.
    """
    vocab = corpus.vocabulary
    index = {w: i for i, w in enumerate(vocab)}
    uni = np.asarray(corpus.unigram)
    omap = corpus.observation_map
    counts = np.zeros((omap.n_symbols, len(vocab)))
    by_freq = sorted(range(len(vocab)), key=lambda i: (-uni[i], i))
    sinks = by_freq[: cfg.sink_words]
    classes = omap.classes()
    singles = [
        index[ws[0]]
        for o, ws in sorted(classes.items())
        if len(ws) == 1 and index[ws[0]] not in sinks and not ws[0].isdigit()
    ]
    rng = _rng([corpus.config.seed, 101])
    n_domain = int(round(cfg.domain_fraction * len(singles)))
    domain = [int(i) for i in rng.choice(singles, size=n_domain, replace=False)] if n_domain else []
    confident = set(domain[: int(round(cfg.domain_confident_fraction * len(domain)))])
    domain = set(domain)
    for o, ws in sorted(classes.items()):
        ids = [index[w] for w in ws]
        top = max(ids, key=lambda i: (uni[i], -i))
        if len(ids) == 1 and top in domain and sinks:
            picks = rng.choice(sinks, size=min(3, len(sinks)), replace=False)
            if top in confident:
                counts[o, picks[0]] = cfg.domain_prior_strength
            else:
                share = np.array([0.4, 0.35, 0.25])[: len(picks)]
                counts[o, picks] = cfg.domain_prior_strength * share / share.sum()
        else:
            counts[o, top] = cfg.prior_strength
    return StudentModel(counts, cfg.student_alpha, cfg.p_del, cfg.p_ins, vocab)


def corrector_prior(corpus: Corpus, cfg: SimConfig) -> Optional[np.ndarray]:
    """Pretrained acoustic knowledge of the corrector.

    A seeded ``corrector_knowledge`` share of the vocabulary gets
    ``corrector_knowledge_strength`` pseudo-counts at its own observation
    symbol. The share is drawn independently of the student's domain words,
    so the corrector knows some words the student gets wrong and vice versa.
    Returns None when the share is zero.
    """
    vocab = corpus.vocabulary
    n = int(round(cfg.corrector_knowledge * len(vocab)))
    if n == 0 or cfg.corrector_knowledge_strength == 0:
        return None
    omap = corpus.observation_map
    prior = np.zeros((omap.n_symbols, len(vocab)))
    rng = _rng([corpus.config.seed, 202])
    for i in sorted(int(k) for k in rng.choice(len(vocab), size=n, replace=False)):
        prior[omap.word_to_symbol[vocab[i]], i] += cfg.corrector_knowledge_strength
    return prior


def student_transcribe(model: StudentModel, audio: Sequence[int], rng_key) -> Hypothesis:
    """Per-observation argmax followed by seeded deletion/duplication noise."""
    model._check(audio)
    u = _rng(rng_key).random(len(audio))
    toks, confs = [], []
    for o, r in zip(audio, u):
        w = model.vocabulary[model._best[o]]
        p = float(model._best_p[o])
        if r < model.p_del:
            continue
        toks.append(w)
        confs.append(p)
        if r < model.p_del + model.p_ins:
            toks.append(w)
            confs.append(p / 2)
    return Hypothesis.from_tokens(toks, confs)


def _student_pairs(model: StudentModel, audio: Sequence[int], target: Sequence[str], stats: TrainStats):
    decode = model.greedy_decode(audio)
    al = edit_alignment(list(target), decode)
    for i, j in al.pairs:
        if i is None or j is None:
            continue
        w = model.index.get(target[i])
        if w is None:
            stats.skipped_oov += 1
            continue
        stats.pairs += 1
        yield audio[j], w


def student_train(
    model: StudentModel,
    examples: Sequence[tuple[Sequence[int], Sequence[str]]],
    eta: float,
    epochs: int,
    weights: Optional[Sequence[float]] = None,
    stats: Optional[TrainStats] = None,
    forgetting: float = 0.0,
) -> StudentModel:
    """Add ``eta`` per aligned (observation, target word) pair, ``epochs`` times.

    Each epoch aligns every target against the greedy decode of the model as
    it stood at the start of that epoch, then applies all increments. With
    ``forgetting`` > 0 the existing counts are first scaled by
    ``1 - forgetting * eta``, so long or aggressive training drifts away from
    the initial model the way gradient updates do.
    """
    if not eta > 0:
        raise ValueError(f"update weight must be positive, got {eta}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if weights is not None and len(weights) != len(examples):
        raise ValueError("weights must match examples")
    if not 0 <= forgetting * eta < 1:
        raise ValueError(f"forgetting * eta must lie in [0, 1), got {forgetting * eta}")
    keep = 1.0 - forgetting * eta
    stats = stats if stats is not None else TrainStats()
    for _ in range(epochs):
        delta = np.zeros_like(model.counts)
        for k, (audio, target) in enumerate(examples):
            step = eta * (1.0 if weights is None else weights[k])
            for o, w in _student_pairs(model, audio, target, stats):
                delta[o, w] += step
        model = model.with_counts(keep * model.counts + delta)
    return model


# ---------------------------------------------------------------------------
# corrector

_BOS = -1


class CorrectorModel:
    def __init__(
        self,
        vocabulary: Sequence[str],
        n_observations: int,
        mode: str = AUDIO_AWARE,
        alpha: float = 0.1,
        lm_weight: float = 0.3,
        copy_bias: float = 0.0,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown corrector mode {mode!r}")
        self.vocabulary = tuple(vocabulary)
        self.index = {w: i for i, w in enumerate(self.vocabulary)}
        self.n_observations = n_observations
        self.mode = mode
        self.alpha = float(alpha)
        self.lm_weight = float(lm_weight)
        self.copy_bias = float(copy_bias)
        V = len(self.vocabulary)
        self.channel: dict[tuple[int, int], np.ndarray] = {}
        self.obs_counts = np.zeros((n_observations, V))
        self.hyp_counts = np.zeros((V, V))
        # row V is the sentence-start context
        self.bigram = np.zeros((V + 1, V))
        self._frozen = False

    # -- conditionals -------------------------------------------------------

    def _smoothed(self, row: np.ndarray, base: np.ndarray) -> np.ndarray:
        # add-alpha, with the alpha*V pseudo-counts spread by the backoff distribution
        mass = self.alpha * len(self.vocabulary)
        return (row + mass * base) / (row.sum() + mass)

    def channel_distribution(self, o: Optional[int], h: Optional[int]) -> np.ndarray:
        """P(w | o, h) backing off (o, h) -> o -> h -> uniform.

        A context with no counts is skipped entirely; a context with counts is
        smoothed toward the distribution of the next level down.
        """
        V = len(self.vocabulary)
        dist = np.full(V, 1.0 / V)
        if h is not None and self.copy_bias > 0:
            dist = (1 - self.copy_bias) * dist
            dist[h] += self.copy_bias
        if h is not None and self.hyp_counts[h].sum() > 0:
            dist = self._smoothed(self.hyp_counts[h], dist)
        if self.mode == AUDIO_AWARE and o is not None:
            if self.obs_counts[o].sum() > 0:
                dist = self._smoothed(self.obs_counts[o], dist)
            if h is not None:
                row = self.channel.get((o, h))
                if row is not None:
                    dist = self._smoothed(row, dist)
        return dist

    def _unigram(self) -> np.ndarray:
        counts = self.bigram.sum(axis=0) + 1.0
        return counts / counts.sum()

    def lm_distribution(self, prev: int) -> np.ndarray:
        # one pseudo-count per word, as in add-one, but spread by the add-one
        # unigram so a rare history falls back to word frequencies
        V = len(self.vocabulary)
        row = self.bigram[prev] + V * self._unigram()
        return row / row.sum()

    def finalize(self) -> "CorrectorModel":
        num = self.bigram + len(self.vocabulary) * self._unigram()
        self._log_lm = np.log(num / num.sum(axis=1, keepdims=True))
        reading = np.where(self.obs_counts.sum(axis=1) > 0, self.obs_counts.argmax(axis=1), -1)
        self._reading = reading
        self._frozen = True
        return self

    def log_lm(self, prev: int) -> np.ndarray:
        return self._log_lm[prev]

    def reading(self, audio: Sequence[int]) -> list[str]:
        """Acoustic reading of the audio under the observation backoff table."""
        out = []
        for o in audio:
            r = int(self._reading[o])
            out.append(self.vocabulary[r] if r >= 0 else f"\x00obs{o}")
        return out


def _aligned_observations(model: CorrectorModel, audio: Sequence[int], hyp: Sequence[str]) -> list[Optional[int]]:
    obs: list[Optional[int]] = [None] * len(hyp)
    if not hyp:
        return obs
    if len(audio) == len(hyp):
        return list(audio)
    al = edit_alignment(model.reading(audio), list(hyp))
    for i, j in al.pairs:
        if i is not None and j is not None:
            obs[j] = audio[i]
    return obs


def corrector_train(
    triplets: Sequence[tuple[Optional[Sequence[int]], Sequence[str], Sequence[str]]],
    vocabulary: Sequence[str],
    n_observations: int,
    mode: str = AUDIO_AWARE,
    alpha: float = 0.1,
    lm_weight: float = 0.3,
    copy_bias: float = 0.0,
    prior: Optional[np.ndarray] = None,
) -> CorrectorModel:
    """Fit a fresh corrector on ``(audio, hypothesis, truth)`` triplets.

    Audio is assumed token-aligned with the truth, so the observation for an
    aligned (truth i, hypothesis j) pair is ``audio[i]``.
    """
    if not triplets:
        raise ValueError("corrector_train needs at least one triplet")
    model = CorrectorModel(vocabulary, n_observations, mode, alpha, lm_weight, copy_bias)
    if prior is not None and mode == AUDIO_AWARE:
        if prior.shape != model.obs_counts.shape:
            raise ValueError(f"prior shape {prior.shape} does not match {model.obs_counts.shape}")
        model.obs_counts += prior
    idx = model.index
    V = len(model.vocabulary)
    for audio, hyp, truth in triplets:
        prev = V
        for w in truth:
            wi = idx.get(w)
            if wi is None:
                prev = V
                continue
            model.bigram[prev, wi] += 1
            prev = wi
        al = edit_alignment(list(truth), list(hyp))
        for i, j in al.pairs:
            if i is None or j is None:
                continue
            wi, hi = idx.get(truth[i]), idx.get(hyp[j])
            if wi is None:
                continue
            if hi is not None:
                model.hyp_counts[hi, wi] += 1
            if mode == AUDIO_AWARE and audio is not None and i < len(audio):
                o = int(audio[i])
                model.obs_counts[o, wi] += 1
                if hi is not None:
                    row = model.channel.get((o, hi))
                    if row is None:
                        row = model.channel[(o, hi)] = np.zeros(V)
                    row[wi] += 1
    return model.finalize()


def _emission_scores(model: CorrectorModel, audio: Optional[Sequence[int]], hyp: Sequence[str]) -> np.ndarray:
    if model.mode == AUDIO_AWARE:
        if audio is None:
            raise BackendError("audio_aware corrector requires audio")
        obs = _aligned_observations(model, audio, hyp)
    else:
        # text_only never reads the audio, whatever the caller passes
        obs = [None] * len(hyp)
    rows = [model.channel_distribution(o, model.index.get(h)) for o, h in zip(obs, hyp)]
    if not rows:
        return np.zeros((0, len(model.vocabulary)))
    return np.log(np.vstack(rows))


def sequence_score(model: CorrectorModel, emissions: np.ndarray, seq: Sequence[int]) -> float:
    V = len(model.vocabulary)
    prev, total = V, 0.0
    for j, w in enumerate(seq):
        total += emissions[j, w] + model.lm_weight * model.log_lm(prev)[w]
        prev = w
    return float(total)


def _greedy(model: CorrectorModel, em: np.ndarray) -> list[int]:
    V = len(model.vocabulary)
    prev, out = V, []
    for j in range(em.shape[0]):
        s = em[j] + model.lm_weight * model.log_lm(prev)
        prev = int(np.argmax(s))
        out.append(prev)
    return out


def _beam(model: CorrectorModel, em: np.ndarray, width: int) -> list[int]:
    V = len(model.vocabulary)
    beams: list[tuple[float, list[int]]] = [(0.0, [])]
    for j in range(em.shape[0]):
        scores = np.vstack(
            [sc + em[j] + model.lm_weight * model.log_lm(seq[-1] if seq else V) for sc, seq in beams]
        )
        flat = scores.ravel()
        # stable sort: ties go to the earlier beam, then the lower word index
        top = np.argsort(-flat, kind="stable")[:width]
        beams = [(float(flat[k]), beams[k // V][1] + [int(k % V)]) for k in top]
    best = beams[0][1]
    if width > 1:
        g = _greedy(model, em)
        if sequence_score(model, em, g) > sequence_score(model, em, best):
            best = g
    return best


def _sample(model: CorrectorModel, em: np.ndarray, temperature: float, seed) -> list[int]:
    V = len(model.vocabulary)
    rng = _rng(seed)
    prev, out = V, []
    for j in range(em.shape[0]):
        s = (em[j] + model.lm_weight * model.log_lm(prev)) / temperature
        p = np.exp(s - s.max())
        p /= p.sum()
        prev = int(rng.choice(V, p=p))
        out.append(prev)
    return out


def corrector_correct(
    model: CorrectorModel,
    audio: Optional[Sequence[int]],
    hyp: Hypothesis | Sequence[str],
    dec: DecodingSpec,
) -> list[str]:
    """Substitution-only correction: the output has the hypothesis' length."""
    tokens = list(hyp.tokens) if isinstance(hyp, Hypothesis) else list(hyp)
    em = _emission_scores(model, audio, tokens)
    if dec.strategy == GREEDY or (dec.strategy == BEAM and dec.width == 1):
        ids = _greedy(model, em)
    elif dec.strategy == BEAM:
        ids = _beam(model, em, dec.width)
    elif dec.strategy == SAMPLE:
        ids = _sample(model, em, dec.temperature, dec.seed)
    else:  # pragma: no cover - DecodingSpec validates
        raise ValueError(dec.strategy)
    return [model.vocabulary[i] for i in ids]


def decode_score(model: CorrectorModel, audio, hyp: Sequence[str], out: Sequence[str]) -> float:
    """Total sequence score of ``out`` under the correction scoring function."""
    em = _emission_scores(model, audio, list(hyp))
    return sequence_score(model, em, [model.index[w] for w in out])


def conditional_tables(model) -> Iterable[np.ndarray]:
    """Every conditional distribution a model can produce, one row per context."""
    if isinstance(model, StudentModel):
        yield from model.probabilities()
        return
    V = len(model.vocabulary)
    for (o, h) in model.channel:
        yield model.channel_distribution(o, h)
    for o in range(model.n_observations):
        yield model.channel_distribution(o, None)
    for h in range(V):
        yield model.channel_distribution(None, h)
    for prev in range(V + 1):
        yield model.lm_distribution(prev)
