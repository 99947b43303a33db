"""Quality gates for corrected and raw pseudo-labels.

Thresholds are inclusive on the accepting side: a correction is rejected only
when its CER strictly exceeds the cap, its unique-token ratio is strictly
below the floor, and so on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backends.types import Hypothesis
from .metrics import FeatureRecord, cer, compression_ratio, digit_mismatch, features, length_ratio, unique_token_ratio, wer
from .textnorm import TokenSeq, render_chars

OK = "ok"
CER_EXCEEDED = "cer_exceeded"
LENGTH_RATIO = "length_ratio"
LOW_UNIQUE_RATIO = "low_unique_ratio"
DIGIT_MISMATCH = "digit_mismatch"
LOW_CONFIDENCE = "low_confidence"
SPEAKING_RATE = "speaking_rate"
COMPRESSION_RATIO = "compression_ratio"
MODEL_REJECT = "model_reject"

REASONS = (
    OK,
    CER_EXCEEDED,
    LENGTH_RATIO,
    LOW_UNIQUE_RATIO,
    DIGIT_MISMATCH,
    LOW_CONFIDENCE,
    SPEAKING_RATE,
    COMPRESSION_RATIO,
    MODEL_REJECT,
)


@dataclass(frozen=True)
class RuleThresholds:
    max_cer: float = 0.15
    length_ratio: tuple[float, float] = (0.95, 1.15)
    min_unique_ratio: float = 0.40
    max_digit_mismatch: int = 2


@dataclass(frozen=True)
class IplThresholds:
    min_confidence: float = 0.95
    speaking_rate: tuple[float, float] = (2.0, 5.0)
    min_compression_ratio: float = 0.5


@dataclass(frozen=True)
class FilterDecision:
    accept: bool
    reason: str
    features: Optional[FeatureRecord] = None

    def __post_init__(self) -> None:
        if self.reason not in REASONS:
            raise ValueError(f"unknown filter reason {self.reason!r}")
        if self.accept != (self.reason == OK):
            raise ValueError("accept must hold exactly when reason is ok")


def rule_decision(feats: FeatureRecord, thresholds: RuleThresholds = RuleThresholds()) -> str:
    """Reason code for a correction's features; checks run CER, length, unique, digits.

    An empty hypothesis has no length ratio and is reported as a length
    violation before anything else is looked at.
    """
    lo, hi = thresholds.length_ratio
    if feats.length_ratio is None:
        return LENGTH_RATIO
    if feats.cer > thresholds.max_cer:
        return CER_EXCEEDED
    if not lo <= feats.length_ratio <= hi:
        return LENGTH_RATIO
    if feats.unique_token_ratio is None or feats.unique_token_ratio < thresholds.min_unique_ratio:
        return LOW_UNIQUE_RATIO
    if feats.digit_mismatch > thresholds.max_digit_mismatch:
        return DIGIT_MISMATCH
    return OK


def rule_filter_correction(
    hyp: TokenSeq, corr: TokenSeq, thresholds: RuleThresholds = RuleThresholds()
) -> FilterDecision:
    feats = features(hyp, corr)
    if hyp and list(corr) == list(hyp):
        # an unchanged hypothesis is never worse than itself, even when it is
        # repetitive enough to fail the unique-token floor
        return FilterDecision(True, OK, feats)
    reason = rule_decision(feats, thresholds)
    return FilterDecision(reason == OK, reason, feats)


def ipl_decision(
    confidence: float, speaking_rate: float, compression: float, thresholds: IplThresholds = IplThresholds()
) -> str:
    lo, hi = thresholds.speaking_rate
    if confidence < thresholds.min_confidence:
        return LOW_CONFIDENCE
    if not lo <= speaking_rate <= hi:
        return SPEAKING_RATE
    if compression < thresholds.min_compression_ratio:
        return COMPRESSION_RATIO
    return OK


def ipl_filter(hyp: Hypothesis, duration_s: float, thresholds: IplThresholds = IplThresholds()) -> FilterDecision:
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    tokens = list(hyp.tokens)
    feats = features(tokens, tokens, duration_s=duration_s)
    reason = ipl_decision(hyp.confidence, feats.speaking_rate, feats.compression_ratio, thresholds)
    return FilterDecision(reason == OK, reason, feats)


# ---------------------------------------------------------------------------
# learned filter

FEATURE_NAMES = ("cer", "length_ratio", "unique_token_ratio", "digit_mismatch", "confidence", "corr_len")


def model_features(hyp: TokenSeq, corr: TokenSeq, confidence: float) -> np.ndarray:
    # undefined ratios are mapped to 0, which sits far outside the normal range
    lr = length_ratio(hyp, corr)
    ur = unique_token_ratio(corr)
    return np.array(
        [
            cer(render_chars(hyp), render_chars(corr)),
            0.0 if lr is None else lr,
            0.0 if ur is None else ur,
            float(digit_mismatch(hyp, corr)),
            float(confidence),
            float(len(corr)),
        ]
    )


@dataclass
class ModelFilter:
    weights: np.ndarray
    bias: float
    mean: np.ndarray = field(default_factory=lambda: np.zeros(len(FEATURE_NAMES)))
    scale: np.ndarray = field(default_factory=lambda: np.ones(len(FEATURE_NAMES)))
    threshold: float = 0.5

    def score(self, hyp: TokenSeq, corr: TokenSeq, confidence: float) -> float:
        x = (model_features(hyp, corr, confidence) - self.mean) / self.scale
        z = float(np.dot(self.weights, x) + self.bias)
        return _sigmoid(z)

    def to_dict(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "mean": [float(m) for m in self.mean],
            "scale": [float(s) for s in self.scale],
        }


def _sigmoid(z):
    if isinstance(z, float):
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class DegenerateTrainingSet(ValueError):
    pass


def model_filter_label(hyp: TokenSeq, corr: TokenSeq, truth: TokenSeq) -> int:
    return int(wer(truth, corr) < wer(truth, hyp))


def model_filter_train(
    examples: Sequence[tuple[TokenSeq, TokenSeq, TokenSeq, float]],
    seed: int = 0,
    steps: int = 500,
    lr: float = 0.1,
) -> ModelFilter:
    """Logistic regression on scalar correction features.

    Each example is ``(hyp, corr, truth, hypothesis confidence)``; the label
    is whether the correction lowers WER against the truth. Full-batch
    gradient descent from zero weights on standardized features, so the
    result is fully determined by the data. ``seed`` only breaks ties in the
    example order, which does not affect a full-batch fit.
    """
    if len(examples) < 2:
        raise DegenerateTrainingSet("model filter needs at least two examples")
    X = np.vstack([model_features(h, c, conf) for h, c, _t, conf in examples])
    y = np.array([model_filter_label(h, c, t) for h, c, t, _conf in examples], dtype=float)
    if y.min() == y.max():
        raise DegenerateTrainingSet(f"all {len(y)} training labels are {int(y[0])}")
    order = np.random.default_rng(seed).permutation(len(y))
    X, y = X[order], y[order]
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    w = np.zeros(Z.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(steps):
        p = _sigmoid(Z @ w + b)
        g = p - y
        w -= lr * (Z.T @ g) / n
        b -= lr * float(g.sum()) / n
    return ModelFilter(w, b, mean, scale)


def model_filter_apply(f: ModelFilter, hyp: TokenSeq, corr: TokenSeq, confidence: float) -> FilterDecision:
    accept = f.score(hyp, corr, confidence) >= f.threshold
    return FilterDecision(accept, OK if accept else MODEL_REJECT, features(hyp, corr))
