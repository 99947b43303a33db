"""Recognizer and corrector backends.

The loop talks to two small interfaces, :class:`Recognizer` and
:class:`Corrector`. The simulation implementations wrap the pure functions
in :mod:`.sim`; :mod:`.external` proxies the same calls to a child process.
"""

from __future__ import annotations

from typing import Optional, Protocol, Sequence

import numpy as np

from .sim import (
    AUDIO_AWARE,
    MODES,
    TEXT_ONLY,
    BackendError,
    CorrectorModel,
    SimConfig,
    StudentModel,
    base_student,
    corrector_correct,
    corrector_prior,
    corrector_train,
    student_train,
    student_transcribe,
)
from .types import DecodingSpec, Hypothesis, TrainStats


class Recognizer(Protocol):
    def transcribe(self, audio: Sequence[int], rng_key) -> Hypothesis: ...

    def train(self, examples: Sequence[tuple], eta: float, epochs: int, weights=None) -> TrainStats: ...

    def snapshot(self): ...

    def restore(self, state) -> None: ...


class Corrector(Protocol):
    mode: str

    def train(self, triplets: Sequence[tuple]) -> None: ...

    def correct(self, audio: Optional[Sequence[int]], hyp: Hypothesis, dec: DecodingSpec) -> list[str]: ...


class SimRecognizer:
    def __init__(self, model: StudentModel, forgetting: float = 0.0):
        self.model = model
        self.forgetting = forgetting

    def transcribe(self, audio, rng_key) -> Hypothesis:
        return student_transcribe(self.model, audio, rng_key)

    def train(self, examples, eta, epochs, weights=None) -> TrainStats:
        stats = TrainStats()
        self.model = student_train(
            self.model, examples, eta, epochs, weights=weights, stats=stats, forgetting=self.forgetting
        )
        return stats

    def snapshot(self) -> StudentModel:
        return self.model

    def restore(self, state: StudentModel) -> None:
        self.model = state

    def save(self, path) -> None:
        np.save(path, self.model.counts, allow_pickle=False)


class SimCorrector:
    """Count-based corrector; retrained from scratch on every ``train`` call."""

    def __init__(
        self,
        vocabulary,
        n_observations: int,
        mode: str = AUDIO_AWARE,
        alpha: float = 0.1,
        lm_weight: float = 0.3,
        copy_bias: float = 0.0,
        prior: Optional[np.ndarray] = None,
    ):
        self.vocabulary = tuple(vocabulary)
        self.n_observations = n_observations
        self.mode = mode
        self.alpha = alpha
        self.lm_weight = lm_weight
        self.copy_bias = copy_bias
        self.prior = prior
        self.model: Optional[CorrectorModel] = None

    @classmethod
    def from_config(cls, corpus, cfg: SimConfig, mode: str = AUDIO_AWARE) -> "SimCorrector":
        return cls(
            corpus.vocabulary,
            corpus.observation_map.n_symbols,
            mode,
            alpha=cfg.corrector_alpha,
            lm_weight=cfg.lm_weight,
            copy_bias=cfg.copy_bias,
            prior=corrector_prior(corpus, cfg),
        )

    def train(self, triplets) -> None:
        if self.mode == TEXT_ONLY:
            triplets = [(None, h, t) for _a, h, t in triplets]
        self.model = corrector_train(
            triplets,
            self.vocabulary,
            self.n_observations,
            self.mode,
            self.alpha,
            self.lm_weight,
            self.copy_bias,
            self.prior,
        )

    def correct(self, audio, hyp: Hypothesis, dec: DecodingSpec) -> list[str]:
        if self.model is None:
            raise BackendError("corrector used before training")
        return corrector_correct(self.model, audio if self.mode == AUDIO_AWARE else None, hyp, dec)

    def fresh(self) -> "SimCorrector":
        return SimCorrector(
            self.vocabulary,
            self.n_observations,
            self.mode,
            self.alpha,
            self.lm_weight,
            self.copy_bias,
            self.prior,
        )


__all__ = [
    "AUDIO_AWARE",
    "MODES",
    "TEXT_ONLY",
    "BackendError",
    "Corrector",
    "CorrectorModel",
    "DecodingSpec",
    "Hypothesis",
    "Recognizer",
    "SimConfig",
    "SimCorrector",
    "SimRecognizer",
    "StudentModel",
    "TrainStats",
    "base_student",
    "corrector_prior",
]
