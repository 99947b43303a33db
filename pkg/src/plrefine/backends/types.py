from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

GREEDY = "greedy"
BEAM = "beam"
SAMPLE = "sample"


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[str, ...]
    token_confidences: tuple[float, ...]
    confidence: float
    empty: bool = False

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], confidences: Optional[Sequence[float]] = None) -> "Hypothesis":
        tokens = tuple(tokens)
        if confidences is None:
            confidences = (1.0,) * len(tokens)
        confidences = tuple(float(c) for c in confidences)
        if len(confidences) != len(tokens):
            raise ValueError(f"{len(tokens)} tokens but {len(confidences)} confidences")
        for c in confidences:
            if not 0.0 < c <= 1.0:
                raise ValueError(f"token confidence outside (0, 1]: {c}")
        if not tokens:
            return cls((), (), 1.0, empty=True)
        # geometric mean
        conf = math.exp(math.fsum(math.log(c) for c in confidences) / len(confidences))
        return cls(tokens, confidences, min(1.0, conf))


@dataclass(frozen=True)
class DecodingSpec:
    strategy: str = BEAM
    width: int = 5
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in (GREEDY, BEAM, SAMPLE):
            raise ValueError(f"unknown decoding strategy {self.strategy!r}")
        if self.strategy == BEAM and self.width < 1:
            raise ValueError("beam width must be >= 1")
        if self.strategy == SAMPLE and not self.temperature > 0:
            raise ValueError("sampling temperature must be > 0")
        if self.strategy != BEAM:
            # width only matters to beam search; pin it so equivalent specs compare equal
            object.__setattr__(self, "width", 1)

    @property
    def label(self) -> str:
        if self.strategy == BEAM:
            return f"beam{self.width}"
        if self.strategy == SAMPLE:
            return f"sample T={self.temperature:g}"
        return GREEDY

    @classmethod
    def greedy(cls) -> "DecodingSpec":
        return cls(GREEDY, width=1)

    @classmethod
    def beam(cls, width: int) -> "DecodingSpec":
        return cls(BEAM, width=width)

    @classmethod
    def sample(cls, temperature: float, seed: int = 0) -> "DecodingSpec":
        return cls(SAMPLE, temperature=temperature, seed=seed)

    @classmethod
    def from_dict(cls, d: dict) -> "DecodingSpec":
        unknown = sorted(set(d) - {"strategy", "width", "temperature", "seed"})
        if unknown:
            raise KeyError(f"unknown decoding key: {unknown[0]}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "width": self.width, "temperature": self.temperature, "seed": self.seed}

    def with_seed(self, seed: int) -> "DecodingSpec":
        return DecodingSpec(self.strategy, self.width, self.temperature, seed)


@dataclass
class TrainStats:
    pairs: int = 0
    skipped_oov: int = 0
    extra: dict = field(default_factory=dict)
