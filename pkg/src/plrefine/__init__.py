"""Iterative pseudo-label refinement for semi-supervised speech recognition.

The package pairs a recognizer with a corrector that rewrites the
recognizer's hypotheses on unlabeled audio before they are used as training
targets. Simulation backends make the whole loop run on a laptop; an
external backend drives real models through a line protocol.
"""

from .corpus import Corpus, SynthConfig, load_corpus, save_corpus, synth_corpus
from .loop import LoopConfig, decay_schedule, run_experiment, select_checkpoint, simulation_run
from .metrics import cer, edit_alignment, edit_distance, wer
from .textnorm import NormalizationConfig, normalize, tokenize

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "LoopConfig",
    "NormalizationConfig",
    "SynthConfig",
    "cer",
    "decay_schedule",
    "edit_alignment",
    "edit_distance",
    "load_corpus",
    "normalize",
    "run_experiment",
    "save_corpus",
    "select_checkpoint",
    "simulation_run",
    "synth_corpus",
    "tokenize",
    "wer",
]
