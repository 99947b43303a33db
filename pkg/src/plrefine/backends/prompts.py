"""Instruction templates sent with every correct request to an external corrector."""

from __future__ import annotations

PLACEHOLDER = "<hypothesis>"

AUDIO_AWARE = (
    "Correct the ASR hypothesis based on the provided audio. "
    "Transcribe the speech exactly as spoken. "
    "Output strictly the corrected text without any explanations or fillers. "
    "Hypothesis: <hypothesis>"
)

TEXT_ONLY = (
    "Correct the ASR hypothesis by fixing typos and misspellings. "
    "Preserve the original style and do not paraphrase. "
    "Output strictly the corrected text without any explanations or fillers. "
    "Hypothesis: <hypothesis>"
)

TEMPLATES = {"audio_aware": AUDIO_AWARE, "text_only": TEXT_ONLY}


def render(mode: str, hypothesis: str) -> str:
    template = TEMPLATES[mode]
    head, sep, tail = template.partition(PLACEHOLDER)
    assert sep and PLACEHOLDER not in tail
    return head + hypothesis + tail
