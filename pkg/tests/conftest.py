from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default",
    max_examples=200,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

from plrefine.corpus import SynthConfig, synth_corpus  # noqa: E402

PEERS = Path(__file__).parent / "peers"

SMALL = SynthConfig(vocab_size=60, homophone_class_count=10, split_sizes=(30, 60, 20, 20), seed=3)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(SMALL)


@pytest.fixture(scope="session")
def default_corpus():
    return synth_corpus(SynthConfig())


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.line(n))
