"""Acceptance suite: ten criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or ``python3 tests/test_acceptance.py`` (lines go to stdout).
Criteria 4 to 7 share one set of simulation runs over seeds 0 to 4.
"""

from __future__ import annotations

import json
import math
import random
import statistics
import sys
import tempfile
import time
from functools import lru_cache
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from hypothesis import given, settings  # noqa: E402
from hypothesis import strategies as st  # noqa: E402

import conftest  # noqa: E402,F401  (hypothesis profile)
from oracles import oracle_edit_distance  # noqa: E402
from plrefine.backends import SimConfig, SimCorrector, SimRecognizer, base_student  # noqa: E402
from plrefine.backends.sim import conditional_tables, corrector_correct, decode_score  # noqa: E402
from plrefine.backends.types import DecodingSpec  # noqa: E402
from plrefine.cli import main as cli_main  # noqa: E402
from plrefine.corpus import Segment, SynthConfig, filter_segments, merge_segments, synth_corpus  # noqa: E402
from plrefine.filters import OK, ipl_decision, rule_decision, rule_filter_correction  # noqa: E402
from plrefine.loop import LoopConfig, simulation_run  # noqa: E402
from plrefine.metrics import cer, edit_alignment, error_rate, wer  # noqa: E402
from plrefine.textnorm import normalize  # noqa: E402

SEEDS = range(5)
RESULTS: dict[int, tuple[bool, str]] = {}

CONDITIONS = {
    "isl": dict(method="isl"),
    "ipl": dict(method="ipl"),
    "ipl_rule": dict(method="ipl_rule"),
    "rehear": dict(method="rehear"),
    "text_only": dict(method="rehear", corrector_mode="text_only"),
    "greedy": dict(method="rehear", decoding=DecodingSpec.greedy()),
    "sample": dict(method="rehear", decoding=DecodingSpec.sample(0.7)),
    "T5": dict(method="rehear", max_iterations=5),
    "T5_decay": dict(method="rehear", max_iterations=5, decay=True),
}


@lru_cache(maxsize=None)
def default_corpus():
    return synth_corpus(SynthConfig())


@lru_cache(maxsize=None)
def runs(name: str) -> tuple[list[dict], float]:
    """Manifests for one condition over all seeds, and the wall time spent."""
    t0 = time.perf_counter()
    out = []
    for seed in SEEDS:
        cfg = LoopConfig(seed=seed, saturation_epsilon=None, **CONDITIONS[name])
        out.append(simulation_run(cfg, default_corpus(), SimConfig()).manifest)
    return out, time.perf_counter() - t0


def final(name: str, split: str) -> list[float]:
    return [m["selected"]["wer"][split] for m in runs(name)[0]]


def mean(name: str, split: str) -> float:
    return statistics.fmean(final(name, split))


def record(n: int, ok: bool, detail: str) -> tuple[bool, str]:
    RESULTS[n] = (ok, detail)
    return ok, detail


# ---------------------------------------------------------------------------


def criterion_1():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    bad = 0
    for _ in range(1000):
        ref = [rng.choice("abcd") for _ in range(rng.randint(0, 12))]
        hyp = [rng.choice("abcd") for _ in range(rng.randint(0, 12))]
        d = oracle_edit_distance(ref, hyp)
        want = d / len(ref) if ref else float(d)
        bad += wer(ref, hyp) != want or error_rate(ref, hyp).edits != d
    alphabet = "abcdefgh ij"
    for _ in range(1000):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 20)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 20)))
        d = oracle_edit_distance(a, b)
        want = d / len(a) if a else float(d)
        bad += cer(a, b) != want
    elapsed = time.perf_counter() - t0
    return record(1, bad == 0 and elapsed < 10, f"{bad} mismatches in 2000 pairs, {elapsed:.1f}s")


def criterion_2():
    from test_filters import IPL_BOUNDARIES, RULE_BOUNDARIES

    wrong = [(f, r) for f, r in RULE_BOUNDARIES if rule_decision(f) != r]
    wrong += [(a, r) for a, r in IPL_BOUNDARIES if ipl_decision(*a) != r]
    # accepting boundary values written as plain float literals
    exact = [
        ipl_decision(0.95, 3.0, 0.8) == OK,
        ipl_decision(0.9499, 3.0, 0.8) != OK,
        ipl_decision(0.96, 2.0, 0.8) == OK,
        ipl_decision(0.96, 5.0, 0.8) == OK,
        ipl_decision(0.96, 3.0, 0.5) == OK,
    ]
    ok = not wrong and all(exact)
    return record(2, ok, f"{len(RULE_BOUNDARIES) + len(IPL_BOUNDARIES)} boundary rows, {len(wrong)} wrong")


def criterion_3():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "exp.json"
        cfg.write_text(json.dumps({"loop": {"method": "rehear_model", "decoding": {"strategy": "sample", "temperature": 0.7}}}))
        codes = [
            cli_main(["run", "--config", str(cfg), "--seeds", "0-4", "--workers", str(w), "--out", str(tmp / f"w{w}")])
            for w in (1, 8)
        ]
        one = {p.relative_to(tmp / "w1"): p.read_bytes() for p in sorted((tmp / "w1").rglob("manifest.json"))}
        eight = {p.relative_to(tmp / "w8"): p.read_bytes() for p in sorted((tmp / "w8").rglob("manifest.json"))}
    ok = codes == [0, 0] and len(one) == 5 and one == eight
    return record(3, ok, f"{len(one)} manifests at 1 worker, {len(eight)} at 8, identical={one == eight}")


def criterion_4():
    names = ("isl", "ipl", "ipl_rule", "rehear")
    elapsed = sum(runs(n)[1] for n in names)
    m = {n: mean(n, "unlabeled") for n in names}
    reduction = 1 - m["rehear"] / m["ipl"]
    ok = (
        m["rehear"] < m["isl"] < m["ipl"]
        and reduction >= 0.10
        and m["isl"] < m["ipl_rule"] < m["ipl"]
        and elapsed < 180
    )
    detail = ", ".join(f"{n} {v:.2f}" for n, v in m.items()) + f"; reduction {reduction:.0%}; {elapsed:.0f}s"
    return record(4, ok, detail)


def criterion_5():
    parts, ok = [], True
    for split in ("test", "unlabeled"):
        a, t = final("rehear", split), final("text_only", split)
        pooled = math.sqrt((statistics.stdev(a) ** 2 + statistics.stdev(t) ** 2) / 2)
        gap = statistics.fmean(t) - statistics.fmean(a)
        ok &= gap > pooled
        parts.append(f"{split} gap {gap:.2f} vs pooled sd {pooled:.2f}")
    return record(5, ok, "; ".join(parts))


def beam_one_matches_greedy() -> tuple[int, int]:
    corpus = default_corpus()
    sim = SimConfig()
    student = SimRecognizer(base_student(corpus, sim), sim.student_forgetting)
    corrector = SimCorrector.from_config(corpus, sim)
    corrector.train([(s.audio, student.transcribe(s.audio, [0, k]).tokens, s.tokens()) for k, s in enumerate(corpus.splits.labeled)])
    differ = total = 0
    for u in corpus.splits.unlabeled:
        h = student.transcribe(u.audio, [1, u.key])
        total += 1
        differ += corrector.correct(u.audio, h, DecodingSpec.beam(1)) != corrector.correct(u.audio, h, DecodingSpec.greedy())
    return differ, total


def criterion_6():
    differ, total = beam_one_matches_greedy()
    ok, parts = differ == 0, [f"beam(1) differs from greedy on {differ}/{total} utterances"]
    for split in ("test", "unlabeled"):
        b, g, s = mean("rehear", split), mean("greedy", split), mean("sample", split)
        ok &= b <= g and s >= b
        parts.append(f"{split}: beam5 {b:.2f} greedy {g:.2f} sample {s:.2f}")
    return record(6, ok, "; ".join(parts))


def degradation(name: str) -> float:
    return statistics.fmean(
        m["iterations"][-1]["wer"]["unlabeled"] - min(r["wer"]["unlabeled"] for r in m["iterations"]) for m in runs(name)[0]
    )


def criterion_7():
    plain, decayed = degradation("T5"), degradation("T5_decay")
    ok = plain > 0 and decayed < plain
    return record(7, ok, f"iteration-5 margin over the run minimum: {plain:.3f} without decay, {decayed:.3f} with decay")


def criterion_8():
    corpus = default_corpus()
    cfg = LoopConfig(method="rehear_model", max_iterations=2, saturation_epsilon=None)
    clean = simulation_run(cfg, corpus, keep_states=True)
    dirty = simulation_run(cfg, corpus, hidden=corpus.splits.hidden.poisoned(), keep_states=True)
    same_training = np.array_equal(clean.recognizer.model.counts, dirty.recognizer.model.counts) and all(
        [(u.key, lab) for u, lab in a.d_u_filtered] == [(u.key, lab) for u, lab in b.d_u_filtered]
        and [c for _u, _h, c in a.d_u_double] == [c for _u, _h, c in b.d_u_double]
        and a.record["filter"] == b.record["filter"]
        for a, b in zip(clean.states, dirty.states)
    )
    evals_differ = clean.manifest["iterations"][-1]["wer"]["unlabeled"] != dirty.manifest["iterations"][-1]["wer"]["unlabeled"]
    others_same = all(
        r1["wer"]["test"] == r2["wer"]["test"] and r1["wer"]["validation"] == r2["wer"]["validation"]
        for r1, r2 in zip(clean.manifest["iterations"], dirty.manifest["iterations"])
    )
    rng = np.random.default_rng(8)
    leaks = 0
    for _ in range(100):
        sizes = tuple(int(x) for x in rng.integers(1, 25, size=4))
        per_source = int(rng.integers(1, 4))
        if -(-sum(sizes) // per_source) < 4:
            per_source = 1
        c = synth_corpus(
            SynthConfig(vocab_size=30, homophone_class_count=5, split_sizes=sizes,
                        utterances_per_source=per_source, seed=int(rng.integers(2**32)))
        )
        sets = list(c.splits.source_sets().values())
        leaks += any(sets[i] & sets[j] for i in range(4) for j in range(i + 1, 4))
    ok = same_training and evals_differ and others_same and leaks == 0
    return record(8, ok, f"training identical={same_training}, unlabeled eval changed={evals_differ}, leaking corpora {leaks}/100")


def criterion_9():
    from test_filters import words
    from test_metrics import tokens4
    from test_sim import tiny_corrector
    from test_textnorm import messy_text

    counts = dict.fromkeys(["idempotence", "alignment", "tables", "beam", "identity"], 0)

    @settings(max_examples=200, database=None)
    @given(messy_text)
    def idempotence(x):
        counts["idempotence"] += 1
        assert normalize(normalize(x)) == normalize(x)

    @settings(max_examples=200, database=None)
    @given(tokens4, tokens4)
    def alignment(r, h):
        counts["alignment"] += 1
        al = edit_alignment(r, h)
        assert al.substitutions + al.deletions + al.correct == len(r)
        assert al.substitutions + al.insertions + al.correct == len(h)

    @settings(max_examples=200, database=None)
    @given(tiny_corrector())
    def tables(case):
        counts["tables"] += 1
        for row in conditional_tables(case[0]):
            assert abs(row.sum() - 1.0) <= 1e-9 and (row >= 0).all()

    @settings(max_examples=200, database=None)
    @given(tiny_corrector())
    def beam(case):
        counts["beam"] += 1
        model, audio, hyp = case
        g = decode_score(model, audio, hyp, corrector_correct(model, audio, hyp, DecodingSpec.greedy()))
        b = decode_score(model, audio, hyp, corrector_correct(model, audio, hyp, DecodingSpec.beam(5)))
        assert b >= g

    @settings(max_examples=200, database=None)
    @given(words)
    def identity(x):
        counts["identity"] += 1
        assert rule_filter_correction(x, list(x)).accept

    failed = []
    for prop in (idempotence, alignment, tables, beam, identity):
        try:
            prop()
        except Exception as e:  # noqa: BLE001 - report any property failure
            failed.append(f"{prop.__name__}: {type(e).__name__}")
    ok = not failed and min(counts.values()) >= 200
    detail = ", ".join(f"{k} {v}" for k, v in counts.items()) + (f"; failed {failed}" if failed else "")
    return record(9, ok, detail)


def criterion_10():
    merged = merge_segments([Segment("s", 0, 10, "one"), Segment("s", 11.5, 20, "two")])
    capped = merge_segments([Segment("s", 0, 20, "a"), Segment("s", 21, 35, "b")])
    kept, log = filter_segments([Segment("s", 0, 0.04, "a"), Segment("t", 0, 0.05, "b")])
    checks = [
        [(s.start_s, s.end_s, s.transcript) for s in merged] == [(0.0, 20.1, "one two")],
        [(s.start_s, s.end_s) for s in capped] == [(0.0, 20.1), (20.9, 35.1)],
        [s.source_id for s in kept] == ["t"] and [(r.source_id, r.reason) for r in log] == [("s", "too_short")],
    ]
    return record(10, all(checks), f"merge {checks[0]}, cap refusal {checks[1]}, 0.04 s rejection {checks[2]}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def line(n: int) -> str:
    ok, detail = RESULTS[n]
    return f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {detail}"


@pytest.mark.parametrize("n", range(1, 11))
def test_criterion(n):
    ok, detail = CRITERIA[n - 1]()
    print(line(n))
    assert ok, detail


if __name__ == "__main__":
    for n, fn in enumerate(CRITERIA, 1):
        fn()
        print(line(n), flush=True)
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
