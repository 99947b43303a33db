"""Reference peer for the external-backend protocol.

``python3 -m plrefine.peer --echo`` answers every transcribe request with the
audio reference read back as tokens and every correct request with the
hypothesis unchanged. ``--corpus DIR`` serves the simulation recognizer and
corrector built from a saved corpus, so a run through the external backend
can be compared with an in-process simulation run.

Requests are answered one at a time, in arrival order.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, TextIO

from .backends import AUDIO_AWARE, MODES, SimConfig, SimCorrector, SimRecognizer, base_student
from .backends import protocol as P
from .backends.types import DecodingSpec, Hypothesis


class EchoHandler:
    roles = ("recognizer", "corrector")
    modes = MODES

    def transcribe(self, msg: dict) -> dict:
        ref = msg["audio_ref"]
        tokens = ref.split() if isinstance(ref, str) else [str(o) for o in ref]
        return P.result(msg["id"], tokens)

    def correct(self, msg: dict) -> dict:
        return P.result(msg["id"], msg["hypothesis"].split())

    def train(self, msg: dict) -> dict:
        return P.result(msg["id"], [])


class SimHandler:
    """Simulation backends behind the protocol."""

    roles = ("recognizer", "corrector")
    modes = MODES

    def __init__(self, corpus_dir: str, sim: SimConfig):
        from .corpus import load_corpus

        self.corpus = load_corpus(corpus_dir)
        self.sim = sim
        self.recognizer = SimRecognizer(base_student(self.corpus, sim), sim.student_forgetting)
        self.corrector: Optional[SimCorrector] = None

    @staticmethod
    def _audio(ref):
        if ref is None:
            return None
        if isinstance(ref, str):
            raise ValueError("the simulation peer needs inline observation symbols")
        return tuple(ref)

    def transcribe(self, msg: dict) -> dict:
        hyp = self.recognizer.transcribe(self._audio(msg["audio_ref"]), msg.get("rng_key", [0]))
        return P.result(msg["id"], hyp.tokens, hyp.token_confidences)

    def correct(self, msg: dict) -> dict:
        if self.corrector is None:
            return P.error(msg["id"], "corrector used before training")
        dec = DecodingSpec.from_dict(msg.get("decoding", {}))
        hyp = Hypothesis.from_tokens(msg["hypothesis"].split())
        return P.result(msg["id"], self.corrector.correct(self._audio(msg.get("audio_ref")), hyp, dec))

    def train(self, msg: dict) -> dict:
        ex = msg["examples"]
        if msg["role"] == "recognizer":
            pairs = [(self._audio(e["audio_ref"]), list(e["tokens"])) for e in ex]
            weights = [float(e.get("weight", 1.0)) for e in ex]
            self.recognizer.train(pairs, float(msg["eta"]), int(msg["epochs"]), weights=weights)
        else:
            mode = msg.get("mode", AUDIO_AWARE)
            self.corrector = SimCorrector.from_config(self.corpus, self.sim, mode)
            triplets = [
                (self._audio(e.get("audio_ref")), e["hypothesis"].split(), e["truth"].split()) for e in ex
            ]
            self.corrector.train(triplets)
        return P.result(msg["id"], [])


def serve(handler, stdin: TextIO, stdout: TextIO) -> int:
    def send(msg: dict) -> None:
        stdout.write(P.encode(msg))
        stdout.flush()

    send(P.hello(handler.roles, handler.modes))
    for line in stdin:
        if not line.strip():
            continue
        try:
            msg = P.decode(line)
        except P.ProtocolError as e:
            send(P.error(-1, str(e)))
            continue
        kind = msg["kind"]
        if kind == P.SHUTDOWN:
            return 0
        if kind not in P.REQUESTS:
            send(P.error(msg.get("id", -1), f"peer does not accept {kind} messages"))
            continue
        try:
            send(getattr(handler, kind)(msg))
        except (ValueError, KeyError, TypeError) as e:
            send(P.error(msg["id"], f"{type(e).__name__}: {e}"))
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="plrefine-peer", description=__doc__.splitlines()[0])
    group = ap.add_mutually_exclusive_group(required=True)
    group.add_argument("--echo", action="store_true", help="identity corrector, audio-readback recognizer")
    group.add_argument("--corpus", help="saved corpus directory to serve simulation backends for")
    ap.add_argument("--sim", default="{}", help="simulation backend settings as a JSON object")
    args = ap.parse_args(argv)
    if args.echo:
        handler = EchoHandler()
    else:
        handler = SimHandler(args.corpus, SimConfig.from_dict(json.loads(args.sim)))
    return serve(handler, sys.stdin, sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
