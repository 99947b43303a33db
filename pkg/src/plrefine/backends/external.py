"""Recognizer and corrector proxies for a model served by a child process.

The child speaks the line protocol in :mod:`.protocol` on its stdin/stdout.
Replies are matched to requests by id, so a peer may answer a batch of
requests in any order; replies that arrive early wait in a buffer until
their request is collected.
"""

from __future__ import annotations

import logging
import queue
import subprocess
import threading
from typing import Optional, Sequence

from . import prompts
from . import protocol as P
from .sim import AUDIO_AWARE, MODES, BackendError
from .types import DecodingSpec, Hypothesis, TrainStats

logger = logging.getLogger(__name__)

_EOF = object()


class PeerProcess:
    """One child process and its reply stream.

    ``command`` is an argv list. The first line the child prints must be a
    ``hello`` message; its capabilities are kept in :attr:`roles` and
    :attr:`modes`.
    """

    def __init__(self, command: Sequence[str], timeout: float = 30.0, env: Optional[dict] = None):
        if not command:
            raise ValueError("peer command is empty")
        self.command = list(command)
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
                env=env,
            )
        except OSError as e:
            raise BackendError(f"cannot start peer {self.command[0]!r}: {e}") from e
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 1
        self._early: dict[int, dict] = {}
        self._lock = threading.Lock()
        first = self._read_message()
        if first["kind"] != P.HELLO:
            raise P.ProtocolError("expected hello as the first message", P.encode(first).rstrip("\n"))
        self.roles = tuple(first["roles"])
        self.modes = tuple(first["modes"])

    def _pump(self) -> None:
        for line in self.proc.stdout:
            if line.strip():
                self._lines.put(line)
        self._lines.put(_EOF)

    def _read_message(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise P.ProtocolError(f"timed out after {self.timeout}s waiting for the peer") from None
        if line is _EOF:
            code = self.proc.poll()
            raise P.ProtocolError(f"peer closed its output (exit status {code})")
        return P.decode(line)

    def _send(self, msg: dict) -> None:
        line = P.encode(msg)
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as e:
            raise P.ProtocolError(f"peer is not accepting input: {e}") from e

    def request_many(self, msgs: Sequence[dict]) -> list[dict]:
        """Send every request, then collect one reply per id in request order."""
        with self._lock:
            ids = []
            for msg in msgs:
                if msg.get("kind") not in P.REQUESTS:
                    raise ValueError(f"not a request kind: {msg.get('kind')!r}")
                msg = dict(msg, id=self._next_id)
                self._next_id += 1
                self._send(msg)
                ids.append(msg["id"])
            pending = set(ids)
            while pending - set(self._early):
                reply = self._read_message()
                if reply["kind"] not in P.REPLIES:
                    raise P.ProtocolError(f"unexpected {reply['kind']} message", P.encode(reply).rstrip("\n"))
                rid = reply["id"]
                if rid not in pending or rid in self._early:
                    raise P.ProtocolError(f"reply to unknown or duplicate id {rid}", P.encode(reply).rstrip("\n"))
                self._early[rid] = reply
            replies = [self._early.pop(i) for i in ids]
        for r in replies:
            if r["kind"] == P.ERROR:
                raise BackendError(f"peer error for request {r['id']}: {r['message']}")
        return replies

    def request(self, msg: dict) -> dict:
        return self.request_many([msg])[0]

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self._send({"kind": P.SHUTDOWN})
                self.proc.stdin.close()
            except P.ProtocolError:
                pass
            try:
                self.proc.wait(timeout=self.timeout)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self._reader.join(timeout=1.0)

    def __enter__(self) -> "PeerProcess":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _audio_ref(audio) -> Optional[object]:
    if audio is None:
        return None
    if isinstance(audio, str):
        return audio
    return [int(o) for o in audio]


def _hypothesis(reply: dict) -> Hypothesis:
    try:
        return Hypothesis.from_tokens(reply["tokens"], reply.get("token_confidences"))
    except ValueError as e:
        raise P.ProtocolError(str(e), P.encode(reply).rstrip("\n")) from None


class ExternalRecognizer:
    """Recognizer whose transcribe and train calls go to a peer."""

    def __init__(self, peer: PeerProcess):
        if "recognizer" not in peer.roles:
            raise BackendError("peer does not offer the recognizer role")
        self.peer = peer
        self._trained = 0

    def transcribe(self, audio, rng_key) -> Hypothesis:
        return self.transcribe_many([audio], [rng_key])[0]

    def transcribe_many(self, audios: Sequence, rng_keys: Sequence) -> list[Hypothesis]:
        msgs = [
            {"kind": P.TRANSCRIBE, "audio_ref": _audio_ref(a), "rng_key": [int(k) for k in key]}
            for a, key in zip(audios, rng_keys)
        ]
        return [_hypothesis(r) for r in self.peer.request_many(msgs)]

    def train(self, examples, eta, epochs, weights=None) -> TrainStats:
        weights = [1.0] * len(examples) if weights is None else list(weights)
        payload = [
            {"audio_ref": _audio_ref(a), "tokens": list(t), "weight": float(w)} for (a, t), w in zip(examples, weights)
        ]
        self.peer.request(
            {"kind": P.TRAIN, "role": "recognizer", "examples": payload, "eta": float(eta), "epochs": int(epochs)}
        )
        self._trained += 1
        return TrainStats(pairs=len(payload))

    def snapshot(self):
        # the peer owns the parameters; the number of completed training calls
        # identifies the state for bookkeeping only
        return self._trained

    def restore(self, state) -> None:
        if state != self._trained:
            raise BackendError("an external recognizer cannot be rolled back to an earlier state")


class ExternalCorrector:
    """Corrector proxy; every correct request carries the rendered prompt template."""

    def __init__(self, peer: PeerProcess, mode: str = AUDIO_AWARE):
        if mode not in MODES:
            raise ValueError(f"unknown corrector mode {mode!r}")
        if "corrector" not in peer.roles:
            raise BackendError("peer does not offer the corrector role")
        if mode not in peer.modes:
            raise BackendError(f"peer does not support corrector mode {mode!r}")
        self.peer = peer
        self.mode = mode

    def train(self, triplets) -> None:
        payload = []
        for audio, hyp, truth in triplets:
            ex = {"hypothesis": " ".join(hyp), "truth": " ".join(truth)}
            if self.mode == AUDIO_AWARE:
                ex["audio_ref"] = _audio_ref(audio)
            payload.append(ex)
        self.peer.request({"kind": P.TRAIN, "role": "corrector", "mode": self.mode, "examples": payload})

    def _message(self, audio, hyp: Hypothesis, dec: DecodingSpec) -> dict:
        text = " ".join(hyp.tokens)
        msg = {
            "kind": P.CORRECT,
            "prompt": prompts.render(self.mode, text),
            "hypothesis": text,
            "decoding": dec.to_dict(),
        }
        if self.mode == AUDIO_AWARE:
            if audio is None:
                raise BackendError("audio_aware corrector requires audio")
            msg["audio_ref"] = _audio_ref(audio)
        return msg

    def correct(self, audio, hyp: Hypothesis, dec: DecodingSpec) -> list[str]:
        return list(self.peer.request(self._message(audio, hyp, dec))["tokens"])

    def correct_many(self, items: Sequence[tuple], decs: Sequence[DecodingSpec]) -> list[list[str]]:
        msgs = [self._message(a, h, d) for (a, h), d in zip(items, decs)]
        return [list(r["tokens"]) for r in self.peer.request_many(msgs)]

    def fresh(self) -> "ExternalCorrector":
        # retraining replaces the peer's corrector state, so the proxy is reusable
        return self
