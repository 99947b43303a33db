"""Newline-delimited JSON messages exchanged with an external model peer.

Every message is one JSON object on one line with a ``kind`` field. Requests
(``transcribe``, ``correct``, ``train``) carry integer ids that increase
monotonically per connection; the peer answers each with a ``result`` or an
``error`` echoing that id, in any order. The peer announces itself with a
``hello`` line before anything else, and the client ends the session with
``shutdown``.

``audio_ref`` is either a string (a path or URI the peer understands) or an
inline list of integer observation symbols, which is what the simulation
corpus provides.
"""

from __future__ import annotations

import json
import math
from typing import Any, Optional

HELLO = "hello"
TRANSCRIBE = "transcribe"
CORRECT = "correct"
TRAIN = "train"
RESULT = "result"
ERROR = "error"
SHUTDOWN = "shutdown"

KINDS = (HELLO, TRANSCRIBE, CORRECT, TRAIN, RESULT, ERROR, SHUTDOWN)
REQUESTS = (TRANSCRIBE, CORRECT, TRAIN)
REPLIES = (RESULT, ERROR)

ROLES = ("recognizer", "corrector")

REQUIRED = {
    HELLO: ("roles", "modes"),
    TRANSCRIBE: ("id", "audio_ref"),
    CORRECT: ("id", "prompt", "hypothesis"),
    TRAIN: ("id", "role", "examples"),
    RESULT: ("id", "tokens"),
    ERROR: ("id", "message"),
    SHUTDOWN: (),
}


class ProtocolError(Exception):
    """A malformed, unexpected or missing message; ``raw`` is the offending line."""

    def __init__(self, message: str, raw: Optional[str] = None):
        self.raw = raw
        super().__init__(message if raw is None else f"{message}; raw message: {raw!r}")


def encode(msg: dict) -> str:
    """One compact JSON line, keys sorted so identical messages are identical bytes."""
    validate(msg)
    return json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def decode(line: str) -> dict:
    raw = line.rstrip("\n")
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"not valid JSON ({e.msg})", raw) from None
    if not isinstance(msg, dict):
        raise ProtocolError("message is not a JSON object", raw)
    validate(msg, raw)
    return msg


def _fail(text: str, msg: dict, raw: Optional[str]):
    raise ProtocolError(text, raw if raw is not None else json.dumps(msg, sort_keys=True))


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _str_list(x: Any) -> bool:
    return isinstance(x, list) and all(isinstance(t, str) for t in x)


def _audio_ref_ok(x: Any) -> bool:
    return isinstance(x, str) or (isinstance(x, list) and all(_is_int(o) for o in x))


def validate(msg: dict, raw: Optional[str] = None) -> None:
    """Check kind, required fields and field types; raise ProtocolError naming the field."""
    kind = msg.get("kind")
    if kind is None:
        _fail("missing required field 'kind'", msg, raw)
    if kind not in KINDS:
        _fail(f"unknown message kind {kind!r}", msg, raw)
    for name in REQUIRED[kind]:
        if name not in msg:
            _fail(f"{kind} message is missing required field {name!r}", msg, raw)
    if "id" in msg and not _is_int(msg["id"]):
        _fail("field 'id' must be an integer", msg, raw)
    if kind == HELLO:
        if not _str_list(msg["roles"]) or not set(msg["roles"]) <= set(ROLES):
            _fail(f"field 'roles' must be a list drawn from {ROLES}", msg, raw)
        if not _str_list(msg["modes"]):
            _fail("field 'modes' must be a list of strings", msg, raw)
    elif kind == TRANSCRIBE:
        if not _audio_ref_ok(msg["audio_ref"]):
            _fail("field 'audio_ref' must be a string or a list of integers", msg, raw)
    elif kind == CORRECT:
        if "audio_ref" in msg and msg["audio_ref"] is not None and not _audio_ref_ok(msg["audio_ref"]):
            _fail("field 'audio_ref' must be a string or a list of integers", msg, raw)
        if not isinstance(msg["prompt"], str):
            _fail("field 'prompt' must be a string", msg, raw)
        if not isinstance(msg["hypothesis"], str):
            _fail("field 'hypothesis' must be a string", msg, raw)
    elif kind == TRAIN:
        if msg["role"] not in ROLES:
            _fail(f"field 'role' must be one of {ROLES}", msg, raw)
        if not isinstance(msg["examples"], list) or not all(isinstance(e, dict) for e in msg["examples"]):
            _fail("field 'examples' must be a list of objects", msg, raw)
    elif kind == RESULT:
        if not _str_list(msg["tokens"]):
            _fail("field 'tokens' must be a list of strings", msg, raw)
        confs = msg.get("token_confidences")
        if confs is not None:
            if not isinstance(confs, list) or len(confs) != len(msg["tokens"]):
                _fail("field 'token_confidences' must be a list matching 'tokens'", msg, raw)
            for c in confs:
                if isinstance(c, bool) or not isinstance(c, (int, float)) or not (0 < c <= 1) or math.isnan(c):
                    _fail("field 'token_confidences' must hold numbers in (0, 1]", msg, raw)
    elif kind == ERROR:
        if not isinstance(msg["message"], str):
            _fail("field 'message' must be a string", msg, raw)


def hello(roles, modes) -> dict:
    return {"kind": HELLO, "roles": list(roles), "modes": list(modes)}


def result(id: int, tokens, token_confidences=None) -> dict:
    msg = {"kind": RESULT, "id": id, "tokens": list(tokens)}
    if token_confidences is not None:
        msg["token_confidences"] = [float(c) for c in token_confidences]
    return msg


def error(id: int, message: str) -> dict:
    return {"kind": ERROR, "id": id, "message": message}
