"""Wire protocol: typed envelopes flowing between clients and the server.

Every message is one JSON object::

    {"type": "<MessageType>", "sessionId": "...", "seq": <int>, "payload": {...}}

``seq`` increases strictly per (session, sender); a duplicate or lower value
is rejected with OutOfOrderSeq and the message is dropped. The server's own
messages carry the server-side counter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import OutOfOrderSeq, PayloadInvalid

PROTOCOL_VERSION = 1

# client -> server
MSG_START_TASK = "StartTask"
MSG_ATTACH = "Attach"
MSG_FRAME_UPDATE = "FrameUpdate"
MSG_VERIFY_REQUEST = "VerifyRequest"
MSG_VOICE_QUERY = "VoiceQuery"
MSG_FIRE_SIGNAL = "FireSignal"
MSG_SKIP_STEP = "SkipStep"
MSG_END_SESSION = "EndSession"

CLIENT_TYPES = (
    MSG_START_TASK,
    MSG_ATTACH,
    MSG_FRAME_UPDATE,
    MSG_VERIFY_REQUEST,
    MSG_VOICE_QUERY,
    MSG_FIRE_SIGNAL,
    MSG_SKIP_STEP,
    MSG_END_SESSION,
)

# server -> client
MSG_SESSION_ACCEPTED = "SessionAccepted"
MSG_PLAN_READY = "PlanReady"
MSG_DIRECTIVE_BATCH = "DirectiveBatch"
MSG_VERIFICATION_RESULT = "VerificationResult"
MSG_AUDIO_CUE = "AudioCue"
MSG_SUBPLAN_INSERTED = "SubPlanInserted"
MSG_ANSWER = "Answer"
MSG_SESSION_ENDED = "SessionEnded"
MSG_ERROR = "Error"

SERVER_TYPES = (
    MSG_SESSION_ACCEPTED,
    MSG_PLAN_READY,
    MSG_DIRECTIVE_BATCH,
    MSG_VERIFICATION_RESULT,
    MSG_AUDIO_CUE,
    MSG_SUBPLAN_INSERTED,
    MSG_ANSWER,
    MSG_SESSION_ENDED,
    MSG_ERROR,
)


@dataclass(frozen=True)
class Envelope:
    type: str
    session_id: str
    seq: int
    payload: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "type": self.type,
            "sessionId": self.session_id,
            "seq": self.seq,
            "payload": self.payload,
        }

    def serialize(self) -> str:
        return json.dumps(self.to_wire(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def parse(cls, raw: str) -> "Envelope":
        try:
            obj = json.loads(raw)
        except (ValueError, TypeError) as exc:
            raise PayloadInvalid(f"envelope is not JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise PayloadInvalid("envelope must be a JSON object")
        for key in ("type", "sessionId", "seq"):
            if key not in obj:
                raise PayloadInvalid(f"envelope missing {key!r}")
        if not isinstance(obj["type"], str):
            raise PayloadInvalid("type must be a string")
        if not isinstance(obj["seq"], int) or isinstance(obj["seq"], bool):
            raise PayloadInvalid("seq must be an integer")
        payload = obj.get("payload", {})
        if not isinstance(payload, dict):
            raise PayloadInvalid("payload must be an object")
        return cls(
            type=obj["type"], session_id=str(obj["sessionId"]), seq=obj["seq"], payload=payload
        )


class SeqValidator:
    """Strictly increasing per-sender counter; duplicates are rejected."""

    def __init__(self):
        self._last: Optional[int] = None

    def check(self, seq: int) -> None:
        if self._last is not None and seq <= self._last:
            raise OutOfOrderSeq(f"seq {seq} not greater than last {self._last}")
        self._last = seq


class SeqCounter:
    def __init__(self):
        self._next = 0

    def next(self) -> int:
        self._next += 1
        return self._next


def require_field(payload: dict, key: str, types, message_type: str):
    if key not in payload:
        raise PayloadInvalid(f"{message_type} payload missing {key!r}")
    value = payload[key]
    allowed = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in allowed:
        raise PayloadInvalid(f"{message_type} payload field {key!r} has wrong type")
    if not isinstance(value, types):
        raise PayloadInvalid(f"{message_type} payload field {key!r} has wrong type")
    return value
