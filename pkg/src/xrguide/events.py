"""Append-only session event records.

Every state-changing thing a session does becomes one SessionEvent; the log
is sufficient to replay the session deterministically against the replay
gateway. Client-originated kinds are re-fed on replay, server-originated
kinds are compared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .errors import LogCorrupt


class EventKind(str, Enum):
    SESSION_STARTED = "SessionStarted"
    PLAN_READY = "PlanReady"
    FRAME_RECEIVED = "FrameReceived"
    VERIFY_REQUESTED = "VerifyRequested"
    VERIFICATION_RESULT = "VerificationResult"
    DIRECTIVE_BATCH_SENT = "DirectiveBatchSent"
    AUDIO_CUE_SENT = "AudioCueSent"
    SUBPLAN_INSERTED = "SubPlanInserted"
    VIZ_REVISED = "VizRevised"
    VOICE_QUERY = "VoiceQuery"
    VOICE_ANSWER = "VoiceAnswer"
    SIGNAL_FIRED = "SignalFired"
    SKIP_COMMAND = "SkipCommand"
    ERROR = "Error"
    SESSION_CLOSED = "SessionClosed"


# Kinds that originate at the client and drive the engine during replay.
CLIENT_KINDS = frozenset(
    {
        EventKind.SESSION_STARTED,
        EventKind.FRAME_RECEIVED,
        EventKind.VERIFY_REQUESTED,
        EventKind.VOICE_QUERY,
        EventKind.SIGNAL_FIRED,
        EventKind.SKIP_COMMAND,
        EventKind.SESSION_CLOSED,
    }
)


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    timestamp: float
    kind: EventKind
    payload: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind.value,
            "payload": self.payload,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "SessionEvent":
        return cls(
            seq=obj["seq"],
            timestamp=obj["timestamp"],
            kind=EventKind(obj["kind"]),
            payload=obj.get("payload", {}),
        )

    def comparable(self) -> dict:
        """Wire form with the timestamp stripped, for replay equality checks."""
        return {"seq": self.seq, "kind": self.kind.value, "payload": self.payload}


def write_event_log(path, events: list[SessionEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(json.dumps(event.to_wire(), ensure_ascii=False) + "\n")


def read_event_log(path) -> list[SessionEvent]:
    events: list[SessionEvent] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                events.append(SessionEvent.from_wire(obj))
            except (ValueError, KeyError) as exc:
                raise LogCorrupt(line_no, str(exc)) from exc
    return events
