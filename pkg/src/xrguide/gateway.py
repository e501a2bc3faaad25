"""Single choke point for model calls: live HTTP, record, and replay modes.

Record mode wraps a live transport and appends one CallRecord per call to a
JSON-lines fixture file (attachments are stored by content digest in a
sibling ``attachments/`` directory by whoever owns the bytes). Replay mode
serves recorded answers with no network access: lookup is exact by context
hash first, then falls back to the next unconsumed record of the same
prompt kind, which keeps bundled fixtures usable when attachment bytes or
free text drift.

Fixture line format (one JSON object per line)::

    {"contextHash": "...", "kind": "DuringTask", "requestText": "...",
     "attachmentDigests": ["..."], "responseText": "...",
     "latency": 2.8, "timestamp": 12.0}
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .errors import ReplayMiss, TransportError, Timeout
from .prompt_engine import PromptKind, RenderedPrompt

# transport(prompt, profile) -> response text; wall-clock is measured around it
Transport = Callable[["RenderedPrompt", "ModelProfile"], str]

ENV_ENDPOINT = "XRGUIDE_MODEL_ENDPOINT"
ENV_API_KEY = "XRGUIDE_MODEL_KEY"
ENV_MODE = "XRGUIDE_GATEWAY_MODE"
ENV_FIXTURE_DIR = "XRGUIDE_FIXTURE_DIR"

# Verification and relevance run on the fast profile; localization and the
# initial plan need the stronger one.
FAST_KINDS = (PromptKind.DURING_TASK, PromptKind.RELEVANCE_SCORE)


@dataclass(frozen=True)
class ModelProfile:
    name: str
    endpoint: str = ""
    timeout: float = 60.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")


def default_profiles(endpoint: str = "") -> dict[str, ModelProfile]:
    return {
        "fast": ModelProfile(name="fast", endpoint=endpoint, timeout=30.0),
        "strong": ModelProfile(name="strong", endpoint=endpoint, timeout=120.0),
    }


def profile_for(kind: PromptKind, profiles: dict[str, ModelProfile]) -> ModelProfile:
    return profiles["fast"] if kind in FAST_KINDS else profiles["strong"]


@dataclass
class CallRecord:
    context_hash: str
    kind: PromptKind
    request_text: str
    attachment_digests: list[str]
    response_text: str
    latency: float
    timestamp: float

    def to_wire(self) -> dict:
        return {
            "contextHash": self.context_hash,
            "kind": self.kind.value,
            "requestText": self.request_text,
            "attachmentDigests": list(self.attachment_digests),
            "responseText": self.response_text,
            "latency": self.latency,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "CallRecord":
        return cls(
            context_hash=obj["contextHash"],
            kind=PromptKind(obj["kind"]),
            request_text=obj["requestText"],
            attachment_digests=list(obj["attachmentDigests"]),
            response_text=obj["responseText"],
            latency=float(obj["latency"]),
            timestamp=float(obj["timestamp"]),
        )


@dataclass
class LatencySummary:
    count: int = 0
    total: float = 0.0
    min: float = float("inf")
    max: float = 0.0
    timeouts: int = 0

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def to_wire(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "min": self.min if self.count else 0.0,
            "max": self.max,
            "timeouts": self.timeouts,
        }


def http_transport(prompt: RenderedPrompt, profile: ModelProfile) -> str:
    """Minimal live transport: single-turn multimodal POST, text answer back."""
    if not profile.endpoint:
        raise TransportError(f"profile {profile.name!r} has no endpoint configured")
    body = json.dumps(
        {"text": prompt.text, "images": list(prompt.attachments), "kind": prompt.kind.value}
    ).encode()
    req = urllib.request.Request(
        profile.endpoint,
        data=body,
        headers={
            "Content-Type": "application/json",
            "Authorization": f"Bearer {os.environ.get(ENV_API_KEY, '')}",
        },
    )
    try:
        with urllib.request.urlopen(req, timeout=profile.timeout) as resp:
            return resp.read().decode("utf-8")
    except TimeoutError as exc:
        raise Timeout(str(exc)) from exc
    except OSError as exc:
        raise TransportError(str(exc)) from exc


class Gateway:
    """Mode-switched model-call broker with per-(kind, profile) latency metrics."""

    def __init__(
        self,
        mode: str = "replay",
        fixture_path: Optional[str | Path] = None,
        transport: Transport = http_transport,
        profiles: Optional[dict[str, ModelProfile]] = None,
        clock: Callable[[], float] = time.time,
    ):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown gateway mode {mode!r}")
        self.mode = mode
        self.fixture_path = Path(fixture_path) if fixture_path else None
        self.transport = transport
        self.profiles = profiles or default_profiles(os.environ.get(ENV_ENDPOINT, ""))
        self.clock = clock
        self._lock = threading.Lock()
        self._metrics: dict[tuple[str, str], LatencySummary] = {}
        self._records: list[CallRecord] = []
        self._consumed: list[bool] = []
        self._by_hash: dict[str, list[int]] = {}
        if mode == "replay":
            if self.fixture_path is None:
                raise ValueError("replay mode needs a fixture path")
            self._load_fixtures()
        if mode == "record" and self.fixture_path is None:
            raise ValueError("record mode needs a fixture path")

    @classmethod
    def from_env(cls, **overrides) -> "Gateway":
        mode = overrides.pop("mode", os.environ.get(ENV_MODE, "replay"))
        fixture = overrides.pop("fixture_path", os.environ.get(ENV_FIXTURE_DIR))
        if fixture and Path(fixture).is_dir():
            fixture = Path(fixture) / "calls.jsonl"
        return cls(mode=mode, fixture_path=fixture, **overrides)

    def _load_fixtures(self) -> None:
        self._records = []
        self._by_hash = {}
        if self.fixture_path and self.fixture_path.exists():
            with open(self.fixture_path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    record = CallRecord.from_wire(json.loads(line))
                    self._by_hash.setdefault(record.context_hash, []).append(len(self._records))
                    self._records.append(record)
        self._consumed = [False] * len(self._records)

    # -- call path ---------------------------------------------------------

    def call(self, prompt: RenderedPrompt, profile: Optional[ModelProfile] = None) -> tuple[str, float]:
        """Run one model call; returns (response text, latency seconds)."""
        if profile is None:
            profile = profile_for(prompt.kind, self.profiles)
        if self.mode == "replay":
            record = self._lookup(prompt)
            self._note_latency(prompt.kind, profile, record.latency)
            return record.response_text, record.latency
        started = self.clock()
        try:
            response = self.transport(prompt, profile)
        except Timeout:
            with self._lock:
                self._summary(prompt.kind, profile).timeouts += 1
            raise
        latency = max(self.clock() - started, 0.0)
        self._note_latency(prompt.kind, profile, latency)
        if self.mode == "record":
            self._append_record(prompt, response, latency)
        return response, latency

    def _lookup(self, prompt: RenderedPrompt) -> CallRecord:
        with self._lock:
            for idx in self._by_hash.get(prompt.context_hash, []):
                if not self._consumed[idx]:
                    self._consumed[idx] = True
                    return self._records[idx]
            # fall back to the next unconsumed record of this kind, in call order
            for idx, record in enumerate(self._records):
                if not self._consumed[idx] and record.kind is prompt.kind:
                    self._consumed[idx] = True
                    return record
        raise ReplayMiss(prompt.context_hash, prompt.kind.value)

    def _append_record(self, prompt: RenderedPrompt, response: str, latency: float) -> None:
        record = CallRecord(
            context_hash=prompt.context_hash,
            kind=prompt.kind,
            request_text=prompt.text,
            attachment_digests=list(prompt.attachments),
            response_text=response,
            latency=latency,
            timestamp=self.clock(),
        )
        assert self.fixture_path is not None
        with self._lock:
            self.fixture_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.fixture_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_wire(), ensure_ascii=False) + "\n")

    # -- metrics -----------------------------------------------------------

    def _summary(self, kind: PromptKind, profile: ModelProfile) -> LatencySummary:
        key = (kind.value, profile.name)
        if key not in self._metrics:
            self._metrics[key] = LatencySummary()
        return self._metrics[key]

    def _note_latency(self, kind: PromptKind, profile: ModelProfile, latency: float) -> None:
        with self._lock:
            s = self._summary(kind, profile)
            s.count += 1
            s.total += latency
            s.min = min(s.min, latency)
            s.max = max(s.max, latency)

    def metrics(self) -> dict[str, dict]:
        """Latency summary per 'kind/profile' over completed calls."""
        with self._lock:
            return {f"{k}/{p}": s.to_wire() for (k, p), s in sorted(self._metrics.items())}

    def reset_replay(self) -> None:
        """Forget consumption state so the same fixture can serve a fresh run."""
        with self._lock:
            self._consumed = [False] * len(self._records)


def mean_latency(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0
