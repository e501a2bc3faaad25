"""Session server: the networked front door.

Three layers, separable for testing:

  - SessionHub: transport-independent message handling. Feed it a client
    Envelope, get back the outbound Envelopes. Events persist to the session
    log before any derived message is returned (at-least-once durability).
  - WebSocket adapter: one connection handler around the hub using the
    synchronous websockets API; per-session processing is serialized by the
    hub's locks, so concurrent connections are safe.
  - Blob/static HTTP endpoint: digest-addressed upload/fetch for frames and
    depth grids, plus static hosting for the browser console.

Replay: ``replay_session`` re-feeds the client-originated events of a
persisted log into a fresh engine and returns the regenerated events for
comparison (timestamps excluded).
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import (
    FixtureMismatch,
    OutOfOrderSeq,
    PayloadInvalid,
    ReplayMiss,
    UnknownSession,
    XRGuideError,
)
from .events import CLIENT_KINDS, EventKind, SessionEvent, read_event_log
from .fsm import GuidanceEngine
from .protocol import (
    MSG_ANSWER,
    MSG_ATTACH,
    MSG_AUDIO_CUE,
    MSG_DIRECTIVE_BATCH,
    MSG_END_SESSION,
    MSG_ERROR,
    MSG_FIRE_SIGNAL,
    MSG_FRAME_UPDATE,
    MSG_PLAN_READY,
    MSG_SESSION_ACCEPTED,
    MSG_SESSION_ENDED,
    MSG_SKIP_STEP,
    MSG_START_TASK,
    MSG_SUBPLAN_INSERTED,
    MSG_VERIFICATION_RESULT,
    MSG_VERIFY_REQUEST,
    MSG_VOICE_QUERY,
    Envelope,
    SeqCounter,
    SeqValidator,
    require_field,
)
from .spatial import CameraFrame, DepthGrid

logger = logging.getLogger(__name__)

EVENT_TO_MESSAGE = {
    EventKind.PLAN_READY: MSG_PLAN_READY,
    EventKind.DIRECTIVE_BATCH_SENT: MSG_DIRECTIVE_BATCH,
    EventKind.VERIFICATION_RESULT: MSG_VERIFICATION_RESULT,
    EventKind.AUDIO_CUE_SENT: MSG_AUDIO_CUE,
    EventKind.SUBPLAN_INSERTED: MSG_SUBPLAN_INSERTED,
    EventKind.VOICE_ANSWER: MSG_ANSWER,
    EventKind.ERROR: MSG_ERROR,
    EventKind.SESSION_CLOSED: MSG_SESSION_ENDED,
}


class BlobStore:
    """Content-addressed byte store shared by frames, depth grids, and assets."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def put(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.root / digest
        with self._lock:
            if not path.exists():
                path.write_bytes(data)
        return digest

    def get(self, digest: str) -> bytes:
        path = self.root / digest
        if not path.exists():
            raise KeyError(digest)
        return path.read_bytes()

    def has(self, digest: str) -> bool:
        return (self.root / digest).exists()


@dataclass
class ConsoleDefaults:
    """Substitutes for headless clients that send bare images (no pose/depth)."""

    width: int = 640
    height: int = 480
    focal_scale: float = 0.8  # fx = fy = focal_scale * width
    plane_depth: float = 1.5


def frame_from_wire(
    payload: dict, blobs: Optional[BlobStore], defaults: ConsoleDefaults, timestamp: float = 0.0
) -> tuple[CameraFrame, dict]:
    """Build a CameraFrame from a FrameUpdate payload.

    Returns (frame, normalized wire form). The wire form is what goes into
    the event log: image by digest, depth inline or by blob digest.
    """
    if "imageB64" in payload:
        try:
            image_bytes = base64.b64decode(payload["imageB64"], validate=True)
        except (ValueError, TypeError) as exc:
            raise PayloadInvalid(f"imageB64 not decodable: {exc}") from exc
        digest = blobs.put(image_bytes) if blobs else hashlib.sha256(image_bytes).hexdigest()
    elif "imageDigest" in payload:
        digest = str(payload["imageDigest"])
        if blobs is not None and not blobs.has(digest):
            raise PayloadInvalid(f"unknown image blob {digest[:12]}")
    else:
        raise PayloadInvalid("FrameUpdate needs imageB64 or imageDigest")

    width = int(payload.get("width", defaults.width))
    height = int(payload.get("height", defaults.height))
    if width <= 0 or height <= 0:
        raise PayloadInvalid("frame dimensions must be positive")

    intr = payload.get("intrinsics")
    if intr is None:
        fx = fy = defaults.focal_scale * width
        cx, cy = width / 2, height / 2
    else:
        try:
            fx, fy, cx, cy = (float(intr[k]) for k in ("fx", "fy", "cx", "cy"))
        except (KeyError, TypeError, ValueError) as exc:
            raise PayloadInvalid(f"bad intrinsics: {exc}") from exc

    pose = payload.get("pose")
    if pose is None:
        rotation = np.eye(3)
        translation = np.zeros(3)
    else:
        try:
            rotation = np.asarray(pose["rotation"], dtype=np.float64).reshape(3, 3)
            translation = np.asarray(pose["translation"], dtype=np.float64).reshape(3)
        except (KeyError, TypeError, ValueError) as exc:
            raise PayloadInvalid(f"bad pose: {exc}") from exc

    depth_payload = payload.get("depth")
    if depth_payload is None:
        depth = DepthGrid.constant(width, height, defaults.plane_depth)
        depth_wire: Optional[dict] = None
    elif "blobDigest" in depth_payload:
        if blobs is None or not blobs.has(depth_payload["blobDigest"]):
            raise PayloadInvalid(f"unknown depth blob {depth_payload['blobDigest'][:12]}")
        obj = json.loads(blobs.get(depth_payload["blobDigest"]).decode("utf-8"))
        depth = DepthGrid.from_wire(obj)
        depth_wire = {"blobDigest": depth_payload["blobDigest"]}
    else:
        try:
            depth = DepthGrid.from_wire(depth_payload)
        except (KeyError, TypeError, ValueError) as exc:
            raise PayloadInvalid(f"bad depth grid: {exc}") from exc
        depth_wire = depth_payload

    try:
        frame = CameraFrame(
            width=width,
            height=height,
            fx=fx,
            fy=fy,
            cx=cx,
            cy=cy,
            rotation=rotation,
            translation=translation,
            depth=depth,
            image_digest=digest,
            timestamp=timestamp,
        )
    except ValueError as exc:
        raise PayloadInvalid(str(exc)) from exc

    wire = {
        "imageDigest": digest,
        "width": width,
        "height": height,
        "intrinsics": {"fx": fx, "fy": fy, "cx": cx, "cy": cy},
        "pose": {"rotation": rotation.ravel().tolist(), "translation": translation.tolist()},
        "depth": depth_wire,
    }
    return frame, wire


EngineFactory = Callable[[str], GuidanceEngine]


@dataclass
class _Session:
    session_id: str
    engine: GuidanceEngine
    log_path: Optional[Path]
    client_seq: SeqValidator = field(default_factory=SeqValidator)
    server_seq: SeqCounter = field(default_factory=SeqCounter)
    outbound: list[Envelope] = field(default_factory=list)
    persisted: int = 0  # events already flushed to the log
    lock: threading.RLock = field(default_factory=threading.RLock)


class SessionHub:
    """Routes envelopes to session engines; transport-independent."""

    def __init__(
        self,
        engine_factory: EngineFactory,
        logs_dir: Optional[str | Path] = None,
        blobs: Optional[BlobStore] = None,
        console_defaults: Optional[ConsoleDefaults] = None,
    ):
        self.engine_factory = engine_factory
        self.logs_dir = Path(logs_dir) if logs_dir else None
        if self.logs_dir:
            self.logs_dir.mkdir(parents=True, exist_ok=True)
        self.blobs = blobs
        self.console_defaults = console_defaults or ConsoleDefaults()
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()
        self._next_id = 0

    # -- session management ------------------------------------------------

    def _new_session(self, requested_id: str) -> _Session:
        with self._lock:
            if requested_id and requested_id in self._sessions:
                raise PayloadInvalid(f"session {requested_id} already exists")
            if not requested_id:
                self._next_id += 1
                requested_id = f"s{self._next_id:04d}"
            log_path = self.logs_dir / f"{requested_id}.events.jsonl" if self.logs_dir else None
            session = _Session(
                session_id=requested_id,
                engine=self.engine_factory(requested_id),
                log_path=log_path,
            )
            self._sessions[requested_id] = session
            return session

    def _get(self, session_id: str) -> _Session:
        with self._lock:
            if session_id not in self._sessions:
                raise UnknownSession(f"no session {session_id!r}")
            return self._sessions[session_id]

    def session_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)

    # -- persistence --------------------------------------------------------

    def _persist(self, session: _Session) -> None:
        if session.log_path is None:
            session.persisted = len(session.engine.events)
            return
        events = session.engine.events
        if session.persisted >= len(events):
            return
        with open(session.log_path, "a", encoding="utf-8") as fh:
            for event in events[session.persisted :]:
                fh.write(json.dumps(event.to_wire(), ensure_ascii=False) + "\n")
            fh.flush()
        session.persisted = len(events)

    # -- message handling -----------------------------------------------------

    def handle(self, envelope: Envelope) -> list[Envelope]:
        """Process one client envelope; returns the server's reply envelopes."""
        if envelope.type == MSG_START_TASK:
            session = self._new_session(envelope.session_id)
        else:
            session = self._get(envelope.session_id)
        with session.lock:
            try:
                session.client_seq.check(envelope.seq)
            except OutOfOrderSeq as exc:
                # drop the message but log the offense
                session.engine._emit(
                    EventKind.ERROR,
                    {"code": "OutOfOrderSeq", "detail": str(exc), "fatal": False},
                )
                self._persist(session)
                return [self._wrap(session, MSG_ERROR, {"code": "OutOfOrderSeq", "detail": str(exc)})]
            if envelope.type == MSG_ATTACH:
                return self._attach(session)
            produced = self._dispatch(session, envelope)
            self._persist(session)
            out: list[Envelope] = []
            if envelope.type == MSG_START_TASK:
                out.append(
                    self._wrap(
                        session, MSG_SESSION_ACCEPTED, {"sessionId": session.session_id}
                    )
                )
            for event in produced:
                msg_type = EVENT_TO_MESSAGE.get(event.kind)
                if msg_type is None:
                    continue
                out.append(self._wrap(session, msg_type, event.payload))
            session.outbound.extend(out)
            return out

    def _dispatch(self, session: _Session, envelope: Envelope) -> list[SessionEvent]:
        engine = session.engine
        payload = envelope.payload
        try:
            if envelope.type == MSG_START_TASK:
                prompt = require_field(payload, "prompt", str, MSG_START_TASK)
                signals = payload.get("signals") or []
                return engine.start_task(prompt, signals)
            if envelope.type == MSG_FRAME_UPDATE:
                frame, wire = frame_from_wire(
                    payload, self.blobs, self.console_defaults, timestamp=engine.clock()
                )
                return engine.on_frame(frame, wire)
            if envelope.type == MSG_VERIFY_REQUEST:
                return engine.on_verify()
            if envelope.type == MSG_VOICE_QUERY:
                text = require_field(payload, "text", str, MSG_VOICE_QUERY)
                return engine.on_voice(text)
            if envelope.type == MSG_FIRE_SIGNAL:
                token = require_field(payload, "token", str, MSG_FIRE_SIGNAL)
                return engine.on_signal(token)
            if envelope.type == MSG_SKIP_STEP:
                index = require_field(payload, "index", int, MSG_SKIP_STEP)
                return engine.on_skip(index, str(payload.get("reason", "")))
            if envelope.type == MSG_END_SESSION:
                return engine.end_session()
        except PayloadInvalid as exc:
            engine._emit(
                EventKind.ERROR,
                {"code": "PayloadInvalid", "detail": str(exc), "fatal": False},
            )
            return engine.events[-1:]
        engine._emit(
            EventKind.ERROR,
            {"code": "UnknownMessageType", "detail": envelope.type, "fatal": False},
        )
        return engine.events[-1:]

    def _attach(self, session: _Session) -> list[Envelope]:
        """Resend every persisted outbound message, in original order."""
        return list(session.outbound)

    def _wrap(self, session: _Session, msg_type: str, payload: dict) -> Envelope:
        return Envelope(
            type=msg_type,
            session_id=session.session_id,
            seq=session.server_seq.next(),
            payload=payload,
        )


# ---------------------------------------------------------------------------
# Event-log replay
# ---------------------------------------------------------------------------


def replay_session(
    log_path: str | Path,
    engine_factory: Callable[[], GuidanceEngine],
    blobs: Optional[BlobStore] = None,
    console_defaults: Optional[ConsoleDefaults] = None,
) -> GuidanceEngine:
    """Re-drive a fresh engine with the client events of a persisted log.

    The engine must be wired to a replay gateway over the same fixtures the
    session originally used; a ReplayMiss surfaces as FixtureMismatch.
    """
    defaults = console_defaults or ConsoleDefaults()
    events = read_event_log(log_path)
    engine = engine_factory()
    try:
        for event in events:
            if event.kind not in CLIENT_KINDS:
                continue
            if event.kind is EventKind.SESSION_STARTED:
                engine.start_task(event.payload["prompt"], event.payload.get("signals") or [])
            elif event.kind is EventKind.FRAME_RECEIVED:
                wire = event.payload.get("frame")
                if wire is None:
                    raise FixtureMismatch("frame event carries no frame data")
                frame, _ = frame_from_wire(wire, blobs, defaults, timestamp=engine.clock())
                engine.on_frame(frame, wire)
            elif event.kind is EventKind.VERIFY_REQUESTED:
                engine.on_verify()
            elif event.kind is EventKind.VOICE_QUERY:
                if not event.payload.get("queued", False) or engine.status == "Planning":
                    engine.on_voice(event.payload["text"])
            elif event.kind is EventKind.SIGNAL_FIRED:
                engine.on_signal(event.payload["token"])
            elif event.kind is EventKind.SKIP_COMMAND:
                engine.on_skip(event.payload["stepIndex"], event.payload.get("reason", ""))
            elif event.kind is EventKind.SESSION_CLOSED:
                engine.end_session()
    except ReplayMiss as exc:
        raise FixtureMismatch(str(exc)) from exc
    return engine


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


def websocket_handler(hub: SessionHub):
    """Connection handler for websockets.sync.server.serve."""

    def handler(connection):
        for raw in connection:
            try:
                envelope = Envelope.parse(raw if isinstance(raw, str) else raw.decode("utf-8"))
            except PayloadInvalid as exc:
                connection.send(
                    Envelope(MSG_ERROR, "", 0, {"code": "PayloadInvalid", "detail": str(exc)}).serialize()
                )
                continue
            try:
                replies = hub.handle(envelope)
            except (UnknownSession, PayloadInvalid, XRGuideError) as exc:
                replies = [
                    Envelope(
                        MSG_ERROR,
                        envelope.session_id,
                        0,
                        {"code": type(exc).__name__, "detail": str(exc)},
                    )
                ]
            for reply in replies:
                connection.send(reply.serialize())

    return handler


class BlobHTTPHandler(BaseHTTPRequestHandler):
    """POST /blobs, GET /blobs/<digest>, static console files elsewhere."""

    blobs: BlobStore = None  # type: ignore[assignment]
    static_dir: Optional[Path] = None

    def _cors(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def do_OPTIONS(self):  # noqa: N802  (stdlib naming)
        self.send_response(204)
        self._cors()
        self.end_headers()

    def do_POST(self):  # noqa: N802
        if self.path.rstrip("/") != "/blobs":
            self.send_response(404)
            self._cors()
            self.end_headers()
            return
        length = int(self.headers.get("Content-Length", 0))
        data = self.rfile.read(length)
        digest = self.blobs.put(data)
        body = json.dumps({"digest": digest}).encode()
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802
        if self.path.startswith("/blobs/"):
            digest = self.path[len("/blobs/") :]
            try:
                data = self.blobs.get(digest)
            except KeyError:
                self.send_response(404)
                self._cors()
                self.end_headers()
                return
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "application/octet-stream")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
            return
        self._serve_static()

    def _serve_static(self):
        if self.static_dir is None:
            self.send_response(404)
            self._cors()
            self.end_headers()
            return
        rel = self.path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            self.send_response(404)
            self._cors()
            self.end_headers()
            return
        data = target.read_bytes()
        content_type = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
            ".json": "application/json",
            ".png": "image/png",
        }.get(target.suffix, "application/octet-stream")
        self.send_response(200)
        self._cors()
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format, *args):  # noqa: A002
        logger.debug("blob-http: " + format, *args)


def serve(
    hub: SessionHub,
    host: str = "127.0.0.1",
    port: int = 8731,
    blob_port: Optional[int] = None,
    static_dir: Optional[str | Path] = None,
):
    """Run the websocket protocol server plus the blob/static HTTP endpoint.

    Blocks until interrupted. blob_port defaults to port + 1.
    """
    from websockets.sync.server import serve as ws_serve

    blob_port = blob_port if blob_port is not None else port + 1
    handler_cls = type(
        "BoundBlobHandler",
        (BlobHTTPHandler,),
        {
            "blobs": hub.blobs or BlobStore(Path(".") / "blobs"),
            "static_dir": Path(static_dir) if static_dir else None,
        },
    )
    http_server = ThreadingHTTPServer((host, blob_port), handler_cls)
    http_thread = threading.Thread(target=http_server.serve_forever, daemon=True)
    http_thread.start()
    logger.info("blob/static endpoint on http://%s:%d", host, blob_port)
    with ws_serve(websocket_handler(hub), host, port) as server:
        logger.info("session server on ws://%s:%d", host, port)
        try:
            server.serve_forever()
        finally:
            http_server.shutdown()
