"""Protocol handling, persistence, replay, and transport round trips."""

from __future__ import annotations

import base64
import json
import threading
import urllib.request

import pytest

from xrguide.errors import LogCorrupt, PayloadInvalid, UnknownSession
from xrguide.events import EventKind, read_event_log
from xrguide.harness import build_engine, load_bundled
from xrguide.protocol import Envelope, SeqCounter, SeqValidator
from xrguide.server import (
    BlobStore,
    ConsoleDefaults,
    SessionHub,
    frame_from_wire,
    replay_session,
    serve,
)

COFFEE = load_bundled("coffee")

FRAME_PAYLOAD = {
    "imageB64": base64.b64encode(b"not really a png").decode(),
    "width": 64,
    "height": 48,
}


def make_hub(tmp_path, scenario=COFFEE):
    blobs = BlobStore(tmp_path / "blobs")

    def factory(session_id):
        return build_engine(scenario, tmp_path / "work" / session_id)

    return SessionHub(factory, logs_dir=tmp_path / "logs", blobs=blobs)


def env(type_, session_id, seq, payload=None):
    return Envelope(type=type_, session_id=session_id, seq=seq, payload=payload or {})


class TestEnvelope:
    def test_parse_round_trip(self):
        e = env("StartTask", "s1", 1, {"prompt": "x"})
        assert Envelope.parse(e.serialize()) == e

    @pytest.mark.parametrize(
        "raw",
        [
            "not json",
            '"just a string"',
            '{"sessionId": "s", "seq": 1}',
            '{"type": "X", "seq": 1}',
            '{"type": "X", "sessionId": "s"}',
            '{"type": "X", "sessionId": "s", "seq": "one"}',
            '{"type": "X", "sessionId": "s", "seq": 1, "payload": []}',
        ],
    )
    def test_malformed_envelopes_rejected(self, raw):
        with pytest.raises(PayloadInvalid):
            Envelope.parse(raw)


class TestSeq:
    def test_validator_rejects_duplicates_and_regress(self):
        v = SeqValidator()
        v.check(1)
        v.check(2)
        with pytest.raises(Exception):
            v.check(2)
        with pytest.raises(Exception):
            v.check(1)

    def test_counter_monotone(self):
        c = SeqCounter()
        assert [c.next(), c.next(), c.next()] == [1, 2, 3]


class TestHub:
    def test_start_task_produces_plan_ready(self, tmp_path):
        hub = make_hub(tmp_path)
        out = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))
        types = [m.type for m in out]
        assert types[0] == "SessionAccepted"
        assert "PlanReady" in types
        session_id = out[0].payload["sessionId"]
        assert session_id

    def test_verify_without_frame_returns_no_frame_error(self, tmp_path):
        hub = make_hub(tmp_path)
        out = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))
        sid = out[0].payload["sessionId"]
        replies = hub.handle(env("VerifyRequest", sid, 2))
        errors = [m for m in replies if m.type == "Error"]
        assert errors and errors[0].payload["code"] == "NoFrame"

    def test_duplicate_seq_dropped_with_error(self, tmp_path):
        hub = make_hub(tmp_path)
        out = hub.handle(env("StartTask", "", 5, {"prompt": COFFEE.prompt}))
        sid = out[0].payload["sessionId"]
        replies = hub.handle(env("VerifyRequest", sid, 5))
        assert [m.type for m in replies] == ["Error"]
        assert replies[0].payload["code"] == "OutOfOrderSeq"

    def test_unknown_session(self, tmp_path):
        hub = make_hub(tmp_path)
        with pytest.raises(UnknownSession):
            hub.handle(env("VerifyRequest", "ghost", 1))

    def test_full_session_over_hub_and_event_durability(self, tmp_path):
        hub = make_hub(tmp_path)
        out = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))
        sid = out[0].payload["sessionId"]
        seq = 2
        hub.handle(env("FrameUpdate", sid, seq, dict(COFFEE.frames[0])))
        seq += 1
        for _ in range(5):
            hub.handle(env("VerifyRequest", sid, seq))
            seq += 1
        ended = hub.handle(env("EndSession", sid, seq))
        assert ended[-1].type == "SessionEnded"
        assert ended[-1].payload["finalStatus"] == "Done"
        log = read_event_log(tmp_path / "logs" / f"{sid}.events.jsonl")
        # every server message corresponds to an already persisted event
        assert any(e.kind is EventKind.PLAN_READY for e in log)
        assert sum(e.kind is EventKind.VERIFICATION_RESULT for e in log) == 5
        assert log[-1].kind is EventKind.SESSION_CLOSED

    def test_attach_resends_identical_messages(self, tmp_path):
        hub = make_hub(tmp_path)
        out = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))
        sid = out[0].payload["sessionId"]
        out += hub.handle(env("FrameUpdate", sid, 2, dict(COFFEE.frames[0])))
        out += hub.handle(env("VerifyRequest", sid, 3))
        replayed = hub.handle(env("Attach", sid, 4))
        assert [m.serialize() for m in replayed] == [m.serialize() for m in out]

    def test_session_isolation_interleaved(self, tmp_path):
        hub = make_hub(tmp_path)
        a = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))[0].payload["sessionId"]
        b = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))[0].payload["sessionId"]
        hub.handle(env("FrameUpdate", a, 2, dict(COFFEE.frames[0])))
        hub.handle(env("FrameUpdate", b, 2, dict(COFFEE.frames[0])))
        hub.handle(env("VerifyRequest", a, 3))  # only session A verifies
        log_a = read_event_log(tmp_path / "logs" / f"{a}.events.jsonl")
        log_b = read_event_log(tmp_path / "logs" / f"{b}.events.jsonl")
        assert any(e.kind is EventKind.VERIFICATION_RESULT for e in log_a)
        assert not any(e.kind is EventKind.VERIFICATION_RESULT for e in log_b)

    def test_concurrent_sessions_do_not_interfere(self, tmp_path):
        hub = make_hub(tmp_path)
        results = {}

        def run(name):
            out = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))
            sid = out[0].payload["sessionId"]
            hub.handle(env("FrameUpdate", sid, 2, dict(COFFEE.frames[0])))
            for i in range(5):
                hub.handle(env("VerifyRequest", sid, 3 + i))
            final = hub.handle(env("EndSession", sid, 9))
            results[name] = final[-1].payload["finalStatus"]

        threads = [threading.Thread(target=run, args=(i,)) for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert list(results.values()) == ["Done", "Done", "Done"]


class TestFrameFromWire:
    def test_console_defaults_substituted(self):
        frame, wire = frame_from_wire(dict(FRAME_PAYLOAD), None, ConsoleDefaults())
        assert frame.fx == pytest.approx(0.8 * 64)
        assert frame.depth(10, 10) == pytest.approx(1.5)
        assert wire["depth"] is None

    def test_bad_base64_rejected(self):
        with pytest.raises(PayloadInvalid):
            frame_from_wire({"imageB64": "!!!"}, None, ConsoleDefaults())

    def test_missing_image_rejected(self):
        with pytest.raises(PayloadInvalid):
            frame_from_wire({"width": 64, "height": 48}, None, ConsoleDefaults())

    def test_depth_by_blob_reference(self, tmp_path):
        blobs = BlobStore(tmp_path)
        grid = {"width": 2, "height": 2, "data": [1.0, 2.0, 3.0, 4.0]}
        digest = blobs.put(json.dumps(grid).encode())
        payload = dict(FRAME_PAYLOAD, width=2, height=2, depth={"blobDigest": digest})
        payload["intrinsics"] = {"fx": 2.0, "fy": 2.0, "cx": 1.0, "cy": 1.0}
        frame, wire = frame_from_wire(payload, blobs, ConsoleDefaults())
        assert frame.depth(1, 1) == pytest.approx(4.0)
        assert wire["depth"] == {"blobDigest": digest}


class TestReplaySession:
    def test_replayed_log_reproduces_event_sequence(self, tmp_path):
        hub = make_hub(tmp_path)
        out = hub.handle(env("StartTask", "", 1, {"prompt": COFFEE.prompt}))
        sid = out[0].payload["sessionId"]
        hub.handle(env("FrameUpdate", sid, 2, dict(COFFEE.frames[0])))
        for i in range(5):
            hub.handle(env("VerifyRequest", sid, 3 + i))
        hub.handle(env("EndSession", sid, 8))
        log_path = tmp_path / "logs" / f"{sid}.events.jsonl"
        original = [e.comparable() for e in read_event_log(log_path)]

        engine = replay_session(
            log_path,
            engine_factory=lambda: build_engine(COFFEE, tmp_path / "replayed"),
            blobs=hub.blobs,
        )
        replayed = [e.comparable() for e in engine.events]
        assert replayed == original
        assert engine.status == "Done"

    def test_truncated_log_reports_line(self, tmp_path):
        path = tmp_path / "log.jsonl"
        path.write_text('{"seq": 1, "timestamp": 0, "kind": "SessionStarted", "payload": {}}\n{"seq": 2, "tim')
        with pytest.raises(LogCorrupt) as err:
            read_event_log(path)
        assert err.value.line_no == 2


@pytest.fixture(scope="module")
def live_server(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("live-server")
    hub = make_hub(tmp_path)
    thread = threading.Thread(
        target=serve,
        kwargs=dict(hub=hub, host="127.0.0.1", port=18731, blob_port=18732),
        daemon=True,
    )
    thread.start()
    import time

    for _ in range(100):
        try:
            urllib.request.urlopen("http://127.0.0.1:18732/blobs/none", timeout=0.2)
            break
        except urllib.error.HTTPError:
            break  # 404 means the server is up
        except OSError:
            time.sleep(0.05)
    return hub


class TestTransports:
    def test_websocket_round_trip(self, live_server):
        from websockets.sync.client import connect

        with connect("ws://127.0.0.1:18731", open_timeout=5) as ws:
            ws.send(env("StartTask", "", 1, {"prompt": COFFEE.prompt}).serialize())
            accepted = Envelope.parse(ws.recv(timeout=10))
            assert accepted.type == "SessionAccepted"
            sid = accepted.payload["sessionId"]
            got_plan = False
            # drain until PlanReady arrives
            for _ in range(10):
                msg = Envelope.parse(ws.recv(timeout=10))
                if msg.type == "PlanReady":
                    got_plan = True
                    break
            assert got_plan
            ws.send(env("FrameUpdate", sid, 2, dict(COFFEE.frames[0])).serialize())
            msg = Envelope.parse(ws.recv(timeout=10))
            assert msg.type == "DirectiveBatch"

    def test_blob_endpoint_put_get(self, live_server):
        body = b"depth grid bytes"
        req = urllib.request.Request(
            "http://127.0.0.1:18732/blobs", data=body, method="POST"
        )
        with urllib.request.urlopen(req, timeout=5) as resp:
            digest = json.loads(resp.read())["digest"]
        with urllib.request.urlopen(
            f"http://127.0.0.1:18732/blobs/{digest}", timeout=5
        ) as resp:
            assert resp.read() == body

    def test_malformed_websocket_message_gets_error(self, live_server):
        from websockets.sync.client import connect

        with connect("ws://127.0.0.1:18731", open_timeout=5) as ws:
            ws.send("this is not an envelope")
            msg = Envelope.parse(ws.recv(timeout=10))
            assert msg.type == "Error"
