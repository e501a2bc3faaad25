"""Record/replay closure, replay determinism, and latency metrics."""

from __future__ import annotations

import json

import pytest

from xrguide.errors import ReplayMiss, Timeout
from xrguide.gateway import CallRecord, Gateway, ModelProfile, default_profiles, profile_for
from xrguide.prompt_engine import PromptKind, RenderedPrompt


def prompt(kind=PromptKind.DURING_TASK, text="verify the scene", attachments=("d1",)):
    return RenderedPrompt(kind, text, tuple(attachments))


class TickClock:
    def __init__(self, step=1.0):
        self.t = 0.0
        self.step = step

    def __call__(self):
        self.t += self.step
        return self.t


class TestProfiles:
    def test_timeout_must_be_positive(self):
        with pytest.raises(ValueError):
            ModelProfile(name="x", timeout=0)

    def test_routing_fast_vs_strong(self):
        profiles = default_profiles()
        assert profile_for(PromptKind.DURING_TASK, profiles).name == "fast"
        assert profile_for(PromptKind.RELEVANCE_SCORE, profiles).name == "fast"
        assert profile_for(PromptKind.ROTATION_LOCALIZE, profiles).name == "strong"
        assert profile_for(PromptKind.TRANSFORM_LOCALIZE, profiles).name == "strong"
        assert profile_for(PromptKind.INITIAL_PLAN, profiles).name == "strong"


class TestRecordReplay:
    def test_record_then_replay_closure(self, tmp_path):
        fixture = tmp_path / "calls.jsonl"
        answers = iter(["first answer", "second answer"])
        recorder = Gateway(
            mode="record",
            fixture_path=fixture,
            transport=lambda p, prof: next(answers),
            clock=TickClock(),
        )
        p1 = prompt(text="call one")
        p2 = prompt(text="call two")
        r1, lat1 = recorder.call(p1)
        r2, _ = recorder.call(p2)
        assert (r1, r2) == ("first answer", "second answer")
        assert lat1 > 0

        lines = [json.loads(l) for l in fixture.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[0]["responseText"] == "first answer"
        assert lines[0]["contextHash"] == p1.context_hash

        replayer = Gateway(mode="replay", fixture_path=fixture)
        rr1, rl1 = replayer.call(p1)
        rr2, _ = replayer.call(p2)
        assert (rr1, rr2) == ("first answer", "second answer")
        assert rl1 == lines[0]["latency"]

    def test_replay_miss_never_touches_network(self, tmp_path):
        fixture = tmp_path / "calls.jsonl"
        fixture.write_text("")

        def boom(p, prof):
            raise AssertionError("replay mode must not call the transport")

        gw = Gateway(mode="replay", fixture_path=fixture, transport=boom)
        with pytest.raises(ReplayMiss):
            gw.call(prompt())

    def test_replay_kind_fallback_in_call_order(self, tmp_path):
        fixture = tmp_path / "calls.jsonl"
        answers = iter(["A", "B"])
        recorder = Gateway(
            mode="record",
            fixture_path=fixture,
            transport=lambda p, prof: next(answers),
            clock=TickClock(),
        )
        recorder.call(prompt(text="original one"))
        recorder.call(prompt(text="original two"))
        replayer = Gateway(mode="replay", fixture_path=fixture)
        # different texts: exact hash misses, per-kind order still serves A then B
        assert replayer.call(prompt(text="changed one"))[0] == "A"
        assert replayer.call(prompt(text="changed two"))[0] == "B"
        with pytest.raises(ReplayMiss):
            replayer.call(prompt(text="a third call"))

    def test_replay_same_hash_consumed_once_each(self, tmp_path):
        fixture = tmp_path / "calls.jsonl"
        answers = iter(["first", "second"])
        recorder = Gateway(
            mode="record",
            fixture_path=fixture,
            transport=lambda p, prof: next(answers),
            clock=TickClock(),
        )
        same = prompt(text="identical")
        recorder.call(same)
        recorder.call(same)
        replayer = Gateway(mode="replay", fixture_path=fixture)
        assert replayer.call(same)[0] == "first"
        assert replayer.call(same)[0] == "second"

    def test_reset_replay_allows_second_pass(self, tmp_path):
        fixture = tmp_path / "calls.jsonl"
        recorder = Gateway(
            mode="record", fixture_path=fixture, transport=lambda p, prof: "x", clock=TickClock()
        )
        recorder.call(prompt())
        replayer = Gateway(mode="replay", fixture_path=fixture)
        assert replayer.call(prompt())[0] == "x"
        replayer.reset_replay()
        assert replayer.call(prompt())[0] == "x"

    def test_record_appends_in_call_order(self, tmp_path):
        fixture = tmp_path / "calls.jsonl"
        n = 5
        recorder = Gateway(
            mode="record",
            fixture_path=fixture,
            transport=lambda p, prof: p.text,
            clock=TickClock(),
        )
        for i in range(n):
            recorder.call(prompt(text=f"call {i}"))
        lines = [json.loads(l) for l in fixture.read_text().splitlines()]
        assert [l["responseText"] for l in lines] == [f"call {i}" for i in range(n)]


class TestMetrics:
    def test_summary_math(self, tmp_path):
        latencies = iter([2.0, 4.0, 6.0])
        clock = TickClock(step=0)

        def transport(p, prof):
            clock.t += next(latencies)
            return "ok"

        gw = Gateway(mode="live", transport=transport, clock=lambda: clock.t)
        for _ in range(3):
            gw.call(prompt())
        summary = gw.metrics()["DuringTask/fast"]
        assert summary["count"] == 3
        assert summary["mean"] == pytest.approx(4.0)
        assert summary["min"] == pytest.approx(2.0)
        assert summary["max"] == pytest.approx(6.0)
        assert summary["timeouts"] == 0

    def test_no_calls_empty_metrics(self):
        gw = Gateway(mode="live", transport=lambda p, prof: "ok")
        assert gw.metrics() == {}

    def test_timeouts_counted_separately(self):
        calls = {"n": 0}

        def transport(p, prof):
            calls["n"] += 1
            if calls["n"] == 1:
                raise Timeout("too slow")
            return "ok"

        gw = Gateway(mode="live", transport=transport, clock=TickClock())
        with pytest.raises(Timeout):
            gw.call(prompt())
        gw.call(prompt())
        summary = gw.metrics()["DuringTask/fast"]
        assert summary["count"] == 1  # completed calls only
        assert summary["timeouts"] == 1

    def test_replay_metrics_use_recorded_latency(self, tmp_path):
        fixture = tmp_path / "calls.jsonl"
        record = CallRecord(
            context_hash=prompt().context_hash,
            kind=PromptKind.DURING_TASK,
            request_text="verify the scene",
            attachment_digests=["d1"],
            response_text='{"success": true}',
            latency=2.8,
            timestamp=1.0,
        )
        fixture.write_text(json.dumps(record.to_wire()) + "\n")
        gw = Gateway(mode="replay", fixture_path=fixture)
        text, latency = gw.call(prompt())
        assert text == '{"success": true}'
        assert latency == 2.8
        assert gw.metrics()["DuringTask/fast"]["mean"] == pytest.approx(2.8)
