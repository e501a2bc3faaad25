"""Scenario-driven headless client.

A scenario is a JSON file bundling: the task prompt, synthetic camera
frames, a scripted action sequence, pointers to the gateway fixture set and
offline media, and an ordered list of expectations evaluated against the
session's event stream. Scenarios run fully offline (fixture provider +
mock segmentation + replay gateway) and deterministically: two runs of the
same scenario produce identical reports.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .errors import ScenarioInvalid
from .events import EventKind, SessionEvent
from .fsm import EngineConfig, GuidanceEngine, SessionStatus
from .gateway import Gateway
from .media import AssetStore, MediaPipeline, ManifestVideoDecoder, MockSegmentation, OfflineProvider
from .server import BlobStore, ConsoleDefaults, frame_from_wire

DATA_DIR = Path(__file__).resolve().parent / "data"
SCENARIO_DIR = DATA_DIR / "scenarios"


@dataclass
class Scenario:
    name: str
    prompt: str
    frames: list[dict]
    script: list[dict]
    fixtures: Path
    media_manifest: Optional[Path]
    seg_boxes: dict[str, tuple[int, int, int, int]]
    signals: list[dict]
    expectations: list[dict]
    subplan_threshold: int = 2

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        base = path.parent
        scenario = cls(
            name=obj["name"],
            prompt=obj["prompt"],
            frames=obj.get("frames", []),
            script=obj.get("script", []),
            fixtures=(base / obj["fixtures"]).resolve(),
            media_manifest=(base / obj["mediaManifest"]).resolve()
            if obj.get("mediaManifest")
            else None,
            seg_boxes={k: tuple(v) for k, v in obj.get("segBoxes", {}).items()},
            signals=obj.get("signals", []),
            expectations=obj.get("expectations", []),
            subplan_threshold=obj.get("subplanThreshold", 2),
        )
        scenario.validate()
        return scenario

    def validate(self) -> None:
        frames_sent = 0
        for i, action in enumerate(self.script):
            kind = action.get("action")
            if kind == "SendFrame":
                index = action.get("index", 0)
                if not (0 <= index < len(self.frames)):
                    raise ScenarioInvalid(f"script[{i}] references missing frame {index}")
                frames_sent += 1
            elif kind == "Verify":
                if frames_sent == 0:
                    raise ScenarioInvalid(f"script[{i}]: Verify before any SendFrame")
            elif kind == "Voice":
                if "text" not in action:
                    raise ScenarioInvalid(f"script[{i}]: Voice needs text")
            elif kind == "FireSignal":
                if "token" not in action:
                    raise ScenarioInvalid(f"script[{i}]: FireSignal needs token")
            elif kind == "Skip":
                if "index" not in action:
                    raise ScenarioInvalid(f"script[{i}]: Skip needs index")
            else:
                raise ScenarioInvalid(f"script[{i}]: unknown action {kind!r}")


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def load_bundled(name: str) -> Scenario:
    path = SCENARIO_DIR / f"{name}.json"
    if not path.exists():
        raise ScenarioInvalid(f"no bundled scenario {name!r}; have {bundled_scenarios()}")
    return Scenario.load(path)


def build_engine(
    scenario: Scenario,
    workdir: Path,
    mode: str = "replay",
    transport=None,
    clock: Optional[Callable[[], float]] = None,
) -> GuidanceEngine:
    """Wire a fully offline engine for the scenario."""
    store = AssetStore(workdir / "assets")
    fixture_file = scenario.fixtures / "calls.jsonl"
    gateway_kwargs = {"mode": mode, "fixture_path": fixture_file}
    if transport is not None:
        gateway_kwargs["transport"] = transport
    if clock is not None:
        gateway_kwargs["clock"] = clock
    gateway = Gateway(**gateway_kwargs)
    provider = (
        OfflineProvider(scenario.media_manifest) if scenario.media_manifest else _EmptyProvider()
    )
    media = MediaPipeline(
        store=store,
        provider=provider,
        gateway=gateway,
        segmentation=MockSegmentation(scenario.seg_boxes) if scenario.seg_boxes else None,
        decoder=ManifestVideoDecoder(scenario.media_manifest.parent)
        if scenario.media_manifest
        else None,
    )
    catalog = load_overlay_catalog(store)
    return GuidanceEngine(
        gateway=gateway,
        media=media,
        config=EngineConfig(subplan_threshold=scenario.subplan_threshold),
        overlay_catalog=catalog,
    )


class _EmptyProvider:
    def search(self, query: str):
        return []


def load_overlay_catalog(store: AssetStore) -> dict:
    """Load the bundled action-token -> icon catalog into the asset store."""
    catalog_path = DATA_DIR / "catalog" / "overlays.json"
    if not catalog_path.exists():
        return {}
    with open(catalog_path, encoding="utf-8") as fh:
        mapping = json.load(fh)
    catalog = {}
    from .media import AssetKind

    for token, filename in mapping.items():
        icon_path = DATA_DIR / "catalog" / filename
        if icon_path.exists():
            catalog[token] = store.put(icon_path.read_bytes(), AssetKind.IMAGE)
    return catalog


@dataclass
class ScenarioReport:
    name: str
    passed: bool
    failures: list[str]
    event_log: Optional[str]
    metrics: dict
    directive_digest: str
    final_status: str
    events: list[SessionEvent] = field(default_factory=list, repr=False)

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "failures": self.failures,
            "eventLog": self.event_log,
            "metrics": self.metrics,
            "directiveDigest": self.directive_digest,
            "finalStatus": self.final_status,
        }


def run_scenario(
    scenario: Scenario,
    workdir: str | Path,
    mode: str = "replay",
    transport=None,
    gateway_clock: Optional[Callable[[], float]] = None,
) -> ScenarioReport:
    """Execute the script in order and evaluate every expectation.

    All assertion failures are collected (the run keeps going) so one report
    shows everything that broke.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    engine = build_engine(scenario, workdir, mode=mode, transport=transport, clock=gateway_clock)
    blobs = BlobStore(workdir / "blobs")
    defaults = ConsoleDefaults()

    engine.start_task(scenario.prompt, scenario.signals)
    for action in scenario.script:
        kind = action["action"]
        if engine.status == SessionStatus.FAILED:
            break
        if kind == "SendFrame":
            wire = dict(scenario.frames[action.get("index", 0)])
            frame, norm_wire = frame_from_wire(wire, blobs, defaults, timestamp=engine.clock())
            engine.on_frame(frame, norm_wire)
        elif kind == "Verify":
            engine.on_verify()
        elif kind == "Voice":
            engine.on_voice(action["text"])
        elif kind == "FireSignal":
            engine.on_signal(action["token"])
        elif kind == "Skip":
            engine.on_skip(action["index"], action.get("reason", ""))
    engine.end_session()

    log_path = workdir / f"{scenario.name}.events.jsonl"
    from .events import write_event_log

    write_event_log(log_path, engine.events)

    failures = evaluate_expectations(scenario.expectations, engine.events, engine.status)
    digest = directive_digest(engine.events)
    return ScenarioReport(
        name=scenario.name,
        passed=not failures,
        failures=failures,
        event_log=str(log_path),
        metrics=engine.gateway.metrics(),
        directive_digest=digest,
        final_status=engine.status,
        events=engine.events,
    )


def directive_digest(events: list[SessionEvent]) -> str:
    """Digest of the serialized directive-batch sequence; replay-stable."""
    h = hashlib.sha256()
    for event in events:
        if event.kind is EventKind.DIRECTIVE_BATCH_SENT:
            h.update(json.dumps(event.payload, sort_keys=True).encode())
            h.update(b"\x00")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Expectations
# ---------------------------------------------------------------------------


def evaluate_expectations(
    expectations: list[dict], events: list[SessionEvent], final_status: str
) -> list[str]:
    failures: list[str] = []
    for i, exp in enumerate(expectations):
        kind = exp.get("kind")
        try:
            checker = _CHECKERS[kind]
        except KeyError:
            failures.append(f"expectation[{i}]: unknown kind {kind!r}")
            continue
        error = checker(exp, events, final_status)
        if error:
            failures.append(f"expectation[{i}] {kind}: {error}")
    return failures


def _of_kind(events, kind: EventKind):
    return [e for e in events if e.kind is kind]


def _check_plan_has_steps(exp, events, final_status):
    ready = _of_kind(events, EventKind.PLAN_READY)
    if not ready:
        return "no PlanReady event"
    n = len(ready[0].payload["steps"])
    lo, hi = exp.get("min", 0), exp.get("max", 10**9)
    if not (lo <= n <= hi):
        return f"plan has {n} steps, outside [{lo}, {hi}]"
    return None


def _batches_for_step(events, step):
    return [
        e.payload
        for e in _of_kind(events, EventKind.DIRECTIVE_BATCH_SENT)
        if e.payload.get("stepIndex") == step
    ]


def _check_directive_kind_at(exp, events, final_status):
    step = exp["step"]
    batches = _batches_for_step(events, step)
    if not batches:
        return f"no directive batch for step {step}"
    occurrence = exp.get("occurrence", 0)
    if occurrence >= len(batches):
        return f"only {len(batches)} batches for step {step}, wanted #{occurrence}"
    kinds = [d["kind"] for d in batches[occurrence]["directives"]]
    for wanted in exp.get("contains", []):
        if wanted not in kinds:
            return f"batch kinds {kinds} lack {wanted}"
    for banned in exp.get("forbids", []):
        if banned in kinds:
            return f"batch kinds {kinds} include forbidden {banned}"
    for kind_name, count in exp.get("exactCount", {}).items():
        if kinds.count(kind_name) != count:
            return f"batch has {kinds.count(kind_name)} x {kind_name}, wanted {count}"
    return None


def _check_verify_result(exp, events, final_status):
    step = exp["step"]
    results = [
        e.payload
        for e in _of_kind(events, EventKind.VERIFICATION_RESULT)
        if e.payload.get("stepIndex") == step
    ]
    occurrence = exp.get("occurrence", 0)
    if occurrence >= len(results):
        return f"only {len(results)} verification results for step {step}"
    got = results[occurrence]["success"]
    if got != exp["success"]:
        return f"verification #{occurrence} for step {step} was {got}"
    if "modelCalled" in exp and results[occurrence].get("modelCalled") != exp["modelCalled"]:
        return f"modelCalled was {results[occurrence].get('modelCalled')}"
    return None


def _check_subplan_inserted_at(exp, events, final_status):
    inserted = [
        e.payload
        for e in _of_kind(events, EventKind.SUBPLAN_INSERTED)
        if e.payload.get("parent") == exp["step"]
    ]
    if not inserted:
        return f"no subplan inserted at step {exp['step']}"
    if "count" in exp and len(inserted[0]["substeps"]) != exp["count"]:
        return f"subplan has {len(inserted[0]['substeps'])} substeps, wanted {exp['count']}"
    return None


def _check_audio_cue(exp, events, final_status):
    cues = [e.payload["cue"] for e in _of_kind(events, EventKind.AUDIO_CUE_SENT)]
    if "sequence" in exp:
        if cues != exp["sequence"]:
            return f"cue sequence {cues} != {exp['sequence']}"
        return None
    cue = exp["cue"]
    want = exp.get("count")
    have = cues.count(cue)
    if want is not None and have != want:
        return f"{have} x {cue} cues, wanted {want}"
    if want is None and have == 0:
        return f"no {cue} cue"
    return None


def _check_final_status(exp, events, final_status):
    if final_status != exp["status"]:
        return f"final status {final_status}, wanted {exp['status']}"
    return None


def _check_verified_count(exp, events, final_status):
    results = _of_kind(events, EventKind.VERIFICATION_RESULT)
    n = sum(1 for e in results if e.payload["success"] == exp.get("success", True))
    if n != exp["count"]:
        return f"{n} verification results with success={exp.get('success', True)}, wanted {exp['count']}"
    return None


def _check_event_count(exp, events, final_status):
    n = len(_of_kind(events, EventKind(exp["event"])))
    if n != exp["count"]:
        return f"{n} x {exp['event']} events, wanted {exp['count']}"
    return None


def _check_verified_step_count(exp, events, final_status):
    steps = {e.payload["stepIndex"] for e in _of_kind(events, EventKind.VERIFICATION_RESULT)}
    if len(steps) != exp["count"]:
        return f"{len(steps)} distinct steps verified ({sorted(steps)}), wanted {exp['count']}"
    return None


def _check_viz_revised_at(exp, events, final_status):
    revised = [
        e.payload
        for e in _of_kind(events, EventKind.VIZ_REVISED)
        if e.payload.get("stepIndex") == exp["step"]
    ]
    if not revised:
        return f"no viz revision for step {exp['step']}"
    if "objectViz" in exp and revised[0]["viz"]["objectViz"] != exp["objectViz"]:
        return f"revised objectViz {revised[0]['viz']['objectViz']}"
    if "actionViz" in exp and revised[0]["viz"]["actionViz"] != exp["actionViz"]:
        return f"revised actionViz {revised[0]['viz']['actionViz']}"
    return None


def _check_step_types(exp, events, final_status):
    ready = _of_kind(events, EventKind.PLAN_READY)
    if not ready:
        return "no PlanReady event"
    types = ready[0].payload.get("stepTypes", [])
    for wanted in exp["include"]:
        if wanted not in types:
            return f"plan step types {types} lack {wanted}"
    return None


def _check_voice_answered(exp, events, final_status):
    answers = _of_kind(events, EventKind.VOICE_ANSWER)
    if len(answers) < exp.get("count", 1):
        return f"{len(answers)} voice answers, wanted >= {exp.get('count', 1)}"
    if exp.get("vizUpdated") is not None:
        if not any(a.payload.get("vizUpdated") == exp["vizUpdated"] for a in answers):
            return f"no voice answer with vizUpdated={exp['vizUpdated']}"
    return None


_CHECKERS = {
    "PlanHasSteps": _check_plan_has_steps,
    "DirectiveKindAt": _check_directive_kind_at,
    "VerifyResult": _check_verify_result,
    "SubPlanInsertedAt": _check_subplan_inserted_at,
    "AudioCue": _check_audio_cue,
    "FinalStatus": _check_final_status,
    "VerifiedCount": _check_verified_count,
    "EventCount": _check_event_count,
    "VerifiedStepCount": _check_verified_step_count,
    "VizRevisedAt": _check_viz_revised_at,
    "StepTypes": _check_step_types,
    "VoiceAnswered": _check_voice_answered,
}


# ---------------------------------------------------------------------------
# Batch running
# ---------------------------------------------------------------------------


def run_many(
    names: list[str], workdir: str | Path, parallel: bool = False
) -> list[ScenarioReport]:
    """Run several bundled scenarios, optionally on concurrent threads."""
    workdir = Path(workdir)
    reports: dict[str, ScenarioReport] = {}
    if not parallel:
        for name in names:
            reports[name] = run_scenario(load_bundled(name), workdir / name)
    else:
        threads = []

        def worker(n: str):
            reports[n] = run_scenario(load_bundled(n), workdir / n)

        for name in names:
            t = threading.Thread(target=worker, args=(name,))
            t.start()
            threads.append(t)
        for t in threads:
            t.join()
    return [reports[n] for n in names]
