"""The published schema files must agree with what the code emits/accepts."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import pytest

from xrguide.harness import load_bundled, run_scenario
from xrguide.events import EventKind
from xrguide.protocol import Envelope

DOCS = Path(__file__).resolve().parents[1] / "docs"


def load_schema(name):
    return json.loads((DOCS / name).read_text())


GAS_KNOB = {
    "goal": "Turn the gas knob to medium heat",
    "steps": ["Locate the gas knob", "Turn the gas knob clockwise to medium position"],
    "plannerResponse": {
        "next": "Turn the gas knob clockwise to medium position",
        "check": "",
        "success": False,
        "viz": {
            "objectViz": "Outline",
            "actionViz": "Arrow",
            "actionType": ["rotation"],
            "needsRotation": True,
            "needsTranslation": False,
            "waypoints": [{"type": "target", "objectName": "silver gas knob"}],
        },
    },
}


class TestPlannerSchema:
    def test_example_validates(self):
        jsonschema.validate(GAS_KNOB, load_schema("planner_response.schema.json"))

    def test_banned_name_rejected_by_schema(self):
        doc = json.loads(json.dumps(GAS_KNOB))
        doc["plannerResponse"]["viz"]["waypoints"][0]["objectName"] = "area"
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(doc, load_schema("planner_response.schema.json"))

    def test_engine_serialization_validates(self):
        from xrguide.plan_model import parse_plan_document

        doc = parse_plan_document(json.dumps(GAS_KNOB))
        jsonschema.validate(doc.to_wire(), load_schema("planner_response.schema.json"))


class TestAnswerSchemas:
    def test_rotation_example(self):
        answer = {"name": "knob", "pos": [450, 520, 560, 640], "rotation": ["Z", "Positive"]}
        jsonschema.validate(answer, load_schema("rotation_answer.schema.json"))

    def test_rotation_bad_axis_rejected(self):
        answer = {"name": "knob", "pos": [0, 0, 1, 1], "rotation": ["W", "Positive"]}
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(answer, load_schema("rotation_answer.schema.json"))

    def test_transform_single_and_array(self):
        schema = load_schema("transform_answer.schema.json")
        entry = {"type": "endtarget", "name": "glass", "pos": [700, 300, 860, 520]}
        jsonschema.validate(entry, schema)
        jsonschema.validate([entry, entry], schema)


@pytest.fixture(scope="module")
def events(tmp_path_factory):
    report = run_scenario(load_bundled("origami"), tmp_path_factory.mktemp("schema-run"))
    assert report.passed
    return report.events


class TestEmittedWireShapes:

    def test_every_directive_batch_validates(self, events):
        schema = load_schema("directive_batch.schema.json")
        batches = [e.payload for e in events if e.kind is EventKind.DIRECTIVE_BATCH_SENT]
        assert batches
        for batch in batches:
            jsonschema.validate(batch, schema)

    def test_envelopes_validate(self, events):
        schema = load_schema("envelope.schema.json")
        for envelope in (
            Envelope("StartTask", "", 1, {"prompt": "x"}),
            Envelope("DirectiveBatch", "s1", 2, {"version": 1}),
            Envelope("Error", "s1", 3, {"code": "NoFrame", "detail": ""}),
        ):
            jsonschema.validate(envelope.to_wire(), schema)
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate({"type": "Nonsense", "sessionId": "s", "seq": 1}, schema)
