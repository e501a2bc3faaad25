#!/usr/bin/env python3
"""Regenerate the bundled offline data set.

Builds, deterministically: the five scenario definitions, their media
manifests and images, the overlay icon catalog, the synthetic camera frames,
the evaluation label fixtures, and (by running each scenario once in record
mode against a scripted model) the gateway fixture files. A replay pass
verifies the record-then-replay closure before anything is accepted.

Run from the repository root:  python tools/gen_fixtures.py
"""

from __future__ import annotations

import base64
import json
import random
import shutil
import struct
import sys
import tempfile
import zlib
from pathlib import Path

REPO = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO / "src"))

from xrguide.harness import DATA_DIR, Scenario, run_scenario  # noqa: E402
from xrguide.prompt_engine import PromptKind  # noqa: E402

SCENARIOS_DIR = DATA_DIR / "scenarios"
FIXTURES_DIR = DATA_DIR / "fixtures"
MEDIA_DIR = DATA_DIR / "media"
LABELS_DIR = DATA_DIR / "labels"
CATALOG_DIR = DATA_DIR / "catalog"

LATENCY = {
    PromptKind.INITIAL_PLAN: 3.5,
    PromptKind.DURING_TASK: 2.8,
    PromptKind.ROTATION_LOCALIZE: 2.2,
    PromptKind.TRANSFORM_LOCALIZE: 2.2,
    PromptKind.RELEVANCE_SCORE: 0.5,
    PromptKind.VOICE_ANSWER: 1.7,
    PromptKind.SUBPLAN_REQUEST: 2.9,
}


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self) -> float:
        return self.t

    def advance(self, dt: float) -> None:
        self.t += dt


class ScriptedTransport:
    """Deterministic stand-in for a live model, one queue per prompt kind."""

    def __init__(self, responses: dict, clock: FakeClock):
        self.queues = {k: list(v) for k, v in responses.items()}
        self.clock = clock

    def __call__(self, prompt, profile) -> str:
        queue = self.queues.get(prompt.kind)
        if not queue:
            raise RuntimeError(f"scripted transport exhausted for {prompt.kind.value}")
        self.clock.advance(LATENCY[prompt.kind])
        return queue.pop(0)

    def leftovers(self) -> dict:
        return {k.value: len(v) for k, v in self.queues.items() if v}


# ---------------------------------------------------------------------------
# Small builders
# ---------------------------------------------------------------------------


def png_bytes(rgb: tuple[int, int, int], w: int = 24, h: int = 24) -> bytes:
    raw = b"".join(b"\x00" + bytes(rgb) * w for _ in range(h))

    def chunk(typ: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + typ
            + data
            + struct.pack(">I", zlib.crc32(typ + data) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


def viz(
    object_viz: str,
    action_viz,
    action_types=(),
    waypoints=(),
    needs_translation=False,
    needs_rotation=False,
) -> dict:
    return {
        "objectViz": object_viz,
        "actionViz": action_viz,
        "actionType": list(action_types),
        "needsTranslation": needs_translation,
        "needsRotation": needs_rotation,
        "waypoints": [{"type": k, "objectName": n} for k, n in waypoints],
    }


def plan_response(goal, steps, next_, viz_spec, step_domains, step_viz, check="") -> str:
    return json.dumps(
        {
            "goal": goal,
            "steps": steps,
            "plannerResponse": {
                "next": next_,
                "check": check,
                "success": False,
                "viz": viz_spec,
            },
            "stepDomains": step_domains,
            "stepViz": step_viz,
        },
        indent=2,
    )


def fragment(success, next_="", check="", viz_spec=None) -> str:
    return json.dumps(
        {"next": next_, "check": check, "success": success, "viz": viz_spec}, indent=2
    )


def transform_answer(entries) -> str:
    return json.dumps(
        [{"type": k, "name": n, "pos": list(pos)} for k, n, pos in entries]
    )


def rotation_answer(name, pos, axis, direction) -> str:
    return json.dumps({"name": name, "pos": list(pos), "rotation": [axis, direction]})


def relevance(score, reason) -> str:
    return json.dumps({"score": score, "reason": reason})


def frame_wire(image_rgb, width=64, height=48, depth_holes=None, plane_depth=1.5) -> dict:
    wire = {
        "imageB64": base64.b64encode(png_bytes(image_rgb, 16, 12)).decode("ascii"),
        "width": width,
        "height": height,
        "intrinsics": {"fx": 60.0, "fy": 60.0, "cx": width / 2, "cy": height / 2},
        "pose": {
            "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1],
            "translation": [0.0, 0.0, 0.0],
        },
    }
    if depth_holes:
        data = [plane_depth] * (width * height)
        for (px, py) in depth_holes:
            data[py * width + px] = 0.0
        wire["depth"] = {"width": width, "height": height, "data": data}
    return wire


def write_media(name: str, queries: dict, extra_files: dict) -> Path:
    """Write a scenario's offline media directory and manifest."""
    media = MEDIA_DIR / name
    if media.exists():
        shutil.rmtree(media)
    media.mkdir(parents=True)
    manifest = {"queries": {}, "default": []}
    for query, files in queries.items():
        manifest["queries"][query] = [fname for fname, _ in files]
        for fname, content in files:
            (media / fname).write_bytes(content)
    for fname, content in extra_files.items():
        (media / fname).write_bytes(content)
    (media / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return media


def step_query(instruction: str, goal: str) -> str:
    return f"{instruction} - {goal}"


def color(i: int, j: int = 0) -> tuple[int, int, int]:
    return ((37 * i + 11 * j + 40) % 256, (83 * i + 29 * j + 90) % 256, (131 * i + 7 * j + 60) % 256)


# ---------------------------------------------------------------------------
# Scenario definitions
# ---------------------------------------------------------------------------


def coffee_scenario() -> dict:
    goal = "Make a latte with the coffee machine"
    prompt = "How to make a latte with the coffee machine?"
    steps = [
        "Fill the milk container with fresh milk",
        "Place the clear glass under the spout",
        "Press the latte button",
        "Wait for the milk foam to settle",
        "Remove the glass carefully",
    ]
    specs = [
        viz("Outline", "Gesture", ["grip"], [("target", "white milk container")]),
        viz(
            "Outline",
            "Arrow",
            ["translation"],
            [("target", "clear glass"), ("endtarget", "drip tray under spout")],
            needs_translation=True,
        ),
        viz("Outline", "Tool", ["press"], [("target", "latte button")]),
        viz("ShapePreview", None, [], [("target", "glass with layered latte")]),
        viz("Outline", "Gesture", ["grip"], [("target", "glass with layered latte")]),
    ]
    domains = [["Real", "Real"]] * 5
    fragments = [
        fragment(True, steps[1], "", specs[1]),
        fragment(True, steps[2], "", specs[2]),
        fragment(True, steps[3], "", specs[3]),
        fragment(True, steps[4], "", specs[4]),
        fragment(True, "", "", specs[4]),
    ]
    transforms = [
        transform_answer([("object", "white milk container", (120, 240, 360, 560))]),
        transform_answer(
            [
                ("starttarget", "clear glass", (400, 500, 550, 700)),
                ("endtarget", "drip tray under spout", (600, 520, 760, 720)),
            ]
        ),
        transform_answer([("object", "latte button", (700, 200, 800, 280))]),
        transform_answer([("object", "glass with layered latte", (420, 420, 640, 760))]),
        transform_answer([("object", "glass with layered latte", (420, 420, 640, 760))]),
    ]
    relevances = []
    queries = {prompt: [(f"coffee_goal.png", png_bytes(color(0)))]}
    for i, step in enumerate(steps):
        files = [
            (f"coffee_s{i}_a.png", png_bytes(color(i + 1, 0))),
            (f"coffee_s{i}_b.png", png_bytes(color(i + 1, 1))),
        ]
        queries[step_query(step, goal)] = files
        relevances += [
            relevance(0.9, "clearly shows the step"),
            relevance(0.3, "unrelated background"),
        ]
    return {
        "name": "coffee",
        "prompt": prompt,
        "responses": {
            PromptKind.INITIAL_PLAN: [
                plan_response(goal, steps, steps[0], specs[0], domains, specs)
            ],
            PromptKind.DURING_TASK: fragments,
            PromptKind.TRANSFORM_LOCALIZE: transforms,
            PromptKind.RELEVANCE_SCORE: relevances,
        },
        "media_queries": queries,
        "extra_files": {},
        "seg_boxes": {"glass with layered latte": [420, 420, 640, 760]},
        "signals": [],
        "frames": [frame_wire(color(40))],
        "script": [{"action": "SendFrame", "index": 0}] + [{"action": "Verify"}] * 5,
        "expectations": [
            {"kind": "PlanHasSteps", "min": 3, "max": 12},
            {"kind": "StepTypes", "include": ["R2R"]},
            {
                "kind": "DirectiveKindAt",
                "step": 0,
                "contains": ["StatePanel", "Outline", "GestureOverlay"],
            },
            {"kind": "DirectiveKindAt", "step": 1, "contains": ["ArrowTranslation"]},
            {"kind": "DirectiveKindAt", "step": 2, "contains": ["ToolOverlay"]},
            {
                "kind": "DirectiveKindAt",
                "step": 3,
                "contains": ["ShapePreview"],
                "forbids": ["ArrowTranslation", "ArrowRotation"],
            },
            {"kind": "AudioCue", "cue": "Correct", "count": 5},
            {"kind": "VerifiedCount", "success": True, "count": 5},
            {"kind": "FinalStatus", "status": "Done"},
        ],
    }


def origami_scenario() -> dict:
    goal = "Fold a paper boat"
    prompt = "How to fold a paper boat?"
    steps = [
        "Fold the paper in half horizontally",
        "Fold the top corners to the center line",
        "Fold the bottom flap upward on both sides",
        "Open the pocket and flatten into a boat shape",
    ]
    specs = [
        viz("ShapePreview", "Gesture", ["fold"], [("target", "white paper sheet")]),
        viz(
            "Outline",
            "Arrow",
            ["translation"],
            [("target", "top paper corners"), ("endtarget", "center crease line")],
            needs_translation=True,
        ),
        viz(
            "Outline",
            "Arrow",
            ["rotation"],
            [("target", "bottom paper flap")],
            needs_rotation=True,
        ),
        viz("Outline", "Gesture", ["open"], [("target", "paper pocket")]),
    ]
    domains = [["Virtual", "Real"]] * 4
    step_viz = [specs[0], specs[1], specs[2], None]  # last step's spec arrives in-task
    sub_a = viz("Outline", None, [], [("target", "white paper sheet")])
    sub_b = viz("Outline", "Gesture", ["fold"], [("target", "left paper corner")])
    fragments = [
        fragment(True, steps[1], "", specs[1]),
        fragment(
            False,
            steps[1] + " / align the corner tips",
            "The corner fold crease is not visible yet",
            specs[1],
        ),
        fragment(False, steps[1] + " / crease the fold firmly", "", specs[1]),
        fragment(True, "Fold the left corner tip exactly onto the center line", "", sub_b),
        fragment(True, steps[2], "", specs[2]),
        fragment(True, steps[3], "", specs[3]),
        fragment(True, "", "", specs[3]),
    ]
    subplan = json.dumps(
        {
            "substeps": [
                {
                    "instruction": "Unfold the previous crease to restart the corner fold",
                    "check": "Paper lies flat with a visible center crease",
                    "viz": sub_a,
                },
                {
                    "instruction": "Fold the left corner tip exactly onto the center line",
                    "check": "Left corner tip aligned with the crease",
                    "viz": sub_b,
                },
            ]
        },
        indent=2,
    )
    transforms = [
        transform_answer([("object", "white paper sheet", (300, 300, 700, 700))]),
        transform_answer(
            [
                ("starttarget", "top paper corners", (250, 150, 480, 360)),
                ("endtarget", "center crease line", (450, 420, 560, 560)),
            ]
        ),
        transform_answer(
            [
                ("starttarget", "top paper corners", (250, 150, 480, 360)),
                ("endtarget", "center crease line", (450, 420, 560, 560)),
            ]
        ),
        transform_answer([("object", "white paper sheet", (300, 300, 700, 700))]),
        transform_answer([("object", "left paper corner", (260, 340, 420, 500))]),
        transform_answer([("object", "paper pocket", (380, 380, 620, 640))]),
    ]
    rotations = [rotation_answer("bottom paper flap", (350, 600, 650, 820), "Z", "Positive")]
    relevances = []
    queries = {prompt: [("origami_goal.png", png_bytes(color(10)))]}
    for i, step in enumerate(steps):
        files = [
            (f"origami_s{i}_a.png", png_bytes(color(i + 11, 0))),
            (f"origami_s{i}_b.png", png_bytes(color(i + 11, 1))),
        ]
        queries[step_query(step, goal)] = files
        relevances += [
            relevance(0.85, "matches the fold state"),
            relevance(0.2, "different origami model"),
        ]
    voice = [
        json.dumps(
            {
                "answer": "Start from the half fold, then bring all four corners to the "
                "center to form the diamond base.",
                "updatedViz": None,
            }
        )
    ]
    # depth hole at the projected center of the first target box makes the
    # engine take the box-median fallback path
    return {
        "name": "origami",
        "prompt": prompt,
        "responses": {
            PromptKind.INITIAL_PLAN: [
                plan_response(goal, steps, steps[0], specs[0], domains, step_viz)
            ],
            PromptKind.DURING_TASK: fragments,
            PromptKind.TRANSFORM_LOCALIZE: transforms,
            PromptKind.ROTATION_LOCALIZE: rotations,
            PromptKind.RELEVANCE_SCORE: relevances,
            PromptKind.SUBPLAN_REQUEST: [subplan],
            PromptKind.VOICE_ANSWER: voice,
        },
        "media_queries": queries,
        "extra_files": {},
        "seg_boxes": {
            "white paper sheet": [300, 300, 700, 700],
            "top paper corners": [250, 150, 480, 360],
        },
        "signals": [],
        "frames": [frame_wire(color(50), depth_holes=[(32, 24)])],
        "script": [
            {"action": "SendFrame", "index": 0},
            {"action": "Verify"},
            {"action": "Verify"},
            {"action": "Verify"},
            {"action": "Verify"},
            {"action": "Verify"},
            {"action": "Verify"},
            {"action": "Voice", "text": "How could I fold this paper to a diamond shape?"},
            {"action": "Verify"},
        ],
        "expectations": [
            {"kind": "PlanHasSteps", "min": 3, "max": 12},
            {"kind": "StepTypes", "include": ["V2R"]},
            {"kind": "VerifyResult", "step": 1, "occurrence": 0, "success": False},
            {"kind": "VizRevisedAt", "step": 1, "objectViz": "ShapePreview", "actionViz": "Gesture"},
            {"kind": "SubPlanInsertedAt", "step": 1, "count": 2},
            {"kind": "DirectiveKindAt", "step": 2, "contains": ["ArrowRotation"]},
            {
                "kind": "AudioCue",
                "sequence": ["Correct", "Error", "Error", "Correct", "Correct", "Correct", "Correct"],
            },
            {"kind": "VerifiedCount", "success": True, "count": 5},
            {"kind": "EventCount", "event": "VerificationResult", "count": 7},
            {"kind": "VerifiedStepCount", "count": 6},
            {"kind": "VoiceAnswered", "count": 1, "vizUpdated": False},
            {"kind": "FinalStatus", "status": "Done"},
        ],
    }


def gaming_scenario() -> dict:
    goal = "Craft a stone axe in the survival game"
    prompt = "How to craft a stone axe in the survival game?"
    steps = [
        "Open the crafting menu",
        "Select the stone axe recipe",
        "Press the craft button",
        "Equip the axe from the inventory",
    ]
    specs = [
        viz("Outline", "Tool", ["mouseclick"], [("target", "Crafting button")]),
        viz("Outline", "Tool", ["mouseclick"], [("target", "Stone axe icon in Leftside UI")]),
        viz("Outline", "Tool", ["mouseclick"], [("target", "Craft button text")]),
        viz("Outline", "Gesture", ["drag"], [("target", "Stone axe in inventory bar")]),
    ]
    domains = [["Virtual", "Virtual"]] * 4
    fragments = [
        fragment(True, steps[1], "", specs[1]),
        fragment(True, "", "", specs[3]),
    ]
    transforms = [
        transform_answer([("object", "Crafting button", (40, 60, 200, 140))]),
        transform_answer([("object", "Stone axe icon in Leftside UI", (60, 300, 180, 420))]),
        transform_answer([("object", "Craft button text", (600, 700, 840, 780))]),
        transform_answer([("object", "Stone axe in inventory bar", (420, 860, 520, 960))]),
    ]
    clip = json.dumps(
        {
            "duration": 10.0,
            "frames": [
                {"t": 0.0, "file": "gaming_clip_f0.png"},
                {"t": 5.0, "file": "gaming_clip_f1.png"},
                {"t": 10.0, "file": "gaming_clip_f2.png"},
            ],
        }
    ).encode()
    queries = {prompt: [("gaming_goal.png", png_bytes(color(20)))]}
    relevances = []
    for i, step in enumerate(steps[:3]):
        files = [
            (f"gaming_s{i}_a.png", png_bytes(color(i + 21, 0))),
            (f"gaming_s{i}_b.png", png_bytes(color(i + 21, 1))),
        ]
        queries[step_query(step, goal)] = files
        relevances += [
            relevance(0.8, "shows the right menu"),
            relevance(0.1, "different game"),
        ]
    # the last step has no usable stills: one off-topic image plus a clip,
    # which forces the keyframe-extraction fallback
    queries[step_query(steps[3], goal)] = [
        ("gaming_s3_low.png", png_bytes(color(24, 0))),
        ("gaming.clip.json", clip),
    ]
    relevances += [
        relevance(0.2, "loading screen"),
        relevance(0.3, "menu closed"),
        relevance(0.9, "inventory drag shown"),
        relevance(0.4, "wrong item"),
    ]
    return {
        "name": "gaming",
        "prompt": prompt,
        "responses": {
            PromptKind.INITIAL_PLAN: [
                plan_response(goal, steps, steps[0], specs[0], domains, specs)
            ],
            PromptKind.DURING_TASK: fragments,
            PromptKind.TRANSFORM_LOCALIZE: transforms,
            PromptKind.RELEVANCE_SCORE: relevances,
        },
        "media_queries": queries,
        "extra_files": {
            "gaming_clip_f0.png": png_bytes(color(25, 0)),
            "gaming_clip_f1.png": png_bytes(color(25, 1)),
            "gaming_clip_f2.png": png_bytes(color(25, 2)),
        },
        "seg_boxes": {},
        "signals": [{"step": 2, "token": "craft-done"}],
        "frames": [frame_wire(color(60)), frame_wire(color(61))],
        "script": [
            {"action": "SendFrame", "index": 0},
            {"action": "Verify"},
            {"action": "Skip", "index": 1, "reason": "recipe already selected"},
            {"action": "SendFrame", "index": 1},
            {"action": "FireSignal", "token": "craft-done"},
            {"action": "Verify"},
        ],
        "expectations": [
            {"kind": "PlanHasSteps", "min": 3, "max": 12},
            {"kind": "StepTypes", "include": ["V2V"]},
            {"kind": "VerifyResult", "step": 2, "success": True, "modelCalled": False},
            {"kind": "EventCount", "event": "SkipCommand", "count": 1},
            {"kind": "AudioCue", "cue": "Correct", "count": 3},
            {"kind": "VerifiedStepCount", "count": 3},
            {"kind": "FinalStatus", "status": "Done"},
        ],
    }


def painting_scenario() -> dict:
    goal = "Paint a cartoon character in the drawing app"
    prompt = "How to paint a cartoon character in the drawing app?"
    steps = [
        "Sketch the character outline with the pencil tool",
        "Fill the base colors with the bucket tool",
        "Add shading strokes with the soft brush",
        "Export the finished painting",
    ]
    specs = [
        viz("Outline", "Tool", ["mouseclick"], [("target", "Pencil tool icon")]),
        viz("Outline", "Tool", ["mouseclick"], [("target", "Bucket tool icon")]),
        viz("Outline", "Gesture", ["drag"], [("target", "Soft brush icon")]),
        viz("Outline", "Tool", ["mouseclick"], [("target", "Export button")]),
    ]
    revised_s1 = viz("Outline", "Gesture", ["poke"], [("target", "Bucket tool icon")])
    voice_viz = viz("Outline", None, [], [("target", "Brush size slider")])
    domains = [["Real", "Virtual"]] * 4
    fragments = [
        fragment(True, steps[1], "", specs[1]),
        fragment(
            False,
            steps[1] + " / tap the fill region again",
            "Zoom into the canvas to confirm the fill colors",
            revised_s1,
        ),
        fragment(True, steps[2], "", specs[2]),
        fragment(True, steps[3], "", specs[3]),
        fragment(True, "", "", specs[3]),
    ]
    transforms = [
        transform_answer([("object", "Pencil tool icon", (30, 100, 110, 180))]),
        transform_answer([("object", "Bucket tool icon", (30, 220, 110, 300))]),
        transform_answer([("object", "Bucket tool icon", (30, 220, 110, 300))]),
        transform_answer([("object", "Soft brush icon", (30, 340, 110, 420))]),
        transform_answer([("object", "Brush size slider", (140, 40, 860, 90))]),
        transform_answer([("object", "Export button", (760, 40, 960, 110))]),
    ]
    voice = [
        json.dumps(
            {
                "answer": "Use a medium 20 px soft brush so the shading stays smooth.",
                "updatedViz": voice_viz,
            }
        )
    ]
    queries = {prompt: [("painting_goal.png", png_bytes(color(30)))]}
    relevances = []
    for i, step in enumerate(steps):
        files = [
            (f"painting_s{i}_a.png", png_bytes(color(i + 31, 0))),
            (f"painting_s{i}_b.png", png_bytes(color(i + 31, 1))),
        ]
        queries[step_query(step, goal)] = files
        relevances += [
            relevance(0.75, "shows the tool in use"),
            relevance(0.35, "different app layout"),
        ]
    return {
        "name": "painting",
        "prompt": prompt,
        "responses": {
            PromptKind.INITIAL_PLAN: [
                plan_response(goal, steps, steps[0], specs[0], domains, specs)
            ],
            PromptKind.DURING_TASK: fragments,
            PromptKind.TRANSFORM_LOCALIZE: transforms,
            PromptKind.RELEVANCE_SCORE: relevances,
            PromptKind.VOICE_ANSWER: voice,
        },
        "media_queries": queries,
        "extra_files": {},
        "seg_boxes": {},
        "signals": [],
        "frames": [frame_wire(color(70))],
        "script": [
            {"action": "SendFrame", "index": 0},
            {"action": "Verify"},
            {"action": "Verify"},
            {"action": "Verify"},
            {"action": "Voice", "text": "Which brush size should I use for shading?"},
            {"action": "Verify"},
            {"action": "Verify"},
        ],
        "expectations": [
            {"kind": "PlanHasSteps", "min": 3, "max": 12},
            {"kind": "StepTypes", "include": ["R2V"]},
            {"kind": "VizRevisedAt", "step": 1, "objectViz": "Outline", "actionViz": "Gesture"},
            {"kind": "VoiceAnswered", "count": 1, "vizUpdated": True},
            {"kind": "AudioCue", "sequence": ["Correct", "Error", "Correct", "Correct", "Correct"]},
            {"kind": "FinalStatus", "status": "Done"},
        ],
    }


def special_rule_scenario() -> dict:
    goal = "Slide the toaster lever down to start toasting"
    prompt = "How to start the toaster?"
    steps = [
        "Locate the toaster lever",
        "Slide the lever down until it locks",
        "Check that the bread lowers into the slots",
    ]
    lever_viz = viz(
        "ShapePreview",
        "Arrow",
        ["translation"],
        [("target", "toaster lever"), ("endtarget", "lever bottom position")],
        needs_translation=True,
    )
    check_viz = viz("Outline", None, [], [("target", "bread slots")])
    domains = [["Real", "Real"]] * 3
    fragments = [
        fragment(True, steps[2], "", check_viz),
        fragment(True, "", "", check_viz),
    ]
    transforms = [
        transform_answer(
            [
                ("starttarget", "toaster lever", (440, 200, 560, 320)),
                ("endtarget", "lever bottom position", (440, 520, 560, 640)),
            ]
        ),
        transform_answer([("object", "bread slots", (300, 120, 700, 300))]),
    ]
    queries = {prompt: [("toaster_goal.png", png_bytes(color(45)))]}
    relevances = []
    for i, step in enumerate(steps[1:], start=1):
        files = [
            (f"toaster_s{i}_a.png", png_bytes(color(i + 46, 0))),
            (f"toaster_s{i}_b.png", png_bytes(color(i + 46, 1))),
        ]
        queries[step_query(step, goal)] = files
        relevances += [
            relevance(0.9, "lever clearly visible"),
            relevance(0.25, "different appliance"),
        ]
    return {
        "name": "special_rule",
        "prompt": prompt,
        "responses": {
            PromptKind.INITIAL_PLAN: [
                plan_response(goal, steps, steps[1], lever_viz, domains, [None, lever_viz, check_viz])
            ],
            PromptKind.DURING_TASK: fragments,
            PromptKind.TRANSFORM_LOCALIZE: transforms,
            PromptKind.RELEVANCE_SCORE: relevances,
        },
        "media_queries": queries,
        "extra_files": {},
        "seg_boxes": {"toaster lever": [440, 200, 560, 320]},
        "signals": [],
        "frames": [frame_wire(color(80))],
        "script": [
            {"action": "SendFrame", "index": 0},
            {"action": "Verify"},
            {"action": "Verify"},
        ],
        "expectations": [
            {"kind": "PlanHasSteps", "min": 3, "max": 12},
            {"kind": "StepTypes", "include": ["R2R"]},
            {
                "kind": "DirectiveKindAt",
                "step": 1,
                "contains": ["StatePanel", "AnimatedShapePreview"],
                "forbids": ["ArrowTranslation", "ArrowRotation", "ShapePreview"],
                "exactCount": {"AnimatedShapePreview": 1, "StatePanel": 1},
            },
            {"kind": "AudioCue", "cue": "Correct", "count": 2},
            {"kind": "FinalStatus", "status": "Done"},
        ],
    }


# ---------------------------------------------------------------------------
# Catalog and labels
# ---------------------------------------------------------------------------


def write_catalog() -> None:
    if CATALOG_DIR.exists():
        shutil.rmtree(CATALOG_DIR)
    CATALOG_DIR.mkdir(parents=True)
    tokens = ["grip", "pinch", "press", "mouseclick", "drag", "fold", "open", "poke"]
    mapping = {}
    for i, token in enumerate(tokens):
        fname = f"{token}.png"
        (CATALOG_DIR / fname).write_bytes(png_bytes(color(90 + i), 16, 16))
        mapping[token] = fname
    (CATALOG_DIR / "overlays.json").write_text(json.dumps(mapping, indent=2), encoding="utf-8")


def write_labels() -> None:
    """Step labels matching the published per-metric counts, plus latency calls."""
    LABELS_DIR.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20260808)
    n = 51
    task_sizes = [6, 7, 6, 6, 7, 6, 7, 6]
    tasks = []
    for t, size in enumerate(task_sizes):
        tasks += [f"task{t + 1}"] * size
    metric_false = {
        "textInstruction": 6,
        "visualType": 10,
        "keyComponent": 5,
        "imageRelevance": 12,
        "verification": 9,
        "overall": 13,
    }
    false_sets = {}
    for key, count in metric_false.items():
        false_sets[key] = set(rng.sample(range(n), count))
    type_presence = {
        "targetConfigPreview": (13, 11),
        "motion": (24, 20),
        "staticObject": (38, 32),
        "action": (33, 28),
    }
    presence_sets = {}
    wrong_sets = {}
    for key, (present, correct) in type_presence.items():
        rows = rng.sample(range(n), present)
        presence_sets[key] = set(rows)
        wrong_sets[key] = set(rng.sample(rows, present - correct))
    steps = []
    idx_within = {}
    for i in range(n):
        task = tasks[i]
        idx_within[task] = idx_within.get(task, -1) + 1
        row = {
            "task": task,
            "index": idx_within[task],
            "textInstruction": i not in false_sets["textInstruction"],
            "visualType": i not in false_sets["visualType"],
            "keyComponent": i not in false_sets["keyComponent"],
            "imageRelevance": i not in false_sets["imageRelevance"],
            "verification": i not in false_sets["verification"],
            "overall": i not in false_sets["overall"],
            "categories": {},
        }
        for key in type_presence:
            if i in presence_sets[key]:
                row["categories"][key] = i not in wrong_sets[key]
        steps.append(row)

    # component rows: (type, component, flash latency, pro latency, count)
    components = [
        ("targetConfigPreview", "2dBox", 2.85, 20.83, 3),
        ("motion", "translation", 2.81, 16.19, 3),
        ("motion", "rotation", 3.65, 20.23, 4),
        ("staticObject", "2dBox", 3.83, 23.29, 3),
        ("action", "tool", 4.65, 28.72, 8),
        ("action", "gesture", 2.68, 19.89, 5),
    ]
    calls = []
    for type_name, component, flash_lat, pro_lat, count in components:
        for profile, lat in (("flash", flash_lat), ("pro", pro_lat)):
            for k in range(count):
                calls.append(
                    {
                        "type": type_name,
                        "component": component,
                        "profile": profile,
                        "latency": lat,
                        "correct": k != 0 or rng.random() < 0.8,
                    }
                )
    out = {"steps": steps, "localization": calls}
    (LABELS_DIR / "steps.json").write_text(json.dumps(out, indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def write_scenario(defn: dict) -> Path:
    SCENARIOS_DIR.mkdir(parents=True, exist_ok=True)
    write_media(defn["name"], defn["media_queries"], defn["extra_files"])
    doc = {
        "name": defn["name"],
        "prompt": defn["prompt"],
        "frames": defn["frames"],
        "script": defn["script"],
        "fixtures": f"../fixtures/{defn['name']}",
        "mediaManifest": f"../media/{defn['name']}/manifest.json",
        "segBoxes": defn["seg_boxes"],
        "signals": defn["signals"],
        "expectations": defn["expectations"],
    }
    path = SCENARIOS_DIR / f"{defn['name']}.json"
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def record_scenario(defn: dict, path: Path) -> None:
    fixture_dir = FIXTURES_DIR / defn["name"]
    if fixture_dir.exists():
        shutil.rmtree(fixture_dir)
    fixture_dir.mkdir(parents=True)
    scenario = Scenario.load(path)
    clock = FakeClock()
    transport = ScriptedTransport(defn["responses"], clock)
    with tempfile.TemporaryDirectory() as tmp:
        report = run_scenario(
            scenario, Path(tmp) / "rec", mode="record", transport=transport, gateway_clock=clock
        )
    if not report.passed:
        raise SystemExit(f"{defn['name']}: record run failed expectations: {report.failures}")
    leftovers = transport.leftovers()
    if leftovers:
        raise SystemExit(f"{defn['name']}: unconsumed scripted responses: {leftovers}")
    with tempfile.TemporaryDirectory() as tmp:
        replay1 = run_scenario(scenario, Path(tmp) / "r1")
    with tempfile.TemporaryDirectory() as tmp:
        replay2 = run_scenario(scenario, Path(tmp) / "r2")
    if not replay1.passed:
        raise SystemExit(f"{defn['name']}: replay failed: {replay1.failures}")
    if replay1.directive_digest != replay2.directive_digest:
        raise SystemExit(f"{defn['name']}: replay not deterministic")
    if replay1.directive_digest != report.directive_digest:
        raise SystemExit(f"{defn['name']}: replay diverges from record run")
    print(f"  {defn['name']}: ok ({report.final_status}, digest {report.directive_digest[:12]})")


def main() -> None:
    print("writing catalog and labels ...")
    write_catalog()
    write_labels()
    print("building scenarios ...")
    for builder in (
        coffee_scenario,
        origami_scenario,
        gaming_scenario,
        painting_scenario,
        special_rule_scenario,
    ):
        defn = builder()
        path = write_scenario(defn)
        record_scenario(defn, path)
    print("done.")


if __name__ == "__main__":
    main()
