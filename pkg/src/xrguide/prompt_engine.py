"""Render the engine's prompt templates and parse the model replies.

Templates live as text resources next to this module (one file per
PromptKind) so documentation and code share a single source of truth.
Rendering is pure: the same inputs always produce the same RenderedPrompt
and the same context hash, which is what keys the record/replay store.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .errors import (
    EmptyGoal,
    EmptyObjectName,
    MissingPriorResponse,
    OutOfRange,
    SchemaViolation,
    SubPlanTooLarge,
    SubPlanTooSmall,
)
from .plan_model import (
    DomainTag,
    PlannerResponseDoc,
    PlanStep,
    StepStatus,
    TaskPlan,
    TransformKindValues,
    VizSpec,
    build_plan,
    extract_json_items,
    extract_json_object,
    parse_viz,
    validate_viz,
    _as_dict,
    _as_list,
    _as_str,
    _require,
)


class PromptKind(str, Enum):
    INITIAL_PLAN = "InitialPlan"
    DURING_TASK = "DuringTask"
    ROTATION_LOCALIZE = "RotationLocalize"
    TRANSFORM_LOCALIZE = "TransformLocalize"
    RELEVANCE_SCORE = "RelevanceScore"
    VOICE_ANSWER = "VoiceAnswer"
    SUBPLAN_REQUEST = "SubPlanRequest"


_TEMPLATE_FILES = {
    PromptKind.INITIAL_PLAN: "initial_plan.txt",
    PromptKind.DURING_TASK: "during_task.txt",
    PromptKind.ROTATION_LOCALIZE: "rotation_localize.txt",
    PromptKind.TRANSFORM_LOCALIZE: "transform_localize.txt",
    PromptKind.RELEVANCE_SCORE: "relevance_score.txt",
    PromptKind.VOICE_ANSWER: "voice_answer.txt",
    PromptKind.SUBPLAN_REQUEST: "subplan_request.txt",
}


@lru_cache(maxsize=None)
def load_template(kind: PromptKind) -> str:
    return (
        resources.files("xrguide.templates").joinpath(_TEMPLATE_FILES[kind]).read_text("utf-8")
    )


@dataclass(frozen=True)
class RenderedPrompt:
    kind: PromptKind
    text: str
    attachments: tuple[str, ...] = ()  # content digests of attached images

    @property
    def context_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.value.encode())
        h.update(b"\x00")
        h.update(self.text.encode())
        for digest in self.attachments:
            h.update(b"\x00")
            h.update(digest.encode())
        return h.hexdigest()


class Axis(str, Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


class RotationDirection(str, Enum):
    POSITIVE = "Positive"
    NEGATIVE = "Negative"


@dataclass(frozen=True)
class RotationAnswer:
    name: str
    pos: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max in [0, 1000]
    axis: Axis
    direction: RotationDirection


@dataclass(frozen=True)
class TransformEntry:
    kind: str  # starttarget | endtarget | object
    name: str
    pos: tuple[int, int, int, int]


@dataclass(frozen=True)
class TransformAnswer:
    entries: tuple[TransformEntry, ...]

    def entry(self, kind: str) -> Optional[TransformEntry]:
        for e in self.entries:
            if e.kind == kind:
                return e
        return None


@dataclass(frozen=True)
class RelevanceAnswer:
    score: float
    reason: str


@dataclass(frozen=True)
class VoiceAnswer:
    answer: str
    updated_viz: Optional[VizSpec]


@dataclass(frozen=True)
class SubStepSpec:
    instruction: str
    check: str
    viz: VizSpec


@dataclass(frozen=True)
class SubPlanAnswer:
    substeps: tuple[SubStepSpec, ...]


# -------------------------------------------------------------------------
# Rendering
# -------------------------------------------------------------------------


def render_initial_prompt(user_goal: str, reference_images: Sequence[str] = ()) -> RenderedPrompt:
    if not user_goal or not user_goal.strip():
        raise EmptyGoal("user goal is empty")
    text = load_template(PromptKind.INITIAL_PLAN).replace("{goal}", user_goal.strip())
    return RenderedPrompt(PromptKind.INITIAL_PLAN, text, tuple(reference_images))


def render_during_task_prompt(
    active: PlanStep, prior: PlannerResponseDoc | dict | None, frame_digest: str
) -> RenderedPrompt:
    if prior is None:
        raise MissingPriorResponse("during-task prompt needs the prior plannerResponse")
    if active.status is not StepStatus.AWAITING_VERIFICATION:
        raise ValueError(f"step {active.index} is {active.status.value}, not AwaitingVerification")
    if isinstance(prior, PlannerResponseDoc):
        prior_wire = prior.to_wire()["plannerResponse"]
    else:
        prior_wire = prior
    text = (
        load_template(PromptKind.DURING_TASK)
        .replace("{step_instruction}", active.instruction)
        .replace("{verification_rule}", active.verification_rule or "step looks completed")
        .replace("{prior_response}", json.dumps(prior_wire, ensure_ascii=False, indent=2))
    )
    return RenderedPrompt(PromptKind.DURING_TASK, text, (frame_digest,))


def render_rotation_prompt(object_name: str, frames: Sequence[str]) -> RenderedPrompt:
    if not object_name or not object_name.strip():
        raise EmptyObjectName("rotation prompt needs an object name")
    if not frames:
        raise ValueError("rotation prompt needs at least one frame")
    text = load_template(PromptKind.ROTATION_LOCALIZE).replace("{objectName}", object_name)
    return RenderedPrompt(PromptKind.ROTATION_LOCALIZE, text, tuple(frames))


def render_transform_prompt(object_name: str, frames: Sequence[str]) -> RenderedPrompt:
    if not object_name or not object_name.strip():
        raise EmptyObjectName("transform prompt needs an object name")
    if not frames:
        raise ValueError("transform prompt needs at least one frame")
    text = load_template(PromptKind.TRANSFORM_LOCALIZE).replace("{objectName}", object_name)
    return RenderedPrompt(PromptKind.TRANSFORM_LOCALIZE, text, tuple(frames))


def render_relevance_prompt(step: str, image_digest: str) -> RenderedPrompt:
    text = load_template(PromptKind.RELEVANCE_SCORE).replace("{step}", step)
    return RenderedPrompt(PromptKind.RELEVANCE_SCORE, text, (image_digest,))


def render_voice_prompt(
    goal: str, step_instruction: str, question: str, frame_digest: Optional[str]
) -> RenderedPrompt:
    text = (
        load_template(PromptKind.VOICE_ANSWER)
        .replace("{goal}", goal)
        .replace("{step_instruction}", step_instruction)
        .replace("{question}", question)
    )
    attachments = (frame_digest,) if frame_digest else ()
    return RenderedPrompt(PromptKind.VOICE_ANSWER, text, attachments)


def render_subplan_prompt(
    step_instruction: str, failure_reason: str, frame_digest: Optional[str]
) -> RenderedPrompt:
    text = (
        load_template(PromptKind.SUBPLAN_REQUEST)
        .replace("{step_instruction}", step_instruction)
        .replace("{failure_reason}", failure_reason or "state did not match the expected outcome")
    )
    attachments = (frame_digest,) if frame_digest else ()
    return RenderedPrompt(PromptKind.SUBPLAN_REQUEST, text, attachments)


# -------------------------------------------------------------------------
# Response parsing
# -------------------------------------------------------------------------


def _parse_pos(value, path: str) -> tuple[int, int, int, int]:
    pos = _as_list(value, path)
    if len(pos) != 4:
        raise SchemaViolation(path, f"expected 4 coordinates, got {len(pos)}")
    coords = []
    for i, c in enumerate(pos):
        if isinstance(c, bool) or not isinstance(c, int):
            raise SchemaViolation(f"{path}[{i}]", f"expected int, got {type(c).__name__}")
        if not (0 <= c <= 1000):
            raise OutOfRange(f"{path}[{i}]", c)
        coords.append(c)
    x_min, y_min, x_max, y_max = coords
    if x_min > x_max:
        raise SchemaViolation(path, f"x_min {x_min} > x_max {x_max}")
    if y_min > y_max:
        raise SchemaViolation(path, f"y_min {y_min} > y_max {y_max}")
    return (x_min, y_min, x_max, y_max)


def parse_rotation_answer(raw: str) -> RotationAnswer:
    obj = _as_dict(extract_json_object(raw), "$")
    name = _as_str(_require(obj, "name", ""), "name")
    pos = _parse_pos(_require(obj, "pos", ""), "pos")
    rotation = _as_list(_require(obj, "rotation", ""), "rotation")
    if len(rotation) != 2:
        raise SchemaViolation("rotation", f"expected [axis, direction], got {rotation!r}")
    axis_raw = _as_str(rotation[0], "rotation[0]")
    if axis_raw not in ("X", "Y", "Z"):
        raise SchemaViolation("rotation[0]", f"invalid axis {axis_raw!r}")
    dir_raw = _as_str(rotation[1], "rotation[1]")
    if dir_raw not in ("Positive", "Negative"):
        raise SchemaViolation("rotation[1]", f"invalid direction {dir_raw!r}")
    return RotationAnswer(name=name, pos=pos, axis=Axis(axis_raw), direction=RotationDirection(dir_raw))


def parse_transform_answer(raw: str) -> TransformAnswer:
    entries = []
    for i, item in enumerate(extract_json_items(raw)):
        path = f"[{i}]"
        obj = _as_dict(item, path)
        kind = _as_str(_require(obj, "type", path), f"{path}.type")
        if kind not in TransformKindValues:
            raise SchemaViolation(f"{path}.type", f"invalid entry type {kind!r}")
        name = _as_str(_require(obj, "name", path), f"{path}.name")
        pos = _parse_pos(_require(obj, "pos", path), f"{path}.pos")
        entries.append(TransformEntry(kind=kind, name=name, pos=pos))
    return TransformAnswer(entries=tuple(entries))


def parse_relevance_answer(raw: str) -> RelevanceAnswer:
    obj = _as_dict(extract_json_object(raw), "$")
    score = _require(obj, "score", "")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise SchemaViolation("score", f"expected number, got {type(score).__name__}")
    if not (0.0 <= float(score) <= 1.0):
        raise SchemaViolation("score", f"score {score} outside [0, 1]")
    reason = _as_str(obj.get("reason", ""), "reason")
    return RelevanceAnswer(score=float(score), reason=reason)


def parse_voice_answer(raw: str) -> VoiceAnswer:
    obj = _as_dict(extract_json_object(raw), "$")
    answer = _as_str(_require(obj, "answer", ""), "answer")
    updated = obj.get("updatedViz")
    viz = None
    if isinstance(updated, dict):
        viz = parse_viz(updated, "updatedViz")
        violations = validate_viz(viz)
        if violations:
            raise SchemaViolation(
                "updatedViz", "invariant violations: " + ", ".join(v.value for v in violations)
            )
    elif updated is not None:
        raise SchemaViolation("updatedViz", f"expected object or null, got {type(updated).__name__}")
    return VoiceAnswer(answer=answer, updated_viz=viz)


SUBPLAN_MIN = 2
SUBPLAN_MAX = 5


def parse_subplan_answer(raw: str) -> SubPlanAnswer:
    obj = _as_dict(extract_json_object(raw), "$")
    items = _as_list(_require(obj, "substeps", ""), "substeps")
    if len(items) > SUBPLAN_MAX:
        raise SubPlanTooLarge(f"{len(items)} substeps > {SUBPLAN_MAX}")
    if len(items) < SUBPLAN_MIN:
        raise SubPlanTooSmall(f"{len(items)} substeps < {SUBPLAN_MIN}")
    substeps = []
    for i, item in enumerate(items):
        path = f"substeps[{i}]"
        entry = _as_dict(item, path)
        instruction = _as_str(_require(entry, "instruction", path), f"{path}.instruction")
        check = _as_str(entry.get("check", ""), f"{path}.check")
        viz = parse_viz(_require(entry, "viz", path), f"{path}.viz")
        violations = validate_viz(viz)
        if violations:
            raise SchemaViolation(
                f"{path}.viz", "invariant violations: " + ", ".join(v.value for v in violations)
            )
        substeps.append(SubStepSpec(instruction=instruction, check=check, viz=viz))
    return SubPlanAnswer(substeps=tuple(substeps))


# -------------------------------------------------------------------------
# Plan synthesis
# -------------------------------------------------------------------------


def domain_tags_from_doc(doc: PlannerResponseDoc) -> Optional[list[tuple[DomainTag, DomainTag]]]:
    """Pull the per-step domain tags out of the document's stepDomains extra."""
    raw = doc.extra.get("stepDomains")
    if not isinstance(raw, list):
        return None
    tags: list[tuple[DomainTag, DomainTag]] = []
    for entry in raw:
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or entry[0] not in ("Real", "Virtual")
            or entry[1] not in ("Real", "Virtual")
        ):
            return None
        tags.append((DomainTag(entry[0]), DomainTag(entry[1])))
    return tags


def step_viz_from_doc(doc: PlannerResponseDoc) -> Optional[list[Optional[VizSpec]]]:
    """Pull optional per-step specs out of the document's stepViz extra.

    Each entry is a viz object or null; a malformed entry is a SchemaViolation
    (the planner was asked for this format, so we do not guess).
    """
    raw = doc.extra.get("stepViz")
    if not isinstance(raw, list):
        return None
    specs: list[Optional[VizSpec]] = []
    for i, entry in enumerate(raw):
        if entry is None:
            specs.append(None)
            continue
        spec = parse_viz(entry, f"stepViz[{i}]")
        violations = validate_viz(spec)
        if violations:
            raise SchemaViolation(
                f"stepViz[{i}]", "invariant violations: " + ", ".join(v.value for v in violations)
            )
        specs.append(spec)
    return specs


def synthesize_plan(
    doc: PlannerResponseDoc,
    domain_tags: Optional[list[tuple[DomainTag, DomainTag]]] = None,
) -> TaskPlan:
    """Build a TaskPlan from a validated document.

    Domain tags may be passed explicitly or carried in the document's
    stepDomains field; without either, steps default to R2R and are flagged.
    Per-step specs come from the optional stepViz field.
    """
    if domain_tags is None:
        domain_tags = domain_tags_from_doc(doc)
    return build_plan(doc, domain_tags, step_viz_from_doc(doc))
