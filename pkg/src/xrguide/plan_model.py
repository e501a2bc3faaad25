"""Task-plan domain types and strict parsing of the planner wire format.

The planner speaks a camelCase JSON document::

    {
      "goal": "...",
      "steps": ["...", ...],
      "plannerResponse": {
        "next": "...", "check": "", "success": false,
        "viz": {
          "objectViz": "Outline|ShapePreview",
          "actionViz": "Arrow|Gesture|Tool|null",
          "actionType": ["rotation", ...],
          "needsTranslation": bool, "needsRotation": bool,
          "waypoints": [{"type": "target", "objectName": "..."}]
        }
      }
    }

Parsing is deliberately unforgiving: unknown enum values, banned object
names, and type mismatches are SchemaViolation, never silently repaired.
Unknown *extra* keys are preserved so documents round-trip.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional

from .errors import AmbiguousNext, NoJsonFound, SchemaViolation

SUBSTEP_SEPARATOR = " / "

# Object names the planner must never emit; they defeat localization.
BANNED_OBJECT_NAMES = frozenset({"prompt", "area"})

OBJECT_VIZ_VALUES = ("Outline", "ShapePreview")
ACTION_VIZ_VALUES = ("Arrow", "Gesture", "Tool")
WAYPOINT_KINDS = ("target", "endtarget", "starttarget", "object")
TransformKindValues = ("starttarget", "endtarget", "object")


class DomainTag(str, Enum):
    """Whether a referent or action lives in the physical or virtual layer."""

    REAL = "Real"
    VIRTUAL = "Virtual"


class StepType(str, Enum):
    """Cross-reality classification of one step: referent domain to action domain."""

    R2R = "R2R"
    R2V = "R2V"
    V2R = "V2R"
    V2V = "V2V"


class StepStatus(str, Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    AWAITING_VERIFICATION = "AwaitingVerification"
    COMPLETED = "Completed"
    FAILED = "Failed"


class ObjectViz(str, Enum):
    OUTLINE = "Outline"
    SHAPE_PREVIEW = "ShapePreview"


class ActionViz(str, Enum):
    ARROW = "Arrow"
    GESTURE = "Gesture"
    TOOL = "Tool"


class WaypointKind(str, Enum):
    TARGET = "target"
    END_TARGET = "endtarget"
    START_TARGET = "starttarget"
    OBJECT = "object"


def classify_step(referent: DomainTag, action: DomainTag) -> StepType:
    """Map a (referent domain, action domain) pair onto its step type."""
    table = {
        (DomainTag.REAL, DomainTag.REAL): StepType.R2R,
        (DomainTag.REAL, DomainTag.VIRTUAL): StepType.R2V,
        (DomainTag.VIRTUAL, DomainTag.REAL): StepType.V2R,
        (DomainTag.VIRTUAL, DomainTag.VIRTUAL): StepType.V2V,
    }
    return table[(referent, action)]


@dataclass(frozen=True)
class Waypoint:
    """A named localization target inside a step's visualization spec."""

    kind: WaypointKind
    object_name: str
    extra: dict = field(default_factory=dict, compare=False)

    def to_wire(self) -> dict:
        d = {"type": self.kind.value, "objectName": self.object_name}
        d.update(self.extra)
        return d


@dataclass(frozen=True)
class VizSpec:
    """Per-step visualization strategy: one object cue plus at most one action cue."""

    object_viz: ObjectViz
    action_viz: Optional[ActionViz]
    action_types: tuple[str, ...] = ()
    needs_translation: bool = False
    needs_rotation: bool = False
    waypoints: tuple[Waypoint, ...] = ()
    extra: dict = field(default_factory=dict, compare=False)

    def waypoint(self, kind: WaypointKind) -> Optional[Waypoint]:
        for wp in self.waypoints:
            if wp.kind is kind:
                return wp
        return None

    def to_wire(self) -> dict:
        d = {
            "objectViz": self.object_viz.value,
            "actionViz": self.action_viz.value if self.action_viz else None,
            "actionType": list(self.action_types),
            "needsTranslation": self.needs_translation,
            "needsRotation": self.needs_rotation,
            "waypoints": [wp.to_wire() for wp in self.waypoints],
        }
        d.update(self.extra)
        return d


@dataclass
class StepOrigin:
    """Original planner step, or a runtime substep spliced under a parent."""

    kind: str  # "original" | "substep"
    parent_index: Optional[int] = None

    @classmethod
    def original(cls) -> "StepOrigin":
        return cls(kind="original")

    @classmethod
    def substep(cls, parent_index: int) -> "StepOrigin":
        return cls(kind="substep", parent_index=parent_index)

    @property
    def is_original(self) -> bool:
        return self.kind == "original"


@dataclass
class PlanStep:
    index: int
    instruction: str
    verification_rule: str = ""
    step_type: StepType = StepType.R2R
    status: StepStatus = StepStatus.PENDING
    origin: StepOrigin = field(default_factory=StepOrigin.original)
    viz: Optional[VizSpec] = None
    step_type_defaulted: bool = False  # True when no domain tags were supplied
    skipped: bool = False

    @property
    def terminal(self) -> bool:
        return self.status in (StepStatus.COMPLETED, StepStatus.FAILED)


@dataclass
class TaskPlan:
    goal: str
    steps: list[PlanStep]
    active_index: Optional[int] = None
    warnings: list[str] = field(default_factory=list)

    def original_steps(self) -> list[PlanStep]:
        return [s for s in self.steps if s.origin.is_original]

    def substeps_of(self, parent_index: int) -> list[PlanStep]:
        return [
            s
            for s in self.steps
            if not s.origin.is_original and s.origin.parent_index == parent_index
        ]

    def step_at(self, index: int) -> PlanStep:
        for s in self.steps:
            if s.index == index:
                return s
        raise IndexError(f"no step with index {index}")

    def position_of(self, index: int) -> int:
        for pos, s in enumerate(self.steps):
            if s.index == index:
                return pos
        raise IndexError(f"no step with index {index}")


@dataclass(frozen=True)
class PlannerResponseDoc:
    """Validated form of the planner wire document (see module docstring)."""

    goal: str
    steps: tuple[str, ...]
    next: str
    check: str
    success: bool
    viz: VizSpec
    extra: dict = field(default_factory=dict, compare=False)
    planner_extra: dict = field(default_factory=dict, compare=False)

    def next_step_index(self) -> int:
        """Index of the step ``next`` refers to, honoring 'step / substep'."""
        for i, s in enumerate(self.steps):
            if self.next == s:
                return i
        for i, s in enumerate(self.steps):
            if self.next.startswith(s + SUBSTEP_SEPARATOR):
                return i
        raise AmbiguousNext(f"next {self.next!r} matches no step")

    def to_wire(self) -> dict:
        planner = {
            "next": self.next,
            "check": self.check,
            "success": self.success,
            "viz": self.viz.to_wire(),
        }
        planner.update(self.planner_extra)
        doc = {"goal": self.goal, "steps": list(self.steps), "plannerResponse": planner}
        doc.update(self.extra)
        return doc

    def serialize(self) -> str:
        return json.dumps(self.to_wire(), ensure_ascii=False, indent=2)


# -------------------------------------------------------------------------
# Violation report for VizSpec cross-field rules
# -------------------------------------------------------------------------


class VizViolation(str, Enum):
    MISSING_TARGET = "MissingTarget"
    MISSING_END_TARGET = "MissingEndTarget"
    BOTH_MOTION_FLAGS = "BothMotionFlags"


def validate_viz(spec: VizSpec) -> list[VizViolation]:
    """Check the cross-field rules a well-formed spec must satisfy.

    Empty report means valid. Rules:
      - at least one "target" waypoint;
      - Arrow + needsTranslation requires both target and endtarget;
      - Arrow + needsRotation requires a target (the rotation pivot host);
      - needsTranslation and needsRotation are mutually exclusive.
    """
    report: list[VizViolation] = []
    kinds = {wp.kind for wp in spec.waypoints}
    if WaypointKind.TARGET not in kinds:
        report.append(VizViolation.MISSING_TARGET)
    if spec.needs_translation and spec.needs_rotation:
        report.append(VizViolation.BOTH_MOTION_FLAGS)
    if spec.action_viz is ActionViz.ARROW and spec.needs_translation:
        if WaypointKind.END_TARGET not in kinds:
            report.append(VizViolation.MISSING_END_TARGET)
    return report


# -------------------------------------------------------------------------
# JSON extraction and strict field readers
# -------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def extract_json_object(raw: str) -> Any:
    """Locate and decode one JSON value from raw model text.

    Strategy, in order: whole-text parse; first fenced code block; first
    balanced top-level ``{...}``. No key repair happens here or later.
    """
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, ValueError):
        pass
    fenced = _FENCE_RE.search(raw)
    if fenced:
        try:
            return json.loads(fenced.group(1))
        except (json.JSONDecodeError, ValueError):
            pass
    candidate = _first_balanced_object(raw)
    if candidate is not None:
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            pass
    raise NoJsonFound("no parseable JSON object in text")


def _first_balanced_object(raw: str) -> Optional[str]:
    start = raw.find("{")
    while start != -1:
        depth = 0
        in_str = False
        esc = False
        for i in range(start, len(raw)):
            ch = raw[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
                continue
            if ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return raw[start : i + 1]
        start = raw.find("{", start + 1)
    return None


def extract_json_items(raw: str) -> list[Any]:
    """Decode a list of JSON objects: an array, one object, or several in sequence."""
    try:
        value = json.loads(raw)
        return value if isinstance(value, list) else [value]
    except (json.JSONDecodeError, ValueError):
        pass
    fenced = _FENCE_RE.search(raw)
    if fenced:
        return extract_json_items(fenced.group(1))
    items: list[Any] = []
    rest = raw
    while True:
        candidate = _first_balanced_object(rest)
        if candidate is None:
            break
        try:
            items.append(json.loads(candidate))
        except (json.JSONDecodeError, ValueError):
            break
        rest = rest[rest.find(candidate) + len(candidate) :]
    if not items:
        raise NoJsonFound("no parseable JSON items in text")
    return items


def _require(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise SchemaViolation(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _as_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaViolation(path, f"expected string, got {type(value).__name__}")
    return value


def _as_bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise SchemaViolation(path, f"expected boolean, got {type(value).__name__}")
    return value


def _as_dict(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaViolation(path, f"expected object, got {type(value).__name__}")
    return value


def _as_list(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaViolation(path, f"expected array, got {type(value).__name__}")
    return value


def parse_waypoint(obj: Any, path: str) -> Waypoint:
    obj = _as_dict(obj, path)
    kind_raw = _as_str(_require(obj, "type", path), f"{path}.type")
    if kind_raw not in WAYPOINT_KINDS:
        raise SchemaViolation(f"{path}.type", f"invalid waypoint type {kind_raw!r}")
    name = _as_str(_require(obj, "objectName", path), f"{path}.objectName")
    if not name.strip():
        raise SchemaViolation(f"{path}.objectName", "objectName is empty")
    if name.strip().lower() in BANNED_OBJECT_NAMES:
        raise SchemaViolation(f"{path}.objectName", f"banned ambiguous name {name!r}")
    extra = {k: v for k, v in obj.items() if k not in ("type", "objectName")}
    return Waypoint(kind=WaypointKind(kind_raw), object_name=name, extra=extra)


def parse_viz(obj: Any, path: str = "viz") -> VizSpec:
    obj = _as_dict(obj, path)
    object_viz_raw = _as_str(_require(obj, "objectViz", path), f"{path}.objectViz")
    if object_viz_raw not in OBJECT_VIZ_VALUES:
        raise SchemaViolation(f"{path}.objectViz", f"invalid objectViz {object_viz_raw!r}")

    action_viz_raw = obj.get("actionViz")
    action_viz: Optional[ActionViz]
    if action_viz_raw is None or action_viz_raw == "null":
        action_viz = None
    elif isinstance(action_viz_raw, str) and action_viz_raw in ACTION_VIZ_VALUES:
        action_viz = ActionViz(action_viz_raw)
    else:
        raise SchemaViolation(f"{path}.actionViz", f"invalid actionViz {action_viz_raw!r}")

    action_types: list[str] = []
    if "actionType" in obj:
        for i, token in enumerate(_as_list(obj["actionType"], f"{path}.actionType")):
            token = _as_str(token, f"{path}.actionType[{i}]")
            if not token.strip():
                raise SchemaViolation(f"{path}.actionType[{i}]", "empty action type token")
            action_types.append(token.strip().lower())

    needs_translation = _as_bool(obj.get("needsTranslation", False), f"{path}.needsTranslation")
    needs_rotation = _as_bool(obj.get("needsRotation", False), f"{path}.needsRotation")

    waypoints = [
        parse_waypoint(wp, f"{path}.waypoints[{i}]")
        for i, wp in enumerate(_as_list(_require(obj, "waypoints", path), f"{path}.waypoints"))
    ]

    known = {
        "objectViz",
        "actionViz",
        "actionType",
        "needsTranslation",
        "needsRotation",
        "waypoints",
    }
    extra = {k: v for k, v in obj.items() if k not in known}
    return VizSpec(
        object_viz=ObjectViz(object_viz_raw),
        action_viz=action_viz,
        action_types=tuple(action_types),
        needs_translation=needs_translation,
        needs_rotation=needs_rotation,
        waypoints=tuple(waypoints),
        extra=extra,
    )


def parse_plan_document(raw: str) -> PlannerResponseDoc:
    """Parse and validate a full planner document from raw model text.

    Tolerates markdown fences and surrounding prose. Raises NoJsonFound,
    SchemaViolation, or AmbiguousNext; never returns a half-valid document.
    """
    if not isinstance(raw, str):
        raise SchemaViolation("$", f"expected text, got {type(raw).__name__}")
    obj = extract_json_object(raw)
    obj = _as_dict(obj, "$")

    goal = _as_str(_require(obj, "goal", ""), "goal")
    steps_raw = _as_list(_require(obj, "steps", ""), "steps")
    steps = [_as_str(s, f"steps[{i}]") for i, s in enumerate(steps_raw)]
    for i, s in enumerate(steps):
        if not s.strip():
            raise SchemaViolation(f"steps[{i}]", "empty step instruction")

    planner = _as_dict(_require(obj, "plannerResponse", ""), "plannerResponse")
    next_text = _as_str(_require(planner, "next", "plannerResponse"), "plannerResponse.next")
    check = _as_str(planner.get("check", ""), "plannerResponse.check")
    success = _as_bool(_require(planner, "success", "plannerResponse"), "plannerResponse.success")
    viz = parse_viz(_require(planner, "viz", "plannerResponse"), "plannerResponse.viz")

    violations = validate_viz(viz)
    if violations:
        raise SchemaViolation(
            "plannerResponse.viz", "invariant violations: " + ", ".join(v.value for v in violations)
        )

    doc = PlannerResponseDoc(
        goal=goal,
        steps=tuple(steps),
        next=next_text,
        check=check,
        success=success,
        viz=viz,
        extra={k: v for k, v in obj.items() if k not in ("goal", "steps", "plannerResponse")},
        planner_extra={
            k: v for k, v in planner.items() if k not in ("next", "check", "success", "viz")
        },
    )
    doc.next_step_index()  # raises AmbiguousNext when unmatched
    return doc


@dataclass(frozen=True)
class ResponseFragment:
    """The during-task reply: a bare plannerResponse, or a full document."""

    next: str
    check: str
    success: bool
    viz: Optional[VizSpec]


def parse_response_fragment(raw: str) -> ResponseFragment:
    """Parse a verification reply.

    The in-task model is handed the prior plannerResponse as its template, so
    replies may be the bare ``{next, check, success, viz}`` object rather than
    a full document. ``viz`` may be omitted (meaning: keep the existing one).
    """
    obj = extract_json_object(raw)
    obj = _as_dict(obj, "$")
    if "plannerResponse" in obj:
        obj = _as_dict(obj["plannerResponse"], "plannerResponse")
    success = _as_bool(_require(obj, "success", ""), "success")
    next_text = _as_str(obj.get("next", ""), "next")
    check = _as_str(obj.get("check", ""), "check")
    viz = parse_viz(obj["viz"], "viz") if isinstance(obj.get("viz"), dict) else None
    return ResponseFragment(next=next_text, check=check, success=success, viz=viz)


# -------------------------------------------------------------------------
# Plan construction
# -------------------------------------------------------------------------

PLAN_SIZE_MIN = 3
PLAN_SIZE_MAX = 12


def build_plan(
    doc: PlannerResponseDoc,
    domain_tags: Optional[list[tuple[DomainTag, DomainTag]]] = None,
    step_viz: Optional[list[Optional[VizSpec]]] = None,
) -> TaskPlan:
    """Materialize a TaskPlan from a validated planner document.

    Steps before the one ``next`` points at are treated as already satisfied
    (the planner chose to start mid-list); the pointed step becomes Active and
    carries the document's viz. Other steps take their spec from ``step_viz``
    when the planner supplied one; otherwise a spec reaches them through the
    during-task response that activates them. Plans outside the 3-12 step
    budget are built but flagged with a PlanSizeOutOfRange warning.
    """
    active = doc.next_step_index()
    warnings: list[str] = []
    n = len(doc.steps)
    if not (PLAN_SIZE_MIN <= n <= PLAN_SIZE_MAX):
        warnings.append(f"PlanSizeOutOfRange: {n} steps outside [{PLAN_SIZE_MIN}, {PLAN_SIZE_MAX}]")

    tags = domain_tags
    if tags is not None and len(tags) != n:
        warnings.append("DomainTagCountMismatch: tags ignored")
        tags = None
    if step_viz is not None and len(step_viz) != n:
        warnings.append("StepVizCountMismatch: per-step specs ignored")
        step_viz = None

    steps: list[PlanStep] = []
    for i, instruction in enumerate(doc.steps):
        if tags is not None:
            step_type = classify_step(*tags[i])
            defaulted = False
        else:
            step_type = StepType.R2R
            defaulted = True
        status = StepStatus.PENDING
        if i < active:
            status = StepStatus.COMPLETED
        elif i == active:
            status = StepStatus.ACTIVE
        viz = doc.viz if i == active else (step_viz[i] if step_viz else None)
        steps.append(
            PlanStep(
                index=i,
                instruction=instruction,
                verification_rule=doc.check if i == active else "",
                step_type=step_type,
                status=status,
                viz=viz,
                step_type_defaulted=defaulted,
            )
        )
    return TaskPlan(goal=doc.goal, steps=steps, active_index=active, warnings=warnings)


def revise_viz_rotation(spec: VizSpec, cursor: int) -> VizSpec:
    """Deterministic fallback revision: advance both cue choices one notch.

    objectViz cycles Outline -> ShapePreview -> Outline; actionViz cycles
    Arrow -> Gesture -> Tool -> Arrow (null stays null). Waypoints and motion
    flags are kept, so Arrow specs retain their start/end targets.
    """
    del cursor  # rotation is memoryless per call; cursor is tracked by the caller
    object_cycle = [ObjectViz.OUTLINE, ObjectViz.SHAPE_PREVIEW]
    next_object = object_cycle[(object_cycle.index(spec.object_viz) + 1) % 2]
    next_action = spec.action_viz
    if spec.action_viz is not None:
        action_cycle = [ActionViz.ARROW, ActionViz.GESTURE, ActionViz.TOOL]
        next_action = action_cycle[(action_cycle.index(spec.action_viz) + 1) % 3]
    return replace(spec, object_viz=next_object, action_viz=next_action)
