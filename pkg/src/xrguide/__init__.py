"""Cross-reality task guidance engine.

Turns a single task prompt into a structured, verifiable step plan, then
runs a closed loop of scene verification, visualization revision, sub-plan
splicing, and spatially anchored guidance directives, delivered to clients
over a sessionful wire protocol. Fully offline record/replay for
deterministic testing.
"""

__version__ = "0.1.0"

from .plan_model import (
    ActionViz,
    DomainTag,
    ObjectViz,
    PlannerResponseDoc,
    PlanStep,
    StepStatus,
    StepType,
    TaskPlan,
    VizSpec,
    Waypoint,
    WaypointKind,
    classify_step,
    parse_plan_document,
    validate_viz,
)
from .prompt_engine import PromptKind, RenderedPrompt, synthesize_plan
from .gateway import Gateway, ModelProfile
from .fsm import GuidanceEngine, SessionStatus, SubPlan, activate, focused_step, splice_subplan
from .directives import DirectiveBatch, DirectiveKind, GuidanceDirective
from .spatial import CameraFrame, NormBox, WorldAnchor, box_center, unproject

__all__ = [
    "ActionViz",
    "CameraFrame",
    "DirectiveBatch",
    "DirectiveKind",
    "DomainTag",
    "Gateway",
    "GuidanceDirective",
    "GuidanceEngine",
    "ModelProfile",
    "NormBox",
    "ObjectViz",
    "PlanStep",
    "PlannerResponseDoc",
    "PromptKind",
    "RenderedPrompt",
    "SessionStatus",
    "StepStatus",
    "StepType",
    "SubPlan",
    "TaskPlan",
    "VizSpec",
    "Waypoint",
    "WaypointKind",
    "WorldAnchor",
    "activate",
    "box_center",
    "classify_step",
    "focused_step",
    "parse_plan_document",
    "splice_subplan",
    "synthesize_plan",
    "unproject",
    "validate_viz",
]
