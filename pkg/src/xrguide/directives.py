"""Turn an active step's viz spec plus resolved anchors into the typed
directive batch a client renders.

A batch is an idempotent replacement: clients drop whatever they were
showing for the step and render the new batch. Every batch carries exactly
one state panel and at least one object-state directive; richness degrades
monotonically when assets are missing (a preview without its mask falls
back to an outline) but the panel never drops.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .media import AssetRef
from .plan_model import (
    ActionViz,
    ObjectViz,
    PlanStep,
    StepStatus,
    TaskPlan,
    VizSpec,
    WaypointKind,
)
from .spatial import RotationCue3D, WorldAnchor

logger = logging.getLogger(__name__)

DIRECTIVE_SCHEMA_VERSION = 1
ANIMATED_PREVIEW_LOOP_SECONDS = 2.0


class DirectiveKind(str, Enum):
    OUTLINE = "Outline"
    SHAPE_PREVIEW = "ShapePreview"
    ANIMATED_SHAPE_PREVIEW = "AnimatedShapePreview"
    ARROW_TRANSLATION = "ArrowTranslation"
    ARROW_ROTATION = "ArrowRotation"
    GESTURE_OVERLAY = "GestureOverlay"
    TOOL_OVERLAY = "ToolOverlay"
    TEXT_BADGE = "TextBadge"
    STATE_PANEL = "StatePanel"
    AUDIO_CUE = "AudioCue"
    REFERENCE_IMAGE = "ReferenceImage"


class AudioCueKind(str, Enum):
    CORRECT = "Correct"
    ERROR = "Error"


@dataclass(frozen=True)
class GuidanceDirective:
    kind: DirectiveKind
    anchors: tuple[WorldAnchor, ...] = ()
    rotation: Optional[RotationCue3D] = None
    asset: Optional[AssetRef] = None
    payload: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "kind": self.kind.value,
            "anchors": [a.to_wire() for a in self.anchors],
            "rotation": self.rotation.to_wire() if self.rotation else None,
            "asset": self.asset.to_wire() if self.asset else None,
            "payload": self.payload,
        }


@dataclass(frozen=True)
class DirectiveBatch:
    step_index: int
    directives: tuple[GuidanceDirective, ...]

    def to_wire(self) -> dict:
        return {
            "version": DIRECTIVE_SCHEMA_VERSION,
            "stepIndex": self.step_index,
            "directives": [d.to_wire() for d in self.directives],
        }

    def serialize(self) -> str:
        return json.dumps(self.to_wire(), ensure_ascii=False, separators=(",", ":"))

    def kinds(self) -> list[DirectiveKind]:
        return [d.kind for d in self.directives]


@dataclass
class ResolvedAnchors:
    """Localization results for one step, keyed by waypoint kind."""

    target: Optional[WorldAnchor] = None
    end_target: Optional[WorldAnchor] = None
    rotation: Optional[RotationCue3D] = None

    def primary(self) -> Optional[WorldAnchor]:
        if self.target is not None:
            return self.target
        if self.rotation is not None:
            return self.rotation.pivot
        return None


@dataclass
class StepAssetBundle:
    mask: Optional[AssetRef] = None
    reference: Optional[AssetRef] = None
    overlays: dict[str, AssetRef] = field(default_factory=dict)  # action token -> icon


def render_state_panel(plan: TaskPlan) -> GuidanceDirective:
    """Panel payload: goal, active instruction + status, and what comes next.

    After a splice the "next" line follows execution order (first pending
    step in list order), not the original successor.
    """
    if plan.active_index is None:
        raise ValueError("plan has no active step")
    active = plan.step_at(plan.active_index)
    active_pos = plan.position_of(plan.active_index)
    next_instruction = ""
    for step in plan.steps[active_pos + 1 :]:
        if step.status is StepStatus.PENDING:
            next_instruction = step.instruction
            break
    return GuidanceDirective(
        kind=DirectiveKind.STATE_PANEL,
        payload={
            "goal": plan.goal,
            "current": active.instruction,
            "status": active.status.value,
            "next": next_instruction,
        },
    )


def render_feedback(success: bool) -> GuidanceDirective:
    cue = AudioCueKind.CORRECT if success else AudioCueKind.ERROR
    return GuidanceDirective(kind=DirectiveKind.AUDIO_CUE, payload={"cue": cue.value})


def _object_directive(
    spec: VizSpec, anchors: ResolvedAnchors, assets: StepAssetBundle
) -> GuidanceDirective:
    anchor = anchors.primary()
    anchor_tuple = (anchor,) if anchor else ()
    if spec.object_viz is ObjectViz.SHAPE_PREVIEW:
        if assets.mask is None:
            logger.warning("ShapePreview without mask; degrading to Outline")
            return GuidanceDirective(
                kind=DirectiveKind.OUTLINE,
                anchors=anchor_tuple,
                payload={"degradedFrom": DirectiveKind.SHAPE_PREVIEW.value},
            )
        return GuidanceDirective(
            kind=DirectiveKind.SHAPE_PREVIEW, anchors=anchor_tuple, asset=assets.mask
        )
    return GuidanceDirective(kind=DirectiveKind.OUTLINE, anchors=anchor_tuple)


def _action_directive(
    spec: VizSpec, anchors: ResolvedAnchors, assets: StepAssetBundle
) -> Optional[GuidanceDirective]:
    if spec.action_viz is None:
        return None
    if spec.action_viz is ActionViz.ARROW:
        if spec.needs_rotation and anchors.rotation is not None:
            return GuidanceDirective(kind=DirectiveKind.ARROW_ROTATION, rotation=anchors.rotation)
        if anchors.target is not None and anchors.end_target is not None:
            return GuidanceDirective(
                kind=DirectiveKind.ARROW_TRANSLATION,
                anchors=(anchors.target, anchors.end_target),
            )
        logger.warning("Arrow action without resolved motion; dropping arrow")
        return None
    # gesture and tool overlays resolve their icon through the action-token catalog
    kind = (
        DirectiveKind.GESTURE_OVERLAY
        if spec.action_viz is ActionViz.GESTURE
        else DirectiveKind.TOOL_OVERLAY
    )
    anchor = anchors.primary()
    anchor_tuple = (anchor,) if anchor else ()
    for token in spec.action_types:
        icon = assets.overlays.get(token)
        if icon is not None:
            return GuidanceDirective(
                kind=kind, anchors=anchor_tuple, asset=icon, payload={"actionType": token}
            )
    token = spec.action_types[0] if spec.action_types else spec.action_viz.value.lower()
    return GuidanceDirective(
        kind=DirectiveKind.TEXT_BADGE, anchors=anchor_tuple, payload={"text": token}
    )


def render_step(
    plan: TaskPlan,
    step: PlanStep,
    anchors: ResolvedAnchors,
    assets: Optional[StepAssetBundle] = None,
) -> DirectiveBatch:
    """Build the ordered directive batch for an active step.

    Merge rule: ShapePreview object cue + Arrow action cue collapse into one
    AnimatedShapePreview that carries the motion itself, so no separate arrow
    is ever emitted alongside it.
    """
    if step.viz is None:
        raise ValueError(f"step {step.index} has no viz spec")
    assets = assets or StepAssetBundle()
    spec = step.viz
    directives: list[GuidanceDirective] = [render_state_panel(plan)]

    merge = spec.object_viz is ObjectViz.SHAPE_PREVIEW and spec.action_viz is ActionViz.ARROW
    if merge:
        payload: dict = {"loopSeconds": ANIMATED_PREVIEW_LOOP_SECONDS}
        anchor_tuple: tuple[WorldAnchor, ...] = ()
        rotation = None
        if spec.needs_rotation and anchors.rotation is not None:
            rotation = anchors.rotation
        elif anchors.target is not None and anchors.end_target is not None:
            anchor_tuple = (anchors.target, anchors.end_target)
        elif anchors.primary() is not None:
            anchor_tuple = (anchors.primary(),)
        if assets.mask is None:
            logger.warning("animated preview without mask; degrading to Outline")
            directives.append(
                GuidanceDirective(
                    kind=DirectiveKind.OUTLINE,
                    anchors=anchor_tuple[:1],
                    payload={"degradedFrom": DirectiveKind.ANIMATED_SHAPE_PREVIEW.value},
                )
            )
        else:
            directives.append(
                GuidanceDirective(
                    kind=DirectiveKind.ANIMATED_SHAPE_PREVIEW,
                    anchors=anchor_tuple,
                    rotation=rotation,
                    asset=assets.mask,
                    payload=payload,
                )
            )
    else:
        directives.append(_object_directive(spec, anchors, assets))
        action = _action_directive(spec, anchors, assets)
        if action is not None:
            directives.append(action)

    if assets.reference is not None:
        anchor = anchors.primary()
        directives.append(
            GuidanceDirective(
                kind=DirectiveKind.REFERENCE_IMAGE,
                anchors=(anchor,) if anchor else (),
                asset=assets.reference,
            )
        )
    return DirectiveBatch(step_index=step.index, directives=tuple(directives))


def required_waypoints(spec: VizSpec) -> list[str]:
    """Object names the renderer needs resolved before it can draw the spec."""
    names = []
    target = spec.waypoint(WaypointKind.TARGET)
    if target is not None:
        names.append(target.object_name)
    if spec.needs_translation:
        end = spec.waypoint(WaypointKind.END_TARGET)
        if end is not None:
            names.append(end.object_name)
    return names
