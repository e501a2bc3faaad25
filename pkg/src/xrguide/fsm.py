"""The in-task engine: per-step lifecycle, verification loop, failure policy,
substep splicing, voice queries, and directive emission.

One engine instance is one session. All entry points run on the session's
event loop (the caller serializes them), mutate plan state synchronously,
and return the SessionEvents they produced; the server layer persists events
and fans the visible ones out as protocol messages.

Failure policy (deterministic, configurable): the first failed verification
revises the visualization (model-suggested spec if any, otherwise the fixed
cue rotation); the second invokes one sub-plan; after the sub-plan is spent,
further failures revise again. Sub-plans never nest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from .directives import (
    DirectiveBatch,
    ResolvedAnchors,
    StepAssetBundle,
    render_feedback,
    render_state_panel,
    render_step,
)
from .errors import (
    OutOfOrderActivation,
    ParseError,
    ReplayMiss,
    SubPlanTooLarge,
    SubPlanTooSmall,
    WrongParent,
    XRGuideError,
)
from .events import EventKind, SessionEvent
from .gateway import Gateway
from .media import MediaPipeline, StepAssets, segment
from .plan_model import (
    ObjectViz,
    PlanStep,
    StepOrigin,
    StepStatus,
    TaskPlan,
    VizSpec,
    WaypointKind,
    parse_plan_document,
    parse_response_fragment,
    revise_viz_rotation,
    validate_viz,
)
from .prompt_engine import (
    SubStepSpec,
    parse_rotation_answer,
    parse_subplan_answer,
    parse_transform_answer,
    parse_voice_answer,
    render_during_task_prompt,
    render_initial_prompt,
    render_rotation_prompt,
    render_subplan_prompt,
    render_transform_prompt,
    render_voice_prompt,
    synthesize_plan,
)
from .spatial import CameraFrame, NormBox, RotationCue3D, anchor_box, resolve_motion

logger = logging.getLogger(__name__)


class SessionStatus:
    PLANNING = "Planning"
    EXECUTING = "Executing"
    DONE = "Done"
    FAILED = "Failed"
    CLOSED = "Closed"


@dataclass
class VerificationOutcome:
    success: bool
    check: str = ""
    next_hint: str = ""
    revised_viz: Optional[VizSpec] = None  # on failure: replacement for the current step
    next_viz: Optional[VizSpec] = None  # on success: spec for the step being advanced to


@dataclass
class FailurePolicyState:
    failure_count: int = 0
    revision_cursor: int = 0
    subplan_used: bool = False


@dataclass
class SubPlan:
    parent_index: int
    substeps: list[SubStepSpec]


@dataclass
class EngineConfig:
    subplan_threshold: int = 2  # failure count that triggers the one sub-plan
    subplan_min: int = 2
    subplan_max: int = 5


# ---------------------------------------------------------------------------
# Pure plan-level operations (used directly by property tests)
# ---------------------------------------------------------------------------


def activate(plan: TaskPlan, index: int) -> PlanStep:
    """Move a pending step to Active; order among originals is enforced.

    An original step may activate only when every earlier original step is
    terminal (completed or explicitly skipped); a substep additionally waits
    for its earlier siblings.
    """
    step = plan.step_at(index)
    if step.status is not StepStatus.PENDING:
        raise OutOfOrderActivation(f"step {index} is {step.status.value}, not Pending")
    pos = plan.position_of(index)
    for earlier in plan.steps[:pos]:
        if step.origin.is_original and earlier.origin.is_original and not earlier.terminal:
            raise OutOfOrderActivation(
                f"step {index} cannot activate before step {earlier.index} finishes"
            )
        if (
            not step.origin.is_original
            and not earlier.origin.is_original
            and earlier.origin.parent_index == step.origin.parent_index
            and not earlier.terminal
        ):
            raise OutOfOrderActivation(
                f"substep {index} cannot activate before sibling {earlier.index}"
            )
    step.status = StepStatus.ACTIVE
    plan.active_index = index
    return step


def splice_subplan(plan: TaskPlan, sub: SubPlan, config: Optional[EngineConfig] = None) -> TaskPlan:
    """Insert substeps contiguously right after their parent.

    The parent must be the currently focused step and keeps its Active status
    until all substeps land; original step order is untouched. Substeps get
    fresh indices past the plan's current index space, so step identity is
    stable across splices.
    """
    config = config or EngineConfig()
    if len(sub.substeps) > config.subplan_max:
        raise SubPlanTooLarge(f"{len(sub.substeps)} substeps > {config.subplan_max}")
    if len(sub.substeps) < config.subplan_min:
        raise SubPlanTooSmall(f"{len(sub.substeps)} substeps < {config.subplan_min}")
    try:
        parent = plan.step_at(sub.parent_index)
    except IndexError as exc:
        raise WrongParent(str(exc)) from exc
    if not parent.origin.is_original:
        raise WrongParent(f"step {sub.parent_index} is itself a substep")
    if parent.status is not StepStatus.ACTIVE:
        raise WrongParent(f"step {sub.parent_index} is not the active step")
    next_index = max(s.index for s in plan.steps) + 1
    new_steps: list[PlanStep] = []
    for i, spec in enumerate(sub.substeps):
        new_steps.append(
            PlanStep(
                index=next_index + i,
                instruction=spec.instruction,
                verification_rule=spec.check,
                step_type=parent.step_type,
                status=StepStatus.PENDING,
                origin=StepOrigin.substep(sub.parent_index),
                viz=spec.viz,
            )
        )
    pos = plan.position_of(sub.parent_index)
    plan.steps[pos + 1 : pos + 1] = new_steps
    return plan


def focused_step(plan: TaskPlan) -> Optional[PlanStep]:
    """The unique step execution points at: Active with no incomplete substeps."""
    for step in plan.steps:
        if step.status in (StepStatus.ACTIVE, StepStatus.AWAITING_VERIFICATION):
            if all(s.terminal for s in plan.substeps_of(step.index)):
                return step
    return None


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass
class _StepRuntime:
    policy: FailurePolicyState = field(default_factory=FailurePolicyState)
    prior_response: Optional[dict] = None
    anchors: Optional[ResolvedAnchors] = None
    assets: StepAssetBundle = field(default_factory=StepAssetBundle)
    pending_check: str = ""


class GuidanceEngine:
    """Session-scoped orchestrator tying planner, media, geometry, and renderer."""

    def __init__(
        self,
        gateway: Gateway,
        media: Optional[MediaPipeline] = None,
        config: Optional[EngineConfig] = None,
        clock: Optional[Callable[[], float]] = None,
        overlay_catalog: Optional[dict] = None,
    ):
        self.gateway = gateway
        self.media = media
        self.config = config or EngineConfig()
        self.clock = clock or _monotone_counter()
        self.overlay_catalog = overlay_catalog or {}
        self.status = SessionStatus.PLANNING
        self.plan: Optional[TaskPlan] = None
        self.current_frame: Optional[CameraFrame] = None
        self.events: list[SessionEvent] = []
        self.directive_log: list[DirectiveBatch] = []
        self._runtime: dict[int, _StepRuntime] = {}
        self._signals: dict[str, int] = {}
        self._fired: set[str] = set()
        self._queued_queries: list[str] = []
        self._seq = 0
        self._pending_localization = False

    # -- event plumbing ----------------------------------------------------

    def _emit(self, kind: EventKind, payload: Optional[dict] = None) -> SessionEvent:
        self._seq += 1
        event = SessionEvent(
            seq=self._seq, timestamp=self.clock(), kind=kind, payload=payload or {}
        )
        self.events.append(event)
        return event

    def _rt(self, index: int) -> _StepRuntime:
        if index not in self._runtime:
            self._runtime[index] = _StepRuntime()
        return self._runtime[index]

    def _fail_session(self, code: str, detail: str) -> None:
        self.status = SessionStatus.FAILED
        self._emit(EventKind.ERROR, {"code": code, "detail": detail, "fatal": True})

    def _error(self, code: str, detail: str) -> None:
        self._emit(EventKind.ERROR, {"code": code, "detail": detail, "fatal": False})

    # -- signals -------------------------------------------------------------

    def register_signal(self, step_index: int, token: str) -> None:
        self._signals[token] = step_index

    def _signal_satisfied(self, step_index: int) -> bool:
        return any(idx == step_index and token in self._fired for token, idx in self._signals.items())

    # -- session entry points --------------------------------------------------

    def start_task(self, prompt: str, signals: Optional[list[dict]] = None) -> list[SessionEvent]:
        """Run pre-task planning: retrieval, plan synthesis, per-step prefetch."""
        produced_from = len(self.events)
        self._emit(EventKind.SESSION_STARTED, {"prompt": prompt, "signals": signals or []})
        references = self.media.goal_references(prompt) if self.media else []
        rendered = render_initial_prompt(prompt, [r.digest for r in references])
        try:
            response, _ = self.gateway.call(rendered)
            doc = parse_plan_document(response)
            plan = synthesize_plan(doc)
        except ReplayMiss as exc:
            self._fail_session("ReplayMiss", str(exc))
            return self.events[produced_from:]
        except (ParseError, XRGuideError) as exc:
            self._fail_session(type(exc).__name__, str(exc))
            return self.events[produced_from:]
        self.plan = plan
        for warning in plan.warnings:
            self._error("PlanWarning", warning)
        for entry in signals or []:
            self.register_signal(entry["step"], entry["token"])
        active = plan.step_at(plan.active_index)
        self._rt(active.index).prior_response = self._prior_from_step(active)
        self._prefetch_assets()
        self._emit(
            EventKind.PLAN_READY,
            {
                "goal": plan.goal,
                "steps": [s.instruction for s in plan.steps],
                "stepTypes": [s.step_type.value for s in plan.steps],
                "statuses": [s.status.value for s in plan.steps],
                "activeIndex": plan.active_index,
            },
        )
        self.status = SessionStatus.EXECUTING
        self._localize_and_render(active)
        queued, self._queued_queries = self._queued_queries, []
        for text in queued:
            self._answer_voice(text)
        return self.events[produced_from:]

    def on_frame(self, frame: CameraFrame, frame_wire: Optional[dict] = None) -> list[SessionEvent]:
        produced_from = len(self.events)
        self.current_frame = frame
        self._emit(
            EventKind.FRAME_RECEIVED, {"digest": frame.image_digest, "frame": frame_wire}
        )
        if self._pending_localization and self.plan is not None:
            step = focused_step(self.plan)
            if step is not None:
                self._localize_and_render(step)
        return self.events[produced_from:]

    def on_verify(self) -> list[SessionEvent]:
        """One verification cycle for the focused step."""
        produced_from = len(self.events)
        self._emit(EventKind.VERIFY_REQUESTED, {})
        if self.status != SessionStatus.EXECUTING or self.plan is None:
            self._error("NotExecuting", f"session is {self.status}")
            return self.events[produced_from:]
        if self.current_frame is None:
            self._error("NoFrame", "verify needs a frame first")
            return self.events[produced_from:]
        step = focused_step(self.plan)
        if step is None:
            self._error("NoActiveStep", "nothing to verify")
            return self.events[produced_from:]
        self._verify_step(step)
        return self.events[produced_from:]

    def on_voice(self, text: str) -> list[SessionEvent]:
        produced_from = len(self.events)
        if self.status == SessionStatus.PLANNING:
            self._queued_queries.append(text)
            self._emit(EventKind.VOICE_QUERY, {"text": text, "queued": True})
            return self.events[produced_from:]
        self._emit(EventKind.VOICE_QUERY, {"text": text, "queued": False})
        self._answer_voice(text)
        return self.events[produced_from:]

    def on_signal(self, token: str) -> list[SessionEvent]:
        produced_from = len(self.events)
        self._fired.add(token)
        self._emit(EventKind.SIGNAL_FIRED, {"token": token, "registered": token in self._signals})
        if self.plan is not None and token in self._signals:
            step = focused_step(self.plan)
            if step is not None and step.index == self._signals[token]:
                self._apply_outcome(step, VerificationOutcome(success=True), model_called=False)
        return self.events[produced_from:]

    def on_skip(self, index: int, reason: str = "") -> list[SessionEvent]:
        produced_from = len(self.events)
        self._emit(EventKind.SKIP_COMMAND, {"stepIndex": index, "reason": reason})
        if self.plan is None:
            self._error("NoPlan", "no plan yet")
            return self.events[produced_from:]
        try:
            step = self.plan.step_at(index)
        except IndexError:
            self._error("UnknownStep", f"no step {index}")
            return self.events[produced_from:]
        if step.terminal:
            self._error("AlreadyDone", f"step {index} already finished")
            return self.events[produced_from:]
        focus = focused_step(self.plan)
        affected = [index] + [s.index for s in self.plan.substeps_of(index)]
        was_focus = focus is not None and focus.index in affected
        step.status = StepStatus.COMPLETED
        step.skipped = True
        for sub in self.plan.substeps_of(index):
            if not sub.terminal:
                sub.status = StepStatus.COMPLETED
                sub.skipped = True
        if was_focus:
            self._advance()
        return self.events[produced_from:]

    def end_session(self) -> list[SessionEvent]:
        produced_from = len(self.events)
        if self.status not in (SessionStatus.DONE, SessionStatus.FAILED):
            self.status = SessionStatus.DONE if self._all_done() else SessionStatus.CLOSED
        self._emit(EventKind.SESSION_CLOSED, {"finalStatus": self.status})
        return self.events[produced_from:]

    # -- planning helpers --------------------------------------------------

    def _prefetch_assets(self) -> None:
        if self.media is None or self.plan is None:
            return
        for step in self.plan.original_steps():
            if step.terminal:
                continue
            label = None
            if step.viz is not None and step.viz.object_viz is ObjectViz.SHAPE_PREVIEW:
                target = step.viz.waypoint(WaypointKind.TARGET)
                label = target.object_name if target else None
            assets: StepAssets = self.media.prefetch_step(
                step.index, step.instruction, self.plan.goal, mask_label=label
            )
            bundle = self._rt(step.index).assets
            bundle.mask = assets.mask
            bundle.reference = assets.images[0] if assets.images else None
            bundle.overlays = dict(self.overlay_catalog)

    def _prior_from_step(self, step: PlanStep) -> dict:
        return {
            "next": step.instruction,
            "check": step.verification_rule,
            "success": False,
            "viz": step.viz.to_wire() if step.viz else None,
        }

    # -- localization and rendering ------------------------------------------

    def _localize_and_render(self, step: PlanStep) -> None:
        if self.plan is None:
            return
        if step.viz is None:
            self._send_batch(
                DirectiveBatch(step_index=step.index, directives=(render_state_panel(self.plan),))
            )
            return
        if self.current_frame is None:
            self._pending_localization = True
            return
        self._pending_localization = False
        rt = self._rt(step.index)
        try:
            rt.anchors = self._localize(step.viz)
        except ReplayMiss as exc:
            self._fail_session("ReplayMiss", str(exc))
            return
        except (ParseError, XRGuideError) as exc:
            self._error(type(exc).__name__, str(exc))
            rt.anchors = ResolvedAnchors()
        self._late_segmentation(step, rt)
        batch = render_step(self.plan, step, rt.anchors or ResolvedAnchors(), rt.assets)
        self._send_batch(batch)

    def _late_segmentation(self, step: PlanStep, rt: _StepRuntime) -> None:
        """Fetch a mask for specs revised into ShapePreview after prefetch."""
        if (
            rt.assets.mask is not None
            or self.media is None
            or self.media.segmentation is None
            or step.viz is None
            or step.viz.object_viz is not ObjectViz.SHAPE_PREVIEW
            or rt.assets.reference is None
        ):
            return
        target = step.viz.waypoint(WaypointKind.TARGET)
        if target is None:
            return
        try:
            rt.assets.mask = segment(
                rt.assets.reference, target.object_name, self.media.segmentation, self.media.store
            )
        except XRGuideError as exc:
            logger.warning("late segmentation failed: %s", exc)

    def _localize(self, spec: VizSpec) -> ResolvedAnchors:
        assert self.current_frame is not None
        frame = self.current_frame
        anchors = ResolvedAnchors()
        target_wp = spec.waypoint(WaypointKind.TARGET) or (
            spec.waypoints[0] if spec.waypoints else None
        )
        if target_wp is None:
            return anchors
        digests = [frame.image_digest] if frame.image_digest else ["frame"]
        if spec.needs_rotation:
            prompt = render_rotation_prompt(target_wp.object_name, digests)
            response, _ = self.gateway.call(prompt)
            answer = parse_rotation_answer(response)
            cue = resolve_motion(spec, answer, frame)
            assert isinstance(cue, RotationCue3D)
            anchors.rotation = cue
            anchors.target = cue.pivot
            return anchors
        prompt = render_transform_prompt(target_wp.object_name, digests)
        response, _ = self.gateway.call(prompt)
        answer = parse_transform_answer(response)
        if spec.needs_translation:
            start, end = resolve_motion(spec, answer, frame)
            anchors.target = start
            anchors.end_target = end
            return anchors
        if answer.entries:
            anchors.target = anchor_box(frame, NormBox.from_pos(answer.entries[0].pos))
        return anchors

    def _send_batch(self, batch: DirectiveBatch) -> None:
        self.directive_log.append(batch)
        self._emit(EventKind.DIRECTIVE_BATCH_SENT, batch.to_wire())

    # -- verification -----------------------------------------------------------

    def _verify_step(self, step: PlanStep) -> None:
        if self._signal_satisfied(step.index):
            self._apply_outcome(step, VerificationOutcome(success=True), model_called=False)
            return
        rt = self._rt(step.index)
        prior = rt.prior_response or self._prior_from_step(step)
        step.status = StepStatus.AWAITING_VERIFICATION
        rule = step.verification_rule
        if rt.pending_check:
            step.verification_rule = (rule + " " if rule else "") + rt.pending_check
        try:
            prompt = render_during_task_prompt(
                step, prior, self.current_frame.image_digest or "frame"
            )
            response, _ = self.gateway.call(prompt)
            fragment = parse_response_fragment(response)
        except ReplayMiss as exc:
            step.status = StepStatus.ACTIVE
            step.verification_rule = rule
            self._fail_session("ReplayMiss", str(exc))
            return
        except (ParseError, XRGuideError) as exc:
            step.status = StepStatus.ACTIVE
            step.verification_rule = rule
            self._error(type(exc).__name__, str(exc))
            return
        step.verification_rule = rule
        revised = None
        if (
            not fragment.success
            and fragment.viz is not None
            and step.viz is not None
            and fragment.viz != step.viz
        ):
            revised = fragment.viz
        outcome = VerificationOutcome(
            success=fragment.success,
            check=fragment.check,
            next_hint=fragment.next,
            revised_viz=revised,
            next_viz=fragment.viz if fragment.success else None,
        )
        viz_for_prior = fragment.viz or step.viz
        rt.prior_response = {
            "next": fragment.next or step.instruction,
            "check": fragment.check,
            "success": fragment.success,
            "viz": viz_for_prior.to_wire() if viz_for_prior else None,
        }
        self._apply_outcome(step, outcome, model_called=True)

    def _apply_outcome(
        self, step: PlanStep, outcome: VerificationOutcome, model_called: bool
    ) -> None:
        result_event = self._emit(
            EventKind.VERIFICATION_RESULT,
            {
                "stepIndex": step.index,
                "success": outcome.success,
                "check": outcome.check,
                "modelCalled": model_called,
                "planComplete": False,
            },
        )
        cue = render_feedback(outcome.success)
        self._emit(EventKind.AUDIO_CUE_SENT, {"cue": cue.payload["cue"]})
        if outcome.success:
            step.status = StepStatus.COMPLETED
            self._rt(step.index).pending_check = ""
            self._advance(next_viz=outcome.next_viz)
            if self.status == SessionStatus.DONE:
                result_event.payload["planComplete"] = True
        else:
            step.status = StepStatus.ACTIVE
            rt = self._rt(step.index)
            rt.policy.failure_count += 1
            if outcome.check:
                rt.pending_check = outcome.check
            self._handle_failure(step, outcome)

    def _handle_failure(self, step: PlanStep, outcome: VerificationOutcome) -> None:
        policy = self._rt(step.index).policy
        wants_subplan = (
            policy.failure_count >= self.config.subplan_threshold
            and not policy.subplan_used
            and step.origin.is_original  # substeps never spawn nested sub-plans
        )
        if wants_subplan and self._invoke_subplan(step, outcome):
            return
        if self.status == SessionStatus.FAILED:
            return
        self._revise_viz(step, outcome)

    def _revise_viz(self, step: PlanStep, outcome: VerificationOutcome) -> None:
        if step.viz is None:
            return
        rt = self._rt(step.index)
        if outcome.revised_viz is not None and not validate_viz(outcome.revised_viz):
            new_spec = outcome.revised_viz
        else:
            new_spec = revise_viz_rotation(step.viz, rt.policy.revision_cursor)
        rt.policy.revision_cursor += 1
        step.viz = new_spec
        self._emit(EventKind.VIZ_REVISED, {"stepIndex": step.index, "viz": new_spec.to_wire()})
        self._localize_and_render(step)

    def _invoke_subplan(self, step: PlanStep, outcome: VerificationOutcome) -> bool:
        frame_digest = self.current_frame.image_digest if self.current_frame else None
        reason = outcome.check or outcome.next_hint or "state mismatch"
        prompt = render_subplan_prompt(step.instruction, reason, frame_digest)
        try:
            response, _ = self.gateway.call(prompt)
            answer = parse_subplan_answer(response)
            sub = SubPlan(parent_index=step.index, substeps=list(answer.substeps))
            splice_subplan(self.plan, sub, self.config)
        except ReplayMiss as exc:
            self._fail_session("ReplayMiss", str(exc))
            return True  # session is dead; no revision fallback
        except (ParseError, SubPlanTooLarge, SubPlanTooSmall, WrongParent, XRGuideError) as exc:
            self._error(type(exc).__name__, str(exc))
            return False
        self._rt(step.index).policy.subplan_used = True
        substeps = self.plan.substeps_of(step.index)
        self._emit(
            EventKind.SUBPLAN_INSERTED,
            {
                "parent": step.index,
                "substeps": [{"index": s.index, "instruction": s.instruction} for s in substeps],
            },
        )
        first = substeps[0]
        self._rt(first.index).policy.subplan_used = True
        activate(self.plan, first.index)
        self._rt(first.index).prior_response = self._prior_from_step(first)
        self._localize_and_render(first)
        return True

    # -- advancement --------------------------------------------------------------

    def _advance(self, next_viz: Optional[VizSpec] = None) -> None:
        """After a completion: close finished parents, activate what's next.

        ``next_viz`` is the spec the advancing verification response carried
        for the upcoming step; it fills in steps the planner deferred.
        """
        assert self.plan is not None
        for step in self.plan.steps:
            if step.status is StepStatus.ACTIVE and step.origin.is_original:
                subs = self.plan.substeps_of(step.index)
                if subs and all(s.terminal for s in subs):
                    step.status = StepStatus.COMPLETED
        for step in self.plan.steps:
            if step.status is StepStatus.PENDING:
                activate(self.plan, step.index)
                if step.viz is None and next_viz is not None:
                    step.viz = next_viz
                rt = self._rt(step.index)
                if not step.origin.is_original:
                    rt.policy.subplan_used = True
                if rt.prior_response is None:
                    rt.prior_response = self._prior_from_step(step)
                self._localize_and_render(step)
                return
        self.status = SessionStatus.DONE

    def _all_done(self) -> bool:
        return self.plan is not None and all(s.terminal for s in self.plan.steps)

    # -- voice ------------------------------------------------------------------

    def _answer_voice(self, text: str) -> None:
        if self.plan is None:
            return
        step = focused_step(self.plan)
        instruction = step.instruction if step else ""
        frame_digest = self.current_frame.image_digest if self.current_frame else None
        prompt = render_voice_prompt(self.plan.goal, instruction, text, frame_digest)
        try:
            response, _ = self.gateway.call(prompt)
            answer = parse_voice_answer(response)
        except ReplayMiss as exc:
            self._fail_session("ReplayMiss", str(exc))
            return
        except (ParseError, XRGuideError) as exc:
            self._emit(EventKind.VOICE_ANSWER, {"answer": f"(error: {exc})", "vizUpdated": False})
            return
        updated = False
        if answer.updated_viz is not None and step is not None:
            step.viz = answer.updated_viz
            updated = True
        self._emit(EventKind.VOICE_ANSWER, {"answer": answer.answer, "vizUpdated": updated})
        if updated and step is not None:
            self._localize_and_render(step)


def _monotone_counter() -> Callable[[], float]:
    state = {"t": 0.0}

    def tick() -> float:
        state["t"] += 1.0
        return state["t"]

    return tick
