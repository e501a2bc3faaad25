"""Exception hierarchy shared across the engine.

Every failure mode a caller is expected to handle has its own type; anything
escaping these is a bug. Parse-stage errors all derive from ParseError so
fuzz harnesses can assert "typed error or valid document" in one clause.
"""

from __future__ import annotations


class XRGuideError(Exception):
    """Base class for all engine errors."""


# --- parsing / schema ---------------------------------------------------


class ParseError(XRGuideError):
    """Base for model-output parsing failures."""


class NoJsonFound(ParseError):
    """No balanced JSON object could be located in the raw text."""


class SchemaViolation(ParseError):
    """A located JSON document does not satisfy the wire schema.

    ``path`` is a dotted/indexed locator such as ``viz.waypoints[0].objectName``.
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class AmbiguousNext(ParseError):
    """plannerResponse.next matches no step and no 'step / substep' pattern."""


class OutOfRange(ParseError):
    """A normalized coordinate fell outside [0, 1000]."""

    def __init__(self, path: str, value):
        self.path = path
        self.value = value
        super().__init__(f"{path}: coordinate {value!r} outside [0, 1000]")


# --- prompt rendering ---------------------------------------------------


class EmptyGoal(XRGuideError):
    pass


class EmptyObjectName(XRGuideError):
    pass


class MissingPriorResponse(XRGuideError):
    pass


# --- gateway ------------------------------------------------------------


class GatewayError(XRGuideError):
    pass


class Timeout(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ReplayMiss(GatewayError):
    """Replay mode had no recorded answer for this call; never hits the network."""

    def __init__(self, context_hash: str, kind: str):
        self.context_hash = context_hash
        self.kind = kind
        super().__init__(f"no recorded response for kind={kind} hash={context_hash[:12]}")


# --- media pipeline -----------------------------------------------------


class ProviderUnavailable(XRGuideError):
    pass


class EmptyResults(XRGuideError):
    pass


class DecodeError(XRGuideError):
    pass


class SegmentationUnavailable(XRGuideError):
    pass


class NoObjectFound(XRGuideError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"segmentation found no object for label {label!r}")


# --- plan state machine -------------------------------------------------


class OutOfOrderActivation(XRGuideError):
    pass


class SubPlanTooLarge(XRGuideError):
    pass


class SubPlanTooSmall(XRGuideError):
    pass


class WrongParent(XRGuideError):
    pass


# --- spatial ------------------------------------------------------------


class NoDepthAvailable(XRGuideError):
    pass


class MissingEndTarget(XRGuideError):
    pass


class MissingStartTarget(XRGuideError):
    pass


# --- renderer -----------------------------------------------------------


class MissingAnchor(XRGuideError):
    def __init__(self, waypoint: str):
        self.waypoint = waypoint
        super().__init__(f"no resolved anchor for waypoint {waypoint!r}")


class MissingAsset(XRGuideError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"no asset available for directive kind {kind!r}")


# --- session / protocol -------------------------------------------------


class UnknownSession(XRGuideError):
    pass


class OutOfOrderSeq(XRGuideError):
    pass


class PayloadInvalid(XRGuideError):
    pass


class LogCorrupt(XRGuideError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"event log corrupt at line {line_no}: {reason}")


class FixtureMismatch(XRGuideError):
    pass


# --- harness ------------------------------------------------------------


class ScenarioInvalid(XRGuideError):
    pass


class LabelMismatch(XRGuideError):
    pass
