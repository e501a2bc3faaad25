"""Geometry: normalized 2D boxes -> camera rays -> depth-resolved world anchors.

Conventions, fixed here and mirrored by every fixture:
  - normalized coordinates are integers in [0, 1000] over the image;
  - the image/camera frame is +X right, +Y down, +Z forward (pinhole);
  - depth samplers return metric Z-depth (distance along the camera forward
    axis, not ray length); values <= 0 or non-finite mean "no depth here";
  - the guidance frame for rotation cues is X right, Y physically up,
    Z toward the viewer, i.e. (Xg, Yg, Zg) = (Xc, -Yc, -Zc).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import MissingEndTarget, MissingStartTarget, NoDepthAvailable
from .prompt_engine import Axis, RotationAnswer, RotationDirection, TransformAnswer
from .plan_model import VizSpec

NORM_MAX = 1000

DepthSampler = Callable[[float, float], float]  # (px, py) -> metric Z-depth


@dataclass(frozen=True)
class NormBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not (0 <= v <= NORM_MAX):
                raise ValueError(f"{name}={v} outside [0, {NORM_MAX}]")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("box min exceeds max")

    @classmethod
    def from_pos(cls, pos: Sequence[int]) -> "NormBox":
        return cls(*pos)

    def to_wire(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def box_center(b: NormBox) -> tuple[float, float]:
    """Real-valued midpoint in normalized coordinates; no integer truncation."""
    return ((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)


@dataclass
class DepthGrid:
    """Row-major metric depth raster sampled with nearest-pixel lookup."""

    width: int
    height: int
    data: np.ndarray  # shape (height, width)

    @classmethod
    def constant(cls, width: int, height: int, depth: float) -> "DepthGrid":
        return cls(width, height, np.full((height, width), depth, dtype=np.float64))

    @classmethod
    def from_wire(cls, obj: dict) -> "DepthGrid":
        data = np.asarray(obj["data"], dtype=np.float64).reshape(obj["height"], obj["width"])
        return cls(width=obj["width"], height=obj["height"], data=data)

    def to_wire(self) -> dict:
        return {"width": self.width, "height": self.height, "data": self.data.ravel().tolist()}

    def __call__(self, px: float, py: float) -> float:
        ix = min(max(int(round(px)), 0), self.width - 1)
        iy = min(max(int(round(py)), 0), self.height - 1)
        return float(self.data[iy, ix])


@dataclass
class CameraFrame:
    """One observed scene: image reference, pinhole intrinsics, pose, depth."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # 3x3 camera-to-world
    translation: np.ndarray  # 3-vector, meters
    depth: DepthSampler
    image_digest: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        should_be_identity = self.rotation @ self.rotation.T
        if not np.allclose(should_be_identity, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if not math.isclose(float(np.linalg.det(self.rotation)), 1.0, abs_tol=1e-6):
            raise ValueError("rotation determinant is not +1")

    @classmethod
    def from_fixture(cls, obj: dict, image_digest: str = "", timestamp: float = 0.0) -> "CameraFrame":
        """Build from the synthetic-scene fixture JSON (see docs/frame schema)."""
        intr = obj["intrinsics"]
        pose = obj["pose"]
        return cls(
            width=obj["width"],
            height=obj["height"],
            fx=intr["fx"],
            fy=intr["fy"],
            cx=intr["cx"],
            cy=intr["cy"],
            rotation=np.asarray(pose["rotation"], dtype=np.float64).reshape(3, 3),
            translation=np.asarray(pose["translation"], dtype=np.float64),
            depth=DepthGrid.from_wire(obj["depth"]),
            image_digest=image_digest or obj.get("imageDigest", ""),
            timestamp=timestamp,
        )

    def pixel_of(self, u: float, v: float) -> tuple[float, float]:
        return (u / NORM_MAX * self.width, v / NORM_MAX * self.height)


class AnchorConfidence(str, Enum):
    DEPTH_HIT = "DepthHit"
    DEPTH_FALLBACK = "DepthFallback"


@dataclass(frozen=True)
class WorldAnchor:
    position: tuple[float, float, float]
    source_box: Optional[NormBox]
    frame_timestamp: float
    confidence: AnchorConfidence

    def to_wire(self) -> dict:
        return {
            "position": [round(c, 6) for c in self.position],
            "sourceBox": self.source_box.to_wire() if self.source_box else None,
            "confidence": self.confidence.value,
        }


@dataclass(frozen=True)
class RotationCue3D:
    pivot: WorldAnchor
    axis: tuple[float, float, float]  # unit vector, world frame
    direction: RotationDirection

    def to_wire(self) -> dict:
        return {
            "pivot": self.pivot.to_wire(),
            "axis": [round(c, 9) for c in self.axis],
            "direction": self.direction.value,
        }


def _valid_depth(d: float) -> bool:
    return math.isfinite(d) and d > 0.0


def _fallback_depth(frame: CameraFrame, box: Optional[NormBox], px: float, py: float) -> float:
    """Median of valid depths inside the box; 5x5 neighborhood when degenerate."""
    if box is not None and (box.x_max > box.x_min and box.y_max > box.y_min):
        px0, py0 = frame.pixel_of(box.x_min, box.y_min)
        px1, py1 = frame.pixel_of(box.x_max, box.y_max)
        xs = range(int(math.floor(px0)), int(math.ceil(px1)) + 1)
        ys = range(int(math.floor(py0)), int(math.ceil(py1)) + 1)
    else:
        xs = range(int(round(px)) - 2, int(round(px)) + 3)
        ys = range(int(round(py)) - 2, int(round(py)) + 3)
    samples = []
    for iy in ys:
        for ix in xs:
            if 0 <= ix < frame.width and 0 <= iy < frame.height:
                d = frame.depth(float(ix), float(iy))
                if _valid_depth(d):
                    samples.append(d)
    if not samples:
        raise NoDepthAvailable("no valid depth anywhere in the sample region")
    return float(np.median(np.asarray(samples)))


def unproject(
    frame: CameraFrame, u: float, v: float, box: Optional[NormBox] = None
) -> WorldAnchor:
    """Lift a normalized image point to a world-space anchor using scene depth.

    The depth sample at the point wins; if it is invalid the box median (or a
    5x5 neighborhood when no box is given) is used and the anchor is marked
    DepthFallback.
    """
    px, py = frame.pixel_of(u, v)
    d = frame.depth(px, py)
    confidence = AnchorConfidence.DEPTH_HIT
    if not _valid_depth(d):
        d = _fallback_depth(frame, box, px, py)
        confidence = AnchorConfidence.DEPTH_FALLBACK
    cam = np.array([(px - frame.cx) / frame.fx * d, (py - frame.cy) / frame.fy * d, d])
    world = frame.rotation @ cam + frame.translation
    return WorldAnchor(
        position=(float(world[0]), float(world[1]), float(world[2])),
        source_box=box,
        frame_timestamp=frame.timestamp,
        confidence=confidence,
    )


def anchor_box(frame: CameraFrame, box: NormBox) -> WorldAnchor:
    u, v = box_center(box)
    return unproject(frame, u, v, box=box)


# Guidance frame basis expressed in camera coordinates: X right, Y physically
# up (camera -Y), Z toward the viewer (camera -Z).
_GUIDANCE_BASIS_CAM = {
    Axis.X: np.array([1.0, 0.0, 0.0]),
    Axis.Y: np.array([0.0, -1.0, 0.0]),
    Axis.Z: np.array([0.0, 0.0, -1.0]),
}


def guidance_axis_to_world(frame: CameraFrame, axis: Axis) -> tuple[float, float, float]:
    vec = frame.rotation @ _GUIDANCE_BASIS_CAM[axis]
    vec = vec / np.linalg.norm(vec)
    return (float(vec[0]), float(vec[1]), float(vec[2]))


MotionResolution = Union[RotationCue3D, tuple[WorldAnchor, WorldAnchor]]


def resolve_motion(
    spec: VizSpec,
    answer: Union[RotationAnswer, TransformAnswer],
    frame: CameraFrame,
) -> MotionResolution:
    """Turn a localization answer into 3D motion guidance.

    Rotation specs produce a RotationCue3D (pivot anchor + world axis +
    direction); translation specs produce a (start, end) anchor pair.
    """
    if spec.needs_rotation == spec.needs_translation:
        raise ValueError("spec must need exactly one of rotation/translation")
    if spec.needs_rotation:
        if not isinstance(answer, RotationAnswer):
            raise TypeError("rotation spec needs a RotationAnswer")
        box = NormBox.from_pos(answer.pos)
        return RotationCue3D(
            pivot=anchor_box(frame, box),
            axis=guidance_axis_to_world(frame, answer.axis),
            direction=answer.direction,
        )
    if not isinstance(answer, TransformAnswer):
        raise TypeError("translation spec needs a TransformAnswer")
    start_entry = answer.entry("starttarget") or answer.entry("object")
    end_entry = answer.entry("endtarget")
    if end_entry is None:
        raise MissingEndTarget("translation needs an endtarget box")
    if start_entry is None:
        raise MissingStartTarget("translation needs a starttarget (or object) box")
    start = anchor_box(frame, NormBox.from_pos(start_entry.pos))
    end = anchor_box(frame, NormBox.from_pos(end_entry.pos))
    return (start, end)


# -------------------------------------------------------------------------
# Synthetic-scene fixtures
# -------------------------------------------------------------------------


def load_frame_fixture(path) -> CameraFrame:
    with open(path, encoding="utf-8") as fh:
        return CameraFrame.from_fixture(json.load(fh))


@dataclass
class FrameFixture:
    """Builder for simulator scenes: a plane of constant depth facing the camera."""

    width: int = 160
    height: int = 120
    fx: float = 120.0
    fy: float = 120.0
    plane_depth: float = 1.5
    holes: list[tuple[int, int]] = field(default_factory=list)

    def build(self, image_digest: str = "", timestamp: float = 0.0) -> CameraFrame:
        grid = DepthGrid.constant(self.width, self.height, self.plane_depth)
        for (ix, iy) in self.holes:
            grid.data[iy, ix] = 0.0
        return CameraFrame(
            width=self.width,
            height=self.height,
            fx=self.fx,
            fy=self.fy,
            cx=self.width / 2,
            cy=self.height / 2,
            rotation=np.eye(3),
            translation=np.zeros(3),
            depth=grid,
            image_digest=image_digest,
            timestamp=timestamp,
        )

    def to_wire(self, image_digest: str = "") -> dict:
        frame = self.build()
        grid: DepthGrid = frame.depth  # type: ignore[assignment]
        return {
            "width": frame.width,
            "height": frame.height,
            "intrinsics": {"fx": frame.fx, "fy": frame.fy, "cx": frame.cx, "cy": frame.cy},
            "pose": {
                "rotation": frame.rotation.ravel().tolist(),
                "translation": frame.translation.tolist(),
            },
            "depth": grid.to_wire(),
            "imageDigest": image_digest,
        }
