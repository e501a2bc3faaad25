"""Geometry: unprojection round trips, depth fallback, guidance axes."""

from __future__ import annotations

import math

import numpy as np
import pytest

from xrguide.errors import MissingEndTarget, NoDepthAvailable
from xrguide.plan_model import ActionViz, ObjectViz, VizSpec, Waypoint, WaypointKind
from xrguide.prompt_engine import (
    Axis,
    RotationAnswer,
    RotationDirection,
    TransformAnswer,
    TransformEntry,
)
from xrguide.spatial import (
    AnchorConfidence,
    CameraFrame,
    DepthGrid,
    NormBox,
    RotationCue3D,
    box_center,
    guidance_axis_to_world,
    resolve_motion,
    unproject,
)

RNG = np.random.default_rng(20260808)


def random_rotation(rng) -> np.ndarray:
    """Uniform-ish rotation from a normalized random quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def forward_project(point, rotation, translation, fx, fy, cx, cy, width, height):
    """Independent pinhole projector: world point -> (u, v, z-depth).

    Deliberately written from first principles (inverse rigid transform plus
    perspective divide), not by calling anything in the library.
    """
    cam = rotation.T @ (np.asarray(point) - np.asarray(translation))
    px = fx * cam[0] / cam[2] + cx
    py = fy * cam[1] / cam[2] + cy
    return px / width * 1000.0, py / height * 1000.0, cam[2]


def make_frame(rotation=None, translation=None, depth=None, width=640, height=480):
    return CameraFrame(
        width=width,
        height=height,
        fx=500.0,
        fy=500.0,
        cx=width / 2,
        cy=height / 2,
        rotation=np.eye(3) if rotation is None else rotation,
        translation=np.zeros(3) if translation is None else translation,
        depth=depth or (lambda px, py: 1.0),
    )


class TestBoxCenter:
    def test_midpoint(self):
        assert box_center(NormBox(400, 400, 600, 600)) == (500, 500)

    def test_full_frame(self):
        assert box_center(NormBox(0, 0, 1000, 1000)) == (500, 500)

    def test_no_integer_truncation(self):
        assert box_center(NormBox(3, 7, 4, 9)) == (3.5, 8)


class TestNormBox:
    def test_bounds_enforced(self):
        with pytest.raises(ValueError):
            NormBox(-1, 0, 10, 10)
        with pytest.raises(ValueError):
            NormBox(0, 0, 1001, 10)

    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            NormBox(10, 0, 5, 10)


class TestUnproject:
    def test_principal_ray(self):
        frame = make_frame()
        anchor = unproject(frame, 500, 500)
        assert anchor.position == pytest.approx((0.0, 0.0, 1.0))
        assert anchor.confidence is AnchorConfidence.DEPTH_HIT

    def test_round_trip_oracle_thousand_cases(self):
        frame_shape = dict(fx=480.0, fy=520.0, width=800, height=600)
        failures = 0
        for _ in range(1000):
            rotation = random_rotation(RNG)
            translation = RNG.uniform(-2, 2, size=3)
            cx = frame_shape["width"] / 2 + RNG.uniform(-20, 20)
            cy = frame_shape["height"] / 2 + RNG.uniform(-20, 20)
            # sample a camera-space point safely inside the frustum, then
            # move it to world space so the projection lands in-image
            cam_point = np.array(
                [RNG.uniform(-0.4, 0.4), RNG.uniform(-0.3, 0.3), RNG.uniform(0.5, 5.0)]
            )
            world = rotation @ cam_point + translation
            u, v, z = forward_project(
                world,
                rotation,
                translation,
                frame_shape["fx"],
                frame_shape["fy"],
                cx,
                cy,
                frame_shape["width"],
                frame_shape["height"],
            )
            frame = CameraFrame(
                width=frame_shape["width"],
                height=frame_shape["height"],
                fx=frame_shape["fx"],
                fy=frame_shape["fy"],
                cx=cx,
                cy=cy,
                rotation=rotation,
                translation=translation,
                depth=lambda px, py, z=z: z,
            )
            anchor = unproject(frame, u, v)
            if np.linalg.norm(np.asarray(anchor.position) - world) >= 1e-6:
                failures += 1
        assert failures == 0

    def test_depth_hole_falls_back_to_box_median(self):
        grid = DepthGrid.constant(640, 480, 2.0)
        grid.data[240, 320] = 0.0  # hole exactly at the queried center
        frame = make_frame(depth=grid)
        box = NormBox(450, 450, 550, 550)
        anchor = unproject(frame, 500, 500, box=box)
        assert anchor.confidence is AnchorConfidence.DEPTH_FALLBACK
        assert anchor.position[2] == pytest.approx(2.0)

    def test_no_depth_anywhere(self):
        grid = DepthGrid.constant(640, 480, 0.0)
        frame = make_frame(depth=grid)
        with pytest.raises(NoDepthAvailable):
            unproject(frame, 500, 500, box=NormBox(400, 400, 600, 600))

    def test_degenerate_box_uses_neighborhood(self):
        grid = DepthGrid.constant(640, 480, 3.0)
        grid.data[240, 320] = float("nan")
        frame = make_frame(depth=grid)
        anchor = unproject(frame, 500, 500, box=NormBox(500, 500, 500, 500))
        assert anchor.confidence is AnchorConfidence.DEPTH_FALLBACK
        assert anchor.position[2] == pytest.approx(3.0)

    def test_scale_consistency(self):
        # doubling resolution with proportional intrinsics leaves world points alone
        small = make_frame(width=320, height=240)
        small.fx = small.fy = 250.0
        small.cx, small.cy = 160.0, 120.0
        big = make_frame(width=640, height=480)
        big.fx = big.fy = 500.0
        big.cx, big.cy = 320.0, 240.0
        for (u, v) in [(500, 500), (120, 730), (999, 1), (250, 250)]:
            a = unproject(small, u, v).position
            b = unproject(big, u, v).position
            assert a == pytest.approx(b, abs=1e-9)

    def test_invalid_rotation_rejected(self):
        with pytest.raises(ValueError):
            make_frame(rotation=np.eye(3) * 2.0)

    def test_reflection_rejected(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            make_frame(rotation=flip)


class TestGuidanceAxis:
    def test_identity_pose_x(self):
        assert guidance_axis_to_world(make_frame(), Axis.X) == pytest.approx((1, 0, 0))

    def test_identity_pose_y_points_physically_up(self):
        # +Y in image space points down, so "physically up" is world -Y here
        assert guidance_axis_to_world(make_frame(), Axis.Y) == pytest.approx((0, -1, 0))

    def test_identity_pose_z_toward_viewer(self):
        assert guidance_axis_to_world(make_frame(), Axis.Z) == pytest.approx((0, 0, -1))

    def test_rotated_pose_matches_independent_multiplication(self):
        angle = math.pi / 2
        rotation = np.array(
            [
                [math.cos(angle), 0, math.sin(angle)],
                [0, 1, 0],
                [-math.sin(angle), 0, math.cos(angle)],
            ]
        )
        frame = make_frame(rotation=rotation)
        got = np.asarray(guidance_axis_to_world(frame, Axis.X))
        expected = rotation @ np.array([1.0, 0.0, 0.0])
        assert got == pytest.approx(expected)
        assert np.linalg.norm(got) == pytest.approx(1.0, abs=1e-9)

    def test_triple_is_right_handed_orthonormal(self):
        for _ in range(50):
            frame = make_frame(rotation=random_rotation(RNG))
            x = np.asarray(guidance_axis_to_world(frame, Axis.X))
            y = np.asarray(guidance_axis_to_world(frame, Axis.Y))
            z = np.asarray(guidance_axis_to_world(frame, Axis.Z))
            for vec in (x, y, z):
                assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-9)
            assert abs(x @ y) < 1e-9 and abs(y @ z) < 1e-9 and abs(x @ z) < 1e-9
            assert np.cross(x, y) == pytest.approx(z, abs=1e-9)


def _spec(translation=False, rotation=False):
    waypoints = [Waypoint(WaypointKind.TARGET, "thing")]
    if translation:
        waypoints.append(Waypoint(WaypointKind.END_TARGET, "there"))
    return VizSpec(
        object_viz=ObjectViz.OUTLINE,
        action_viz=ActionViz.ARROW,
        waypoints=tuple(waypoints),
        needs_translation=translation,
        needs_rotation=rotation,
    )


class TestResolveMotion:
    def test_rotation_cue(self):
        frame = make_frame()
        answer = RotationAnswer(
            name="knob", pos=(450, 520, 560, 640), axis=Axis.Z, direction=RotationDirection.POSITIVE
        )
        cue = resolve_motion(_spec(rotation=True), answer, frame)
        assert isinstance(cue, RotationCue3D)
        assert cue.axis == pytest.approx((0, 0, -1))
        assert cue.direction is RotationDirection.POSITIVE
        assert cue.pivot.source_box == NormBox(450, 520, 560, 640)

    def test_translation_pair(self):
        frame = make_frame()
        answer = TransformAnswer(
            entries=(
                TransformEntry("starttarget", "glass", (100, 100, 200, 200)),
                TransformEntry("endtarget", "tray", (700, 700, 800, 800)),
            )
        )
        start, end = resolve_motion(_spec(translation=True), answer, frame)
        assert start.position != end.position

    def test_translation_missing_endtarget(self):
        frame = make_frame()
        answer = TransformAnswer(
            entries=(TransformEntry("starttarget", "glass", (100, 100, 200, 200)),)
        )
        with pytest.raises(MissingEndTarget):
            resolve_motion(_spec(translation=True), answer, frame)
