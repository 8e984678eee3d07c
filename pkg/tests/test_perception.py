import json
import math
import socket
import threading

import numpy as np
import pytest

from graspsim.errors import (
    AllInvalidDepth,
    BackendUnavailable,
    NoObjectAtPrompt,
    TargetLost,
)
from graspsim.kinematics import Pose, default_chain, forward_kinematics
from graspsim.perception import (
    DepthFrame,
    ExternalSegmenter,
    FrameTruth,
    MockSegmenter,
    Prompt,
    SegmentMask,
    avg_depth,
    compute_cam_coords,
    init_tracker,
    segment,
    track_and_pos,
    transform_coords,
)
from graspsim.render import render_depth
from graspsim.rle import decode_mask, encode_mask
from graspsim.simworld import NoiseModel, PlatformPose, Scene, SimObject, step_world
from graspsim.spatial import (
    ARM_BASE,
    CAMERA,
    END_EFFECTOR,
    WORLD,
    CameraIntrinsics,
    Point3,
    RigidTransform,
)

K = CameraIntrinsics(277.0, 277.0, 160.0, 120.0, 320, 240)


def blank_frame(depth=None):
    d = np.zeros((240, 320)) if depth is None else depth
    return DepthFrame(d, np.zeros((240, 320, 3), np.uint8), K, 0.0)


def truth_with_blob(label=1, u0=100, v0=80, u1=140, v1=120, name="box"):
    labels = np.zeros((240, 320), np.int32)
    labels[v0:v1, u0:u1] = label
    return FrameTruth(labels, {label: name})


# --- rle ---------------------------------------------------------------


def test_rle_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        bits = rng.random((24, 32)) > 0.6
        assert np.array_equal(decode_mask(encode_mask(bits)), bits)


def test_rle_empty_and_full():
    empty = np.zeros((4, 5), bool)
    full = np.ones((4, 5), bool)
    assert encode_mask(empty)["counts"] == [20]
    assert encode_mask(full)["counts"] == [0, 20]
    assert np.array_equal(decode_mask(encode_mask(empty)), empty)
    assert np.array_equal(decode_mask(encode_mask(full)), full)


def test_rle_rejects_bad_total():
    with pytest.raises(ValueError):
        decode_mask({"size": [2, 2], "counts": [5]})


# --- mock segmentation --------------------------------------------------


def test_point_prompt_returns_exact_object_pixels():
    truth = truth_with_blob()
    mask = segment(MockSegmenter(), blank_frame(), Prompt("point", point=(120, 100)), truth)
    assert np.array_equal(mask.bits, truth.labels == 1)
    assert mask.object_label == 1


def test_point_prompt_on_background():
    truth = truth_with_blob()
    with pytest.raises(NoObjectAtPrompt):
        segment(MockSegmenter(), blank_frame(), Prompt("point", point=(10, 10)), truth)


def test_point_prompt_out_of_bounds():
    truth = truth_with_blob()
    with pytest.raises(ValueError):
        segment(MockSegmenter(), blank_frame(), Prompt("point", point=(400, 100)), truth)


def test_box_prompt_larger_overlap_wins():
    labels = np.zeros((240, 320), np.int32)
    labels[100:120, 100:140] = 1  # 40 px wide
    labels[100:120, 150:160] = 2  # 10 px wide
    truth = FrameTruth(labels, {1: "big", 2: "small"})
    mask = segment(MockSegmenter(), blank_frame(), Prompt("box", box=(90, 90, 200, 130)), truth)
    assert mask.object_label == 1


def test_box_prompt_tie_breaks_to_smaller_label():
    labels = np.zeros((240, 320), np.int32)
    labels[100:120, 100:110] = 2
    labels[100:120, 120:130] = 1
    truth = FrameTruth(labels, {1: "a", 2: "b"})
    mask = segment(MockSegmenter(), blank_frame(), Prompt("box", box=(95, 95, 135, 125)), truth)
    assert mask.object_label == 1


def test_text_prompt_exact_match():
    truth = truth_with_blob(name="red box")
    mask = segment(MockSegmenter(), blank_frame(), Prompt("text", text="red box"), truth)
    assert mask.object_label == 1
    with pytest.raises(NoObjectAtPrompt):
        segment(MockSegmenter(), blank_frame(), Prompt("text", text="green box"), truth)


# --- avg depth ----------------------------------------------------------


def test_avg_depth_constant():
    truth = truth_with_blob()
    depth = np.zeros((240, 320))
    depth[truth.labels == 1] = 2.0
    mask = SegmentMask(truth.labels == 1, 1, 1.0)
    assert avg_depth(mask, blank_frame(depth)) == pytest.approx(2.0)


def test_avg_depth_mean_of_two_values():
    bits = np.zeros((240, 320), bool)
    bits[0, :10] = True
    depth = np.zeros((240, 320))
    depth[0, :5] = 1.0
    depth[0, 5:10] = 3.0
    assert avg_depth(SegmentMask(bits, 1, 1.0), blank_frame(depth)) == pytest.approx(2.0)


def test_avg_depth_ignores_invalid_pixels():
    bits = np.zeros((240, 320), bool)
    bits[0, :10] = True
    depth = np.zeros((240, 320))
    depth[0, :9] = 2.0  # one masked pixel stays invalid
    assert avg_depth(SegmentMask(bits, 1, 1.0), blank_frame(depth)) == pytest.approx(2.0)


def test_avg_depth_all_invalid():
    bits = np.zeros((240, 320), bool)
    bits[0, :10] = True
    with pytest.raises(AllInvalidDepth):
        avg_depth(SegmentMask(bits, 1, 1.0), blank_frame())


def test_avg_depth_trims_outliers():
    bits = np.zeros((240, 320), bool)
    bits[0, :100] = True
    depth = np.zeros((240, 320))
    depth[0, :99] = 1.0
    depth[0, 99] = 50.0  # background bleed
    got = avg_depth(SegmentMask(bits, 1, 1.0), blank_frame(depth))
    assert got == pytest.approx(1.0)


# --- back-projection ----------------------------------------------------


def test_cam_coords_at_principal_point():
    bits = np.zeros((240, 320), bool)
    bits[120, 160] = True
    depth = np.zeros((240, 320))
    depth[120, 160] = 1.5
    p = compute_cam_coords(SegmentMask(bits, 1, 1.0), blank_frame(depth))
    assert p == Point3(0.0, 0.0, 1.5, CAMERA)


def test_cam_coords_unit_tangent():
    bits = np.zeros((240, 320), bool)
    # fx = 277 but the image is only 320 wide, so use a synthetic camera
    k = CameraIntrinsics(100.0, 100.0, 160.0, 120.0, 320, 240)
    bits[120, 260] = True
    depth = np.zeros((240, 320))
    depth[120, 260] = 1.0
    frame = DepthFrame(depth, np.zeros((240, 320, 3), np.uint8), k, 0.0)
    p = compute_cam_coords(SegmentMask(bits, 1, 1.0), frame)
    assert abs(p.x - 1.0) < 1e-12 and abs(p.y) < 1e-12 and p.z == 1.0


def test_projection_inverse_property():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        u = rng.uniform(0, K.width - 1)
        v = rng.uniform(0, K.height - 1)
        d = rng.uniform(0.1, 10.0)
        u2, v2 = K.project(K.back_project(u, v, d))
        assert abs(u2 - u) < 1e-6 and abs(v2 - v) < 1e-6


# --- transform chain ----------------------------------------------------


def test_transform_coords_identity():
    hand_eye = RigidTransform(np.eye(3), [0, 0, 0], CAMERA, END_EFFECTOR)
    fk = Pose(Point3(0, 0, 0, ARM_BASE), np.eye(3))
    p = transform_coords(Point3(0.1, 0.2, 0.3, CAMERA), hand_eye, fk)
    assert np.allclose(p.xyz, [0.1, 0.2, 0.3])
    assert p.frame == ARM_BASE


def test_transform_coords_translation_only():
    hand_eye = RigidTransform(np.eye(3), [0, 0, 0.05], CAMERA, END_EFFECTOR)
    fk = Pose(Point3(0, 0, 0, ARM_BASE), np.eye(3))
    p = transform_coords(Point3(0, 0, 1.0, CAMERA), hand_eye, fk)
    assert np.allclose(p.xyz, [0, 0, 1.05])


def test_transform_coords_matches_matrix_oracle():
    rng = np.random.default_rng(15)
    chain = default_chain()
    for _ in range(30):
        theta = rng.uniform(chain.lower_limits * 0.7, chain.upper_limits * 0.7)
        fk = forward_kinematics(chain, theta)
        from graspsim.spatial import rotation_from_axis_angle

        r = rotation_from_axis_angle(rng.normal(size=3), rng.uniform(-math.pi, math.pi))
        t = rng.uniform(-0.1, 0.1, 3)
        hand_eye = RigidTransform(r, t, CAMERA, END_EFFECTOR)
        p_cam = rng.uniform(-0.5, 0.5, 3) + [0, 0, 1.0]

        he = np.eye(4)
        he[:3, :3] = r
        he[:3, 3] = t
        fkm = np.eye(4)
        fkm[:3, :3] = fk.orientation
        fkm[:3, 3] = fk.position.xyz
        expected = (fkm @ he @ np.append(p_cam, 1.0))[:3]

        got = transform_coords(Point3.from_array(p_cam, CAMERA), hand_eye, fk)
        assert np.allclose(got.xyz, expected, atol=1e-12)


def test_transform_coords_frame_check():
    hand_eye = RigidTransform(np.eye(3), [0, 0, 0], CAMERA, END_EFFECTOR)
    fk = Pose(Point3(0, 0, 0, ARM_BASE), np.eye(3))
    with pytest.raises(Exception):
        transform_coords(Point3(0, 0, 1.0, WORLD), hand_eye, fk)


# --- tracker ------------------------------------------------------------


def scene_with_ball(drift=(0.0, 0.0, 0.0), noise=NoiseModel(0, 0, 0, 0)):
    from graspsim.kinematics import DEFAULT_HOME

    chain = default_chain()
    return Scene(
        objects=(
            SimObject(1, "ball", "sphere", (0.04,), RigidTransform(np.eye(3), [0.6, 0.0, 0.2], "obj:1", WORLD), drift),
        ),
        obstacles=(),
        platform=PlatformPose(0, 0, 0),
        arm_theta=np.array(DEFAULT_HOME),
        chain=chain,
        hand_eye=RigidTransform(np.eye(3), [0, 0, -0.08], CAMERA, END_EFFECTOR),
        intrinsics=K,
        noise=noise,
        rng_seed=11,
    )


def fk_of(scene):
    return forward_kinematics(scene.chain, scene.arm_theta)


def test_tracker_static_object():
    scene = scene_with_ball()
    frame, labels = render_depth(scene)
    assert (labels == 1).any()
    truth = FrameTruth(labels, scene.names())
    backend = MockSegmenter()
    mask = segment(backend, frame, Prompt("text", text="ball"), truth)
    p0 = transform_coords(compute_cam_coords(mask, frame), scene.hand_eye, fk_of(scene))
    state = init_tracker(mask, p0)
    for _ in range(5):
        scene = step_world(scene, 0.02, scene.arm_theta)
        frame, labels = render_depth(scene)
        state, p = track_and_pos(state, frame, backend, scene.hand_eye, fk_of(scene), FrameTruth(labels, scene.names()))
        assert np.linalg.norm(p.xyz - p0.xyz) < 1e-6
        assert state.lost_count == 0


def test_tracker_lost_after_five_failures():
    scene = scene_with_ball()
    frame, labels = render_depth(scene)
    assert (labels == 1).any()
    truth = FrameTruth(labels, scene.names())
    backend = MockSegmenter()
    mask = segment(backend, frame, Prompt("text", text="ball"), truth)
    p0 = transform_coords(compute_cam_coords(mask, frame), scene.hand_eye, fk_of(scene))
    state = init_tracker(mask, p0)

    empty_truth = FrameTruth(np.zeros((240, 320), np.int32), scene.names())
    for i in range(4):
        state, p = track_and_pos(state, frame, backend, scene.hand_eye, fk_of(scene), empty_truth)
        assert state.lost_count == i + 1
        assert np.array_equal(p.xyz, p0.xyz)  # stale estimate returned
    with pytest.raises(TargetLost):
        track_and_pos(state, frame, backend, scene.hand_eye, fk_of(scene), empty_truth)


# --- external adapter ---------------------------------------------------


class FakeAdapter:
    """Tiny one-shot adapter server for protocol tests."""

    def __init__(self, reply=None, delay=0.0):
        self.reply = reply
        self.delay = delay
        self.requests = []
        self.sock = socket.socket()
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(1)
        self.port = self.sock.getsockname()[1]
        self.thread = threading.Thread(target=self._serve, daemon=True)
        self.thread.start()

    def _serve(self):
        conn, _ = self.sock.accept()
        data = b""
        while not data.endswith(b"\n"):
            chunk = conn.recv(65536)
            if not chunk:
                return
            data += chunk
        self.requests.append(json.loads(data))
        if self.delay:
            import time

            time.sleep(self.delay)
        if self.reply is not None:
            conn.sendall(json.dumps(self.reply).encode() + b"\n")
        conn.close()
        self.sock.close()


def test_external_segmenter_round_trip():
    bits = np.zeros((240, 320), bool)
    bits[100:110, 100:120] = True
    adapter = FakeAdapter(reply={"mask": encode_mask(bits), "score": 0.9, "label": 7})
    backend = ExternalSegmenter(port=adapter.port, timeout=2.0)
    mask = backend.segment(blank_frame(), Prompt("point", point=(105, 105)))
    assert np.array_equal(mask.bits, bits)
    assert mask.score == pytest.approx(0.9)
    assert mask.object_label == 7
    req = adapter.requests[0]
    assert req["width"] == 320 and req["height"] == 240
    assert req["prompt"] == {"kind": "point", "u": 105, "v": 105}
    assert isinstance(req["color"], str) and len(req["color"]) > 0


def test_external_segmenter_timeout():
    adapter = FakeAdapter(reply=None, delay=1.0)
    backend = ExternalSegmenter(port=adapter.port, timeout=0.2)
    with pytest.raises(BackendUnavailable):
        backend.segment(blank_frame(), Prompt("point", point=(10, 10)))


def test_external_segmenter_unreachable():
    backend = ExternalSegmenter(port=1, timeout=0.2)  # nothing listens there
    with pytest.raises(BackendUnavailable):
        backend.segment(blank_frame(), Prompt("point", point=(10, 10)))


def test_cam_coords_rendered_sphere_matches_ground_truth():
    # Rendered sphere at a known world position: the back-projected mask
    # centroid lands within 5 mm of the true center (camera at world
    # origin, so camera coordinates equal world coordinates).
    from graspsim.render import render_view
    from graspsim.simworld import SimObject

    cam = RigidTransform(np.eye(3), [0, 0, 0], CAMERA, WORLD)
    pos = np.array([0.03, -0.02, 0.8])
    sphere = SimObject(1, "dot", "sphere", (0.006,), RigidTransform(np.eye(3), pos, "obj:1", WORLD))
    depth, labels = render_view(cam, (sphere,), K)
    frame = DepthFrame(depth, np.zeros((240, 320, 3), np.uint8), K, 0.0)
    p_cam = compute_cam_coords(SegmentMask(labels == 1, 1, 1.0), frame)
    assert np.linalg.norm(p_cam.xyz - pos) < 0.005


def test_tracker_follows_drifting_object():
    # One-centimeter jumps between frames: ground-truth association keeps
    # the lock and the recomputed position stays within 5 mm of the true
    # centroid for a small target (surface-centroid bias included).
    from dataclasses import replace as dc_replace

    from graspsim.simworld import ground_truth_centroid

    scene = scene_with_ball(drift=(0.0, 0.01 / 0.02, 0.0))  # 1 cm per 20 ms frame
    scene = dc_replace(
        scene,
        objects=(dc_replace(scene.objects[0], dims=(0.006,)),),
    )
    frame, labels = render_depth(scene)
    assert (labels == 1).any()
    backend = MockSegmenter()
    mask = segment(backend, frame, Prompt("text", text="ball"), FrameTruth(labels, scene.names()))
    p0 = transform_coords(compute_cam_coords(mask, frame), scene.hand_eye, fk_of(scene))
    state = init_tracker(mask, p0)
    for _ in range(4):
        scene = step_world(scene, 0.02, scene.arm_theta)
        frame, labels = render_depth(scene)
        state, p = track_and_pos(
            state, frame, backend, scene.hand_eye, fk_of(scene), FrameTruth(labels, scene.names())
        )
        gt_world = ground_truth_centroid(scene, 1)
        gt_base = scene.base_transform().inverse().apply(gt_world)
        assert state.lost_count == 0
        assert np.linalg.norm(p.xyz - gt_base.xyz) < 0.005
