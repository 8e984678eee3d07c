"""Visual interpretation: promptable segmentation behind a backend
interface, mask depth averaging, pixel-to-camera back-projection, the
camera-to-arm coordinate chain, and the object tracker.

The in-process MockSegmenter is ground-truth aware by construction: it
answers prompts from the renderer's label image, standing in for a real
promptable-segmentation model. ExternalSegmenter speaks a small
newline-delimited JSON protocol to an out-of-process adapter instead.
"""

from __future__ import annotations

import base64
import io
import json
import socket
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from .errors import AllInvalidDepth, BackendUnavailable, FrameError, NoObjectAtPrompt, TargetLost
from .kinematics import Pose
from .rle import decode_mask, encode_mask
from .spatial import CAMERA, CameraIntrinsics, Point3, RigidTransform


@dataclass(frozen=True)
class DepthFrame:
    """Per-pixel depth in meters (0 = no return) plus the color image."""

    depth: np.ndarray  # (h, w) float64
    color: np.ndarray  # (h, w, 3) uint8
    intrinsics: CameraIntrinsics
    timestamp: float

    def __post_init__(self):
        h, w = self.depth.shape
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ValueError("depth dimensions do not match intrinsics")
        if self.color.shape[:2] != (h, w):
            raise ValueError("color dimensions do not match depth")
        if np.any(self.depth < 0) or np.any(self.depth >= 100.0):
            raise ValueError("depth values must be in [0, 100) meters")


@dataclass(frozen=True)
class SegmentMask:
    bits: np.ndarray  # (h, w) bool
    object_label: int
    score: float

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def centroid(self) -> tuple[float, float]:
        """Mean pixel coordinates (u, v) over the set pixels."""
        v, u = np.nonzero(self.bits)
        return float(u.mean()), float(v.mean())


@dataclass(frozen=True)
class Prompt:
    kind: str  # "point" | "box" | "text"
    point: tuple[int, int] | None = None
    box: tuple[int, int, int, int] | None = None  # u0, v0, u1, v1 inclusive
    text: str | None = None

    def __post_init__(self):
        if self.kind == "point":
            if self.point is None:
                raise ValueError("point prompt needs pixel coordinates")
        elif self.kind == "box":
            if self.box is None:
                raise ValueError("box prompt needs a rectangle")
        elif self.kind == "text":
            if not self.text:
                raise ValueError("text prompt needs a non-empty string")
        else:
            raise ValueError(f"unknown prompt kind {self.kind!r}")

    def validate_bounds(self, width: int, height: int) -> None:
        if self.kind == "point":
            u, v = self.point
            if not (0 <= u < width and 0 <= v < height):
                raise ValueError(f"prompt point ({u}, {v}) outside {width}x{height} frame")
        elif self.kind == "box":
            u0, v0, u1, v1 = self.box
            if not (0 <= u0 <= u1 < width and 0 <= v0 <= v1 < height):
                raise ValueError(f"prompt box {self.box} outside {width}x{height} frame")


@dataclass(frozen=True)
class FrameTruth:
    """Renderer ground truth handed to the mock backend: the per-pixel
    object id image and the id -> name table."""

    labels: np.ndarray  # (h, w) int32, 0 = background
    names: dict[int, str]


class SegmenterBackend(Protocol):
    def segment(self, frame: DepthFrame, prompt: Prompt, truth: FrameTruth | None = None) -> SegmentMask: ...

    def resegment(
        self, frame: DepthFrame, label: int, last_centroid: tuple[float, float], truth: FrameTruth | None = None
    ) -> SegmentMask | None: ...


class MockSegmenter:
    """Deterministic stand-in backend answering prompts from the label image."""

    def segment(self, frame: DepthFrame, prompt: Prompt, truth: FrameTruth | None = None) -> SegmentMask:
        if truth is None:
            raise ValueError("MockSegmenter needs frame ground truth")
        prompt.validate_bounds(frame.intrinsics.width, frame.intrinsics.height)
        labels = truth.labels
        if prompt.kind == "point":
            u, v = prompt.point
            label = int(labels[v, u])
            if label == 0:
                raise NoObjectAtPrompt(f"background at pixel ({u}, {v})")
        elif prompt.kind == "box":
            u0, v0, u1, v1 = prompt.box
            window = labels[v0 : v1 + 1, u0 : u1 + 1]
            present = np.unique(window)
            present = present[present > 0]
            if present.size == 0:
                raise NoObjectAtPrompt(f"no object inside box {prompt.box}")
            counts = [(int(np.count_nonzero(window == lab)), -int(lab)) for lab in present]
            # Largest overlap wins; ties go to the smaller label.
            best = max(range(len(counts)), key=lambda i: counts[i])
            label = int(present[best])
        else:
            matches = [lab for lab, name in truth.names.items() if name == prompt.text]
            if not matches:
                raise NoObjectAtPrompt(f"no object named {prompt.text!r}")
            label = min(matches)
            if not np.any(labels == label):
                raise NoObjectAtPrompt(f"object {prompt.text!r} not visible")
        return SegmentMask(labels == label, label, 1.0)

    def resegment(
        self, frame: DepthFrame, label: int, last_centroid: tuple[float, float], truth: FrameTruth | None = None
    ) -> SegmentMask | None:
        if truth is None:
            raise ValueError("MockSegmenter needs frame ground truth")
        bits = truth.labels == label
        if not bits.any():
            return None
        return SegmentMask(bits, label, 1.0)


class ExternalSegmenter:
    """Adapter client: one JSON request line per call over a local socket.

    Request: {frame_id, width, height, color: base64 PNG, prompt}
    Response: {mask: run-length-encoded rows, score}
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 7501, timeout: float = 0.5):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._frame_id = 0

    def _round_trip(self, payload: dict) -> dict:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
                sock.settimeout(self.timeout)
                sock.sendall(json.dumps(payload).encode() + b"\n")
                buf = b""
                while not buf.endswith(b"\n"):
                    chunk = sock.recv(65536)
                    if not chunk:
                        raise BackendUnavailable("adapter closed the connection")
                    buf += chunk
            return json.loads(buf)
        except (OSError, socket.timeout) as exc:
            raise BackendUnavailable(f"segmentation adapter unreachable: {exc}") from exc

    def _request(self, frame: DepthFrame, prompt_payload: dict) -> SegmentMask:
        from PIL import Image

        self._frame_id += 1
        png = io.BytesIO()
        Image.fromarray(frame.color).save(png, format="PNG")
        reply = self._round_trip(
            {
                "frame_id": self._frame_id,
                "width": frame.intrinsics.width,
                "height": frame.intrinsics.height,
                "color": base64.b64encode(png.getvalue()).decode(),
                "prompt": prompt_payload,
            }
        )
        if "error" in reply:
            raise NoObjectAtPrompt(str(reply["error"]))
        bits = decode_mask(reply["mask"]).astype(bool)
        label = int(reply.get("label", 0))
        return SegmentMask(bits, label, float(reply.get("score", 0.0)))

    def segment(self, frame: DepthFrame, prompt: Prompt, truth: FrameTruth | None = None) -> SegmentMask:
        prompt.validate_bounds(frame.intrinsics.width, frame.intrinsics.height)
        payload: dict = {"kind": prompt.kind}
        if prompt.kind == "point":
            payload["u"], payload["v"] = prompt.point
        elif prompt.kind == "box":
            payload["u0"], payload["v0"], payload["u1"], payload["v1"] = prompt.box
        else:
            payload["text"] = prompt.text
        mask = self._request(frame, payload)
        if mask.pixel_count == 0:
            raise NoObjectAtPrompt("adapter returned an empty mask")
        return mask

    def resegment(
        self, frame: DepthFrame, label: int, last_centroid: tuple[float, float], truth: FrameTruth | None = None
    ) -> SegmentMask | None:
        # Re-prompt with the previous centroid as a point prompt.
        u = int(round(last_centroid[0]))
        v = int(round(last_centroid[1]))
        if not (0 <= u < frame.intrinsics.width and 0 <= v < frame.intrinsics.height):
            return None
        try:
            mask = self._request(frame, {"kind": "point", "u": u, "v": v})
        except NoObjectAtPrompt:
            return None
        return mask if mask.pixel_count > 0 else None


def segment(backend: SegmenterBackend, frame: DepthFrame, prompt: Prompt, truth: FrameTruth | None = None) -> SegmentMask:
    return backend.segment(frame, prompt, truth)


def avg_depth(mask: SegmentMask, frame: DepthFrame) -> float:
    """Mean depth over masked pixels with a valid return.

    Zero depth means no return and is excluded. Pixels more than three
    standard deviations from the masked median are trimmed first, since
    real masks bleed onto the background.
    """
    if mask.bits.shape != frame.depth.shape:
        raise ValueError("mask does not match frame dimensions")
    values = frame.depth[mask.bits]
    values = values[values > 0]
    if values.size == 0:
        raise AllInvalidDepth("every masked pixel has zero depth")
    med = np.median(values)
    sigma = values.std()
    kept = values[np.abs(values - med) <= 3.0 * sigma]
    if kept.size == 0:
        kept = values
    return float(kept.mean())


def compute_cam_coords(mask: SegmentMask, frame: DepthFrame) -> Point3:
    """Back-project the mask's pixel centroid at its average depth."""
    d = avg_depth(mask, frame)
    u, v = mask.centroid()
    return frame.intrinsics.back_project(u, v, d)


def transform_coords(p_cam: Point3, hand_eye: RigidTransform, arm_fk: Pose) -> Point3:
    """Camera-frame point to the arm-base frame.

    hand_eye is the fixed extrinsic mapping camera coordinates into the
    end-effector frame (the camera rides the end-effector); the current
    forward kinematics carries the result into the arm base.
    """
    if p_cam.frame != CAMERA:
        raise FrameError(f"expected a camera-frame point, got {p_cam.frame!r}")
    return arm_fk.as_transform().compose(hand_eye).apply(p_cam)


@dataclass(frozen=True)
class TrackerState:
    object_label: int
    last_mask: SegmentMask
    last_centroid_px: tuple[float, float]
    last_p_arm: Point3
    lost_count: int = 0


MAX_LOST = 5


def init_tracker(mask: SegmentMask, p_arm: Point3) -> TrackerState:
    return TrackerState(mask.object_label, mask, mask.centroid(), p_arm, 0)


def track_and_pos(
    state: TrackerState,
    frame: DepthFrame,
    backend: SegmenterBackend,
    hand_eye: RigidTransform,
    arm_fk: Pose,
    truth: FrameTruth | None = None,
    max_lost: int = MAX_LOST,
    centroid_noise_px: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[TrackerState, Point3]:
    """Re-associate the target in a new frame and recompute its arm-frame
    position. Failed associations increment lost_count; the target is
    declared lost after max_lost consecutive failures."""
    mask = backend.resegment(frame, state.object_label, state.last_centroid_px, truth)
    if mask is not None and mask.pixel_count > 0:
        try:
            d = avg_depth(mask, frame)
        except AllInvalidDepth:
            mask = None
    if mask is None or mask.pixel_count == 0:
        lost = state.lost_count + 1
        if lost >= max_lost:
            raise TargetLost(f"no association for {lost} consecutive frames")
        return replace(state, lost_count=lost), state.last_p_arm
    u, v = mask.centroid()
    if centroid_noise_px > 0.0 and rng is not None:
        k = frame.intrinsics
        u = float(np.clip(u + rng.normal(0.0, centroid_noise_px), 0, k.width - 1))
        v = float(np.clip(v + rng.normal(0.0, centroid_noise_px), 0, k.height - 1))
    p_cam = frame.intrinsics.back_project(u, v, d)
    p_arm = transform_coords(p_cam, hand_eye, arm_fk)
    return TrackerState(state.object_label, mask, (u, v), p_arm, 0), p_arm


def mask_to_rle(mask: SegmentMask) -> dict:
    return encode_mask(mask.bits)
