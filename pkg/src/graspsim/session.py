"""The grasp session state machine.

One session owns one scene and walks the grasp pipeline:

    awaiting_prompt -> segmented_awaiting_confirm -> (relocating) ->
    approaching -> grasping -> done

Client messages (prompt / confirm / abort / set_speed) drive the early
transitions; tick() advances the simulated world through relocation,
approach, and grasp. All pipeline errors become outcome statuses, never
exceptions, and everything the session does is appended to an NDJSON
log so a run can be replayed byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np

from .control import (
    ApproachExecutor,
    ControlParams,
    GripExecutor,
    GripperPlant,
    PIDController,
    approach_direction,
    pregrasp_error,
)
from .errors import (
    AllInvalidDepth,
    BackendUnavailable,
    CollisionUnavoidable,
    DegenerateGeometry,
    GraspSimError,
    NoConvergence,
    NoObjectAtPrompt,
    TargetLost,
    Unreachable,
)
from .kinematics import forward_kinematics
from .motion import is_reachable, plan_platform_move
from .perception import (
    ExternalSegmenter,
    FrameTruth,
    MockSegmenter,
    Prompt,
    avg_depth,
    compute_cam_coords,
    init_tracker,
    mask_to_rle,
    segment,
    track_and_pos,
    transform_coords,
)
from .render import render_depth
from .simworld import (
    STREAM_TRACKER,
    PlatformPose,
    advance_platform,
    ground_truth_centroid,
    platform_arrived,
    step_world,
    stream_rng,
)
from .spatial import ARM_BASE, Point3

PHASES = (
    "awaiting_prompt",
    "segmented_awaiting_confirm",
    "relocating",
    "approaching",
    "grasping",
    "done",
)

MAX_RELOCATIONS = 3


def _prompt_from_message(msg: dict) -> Prompt:
    kind = msg.get("kind")
    if kind == "point":
        return Prompt("point", point=(int(msg["u"]), int(msg["v"])))
    if kind == "box":
        return Prompt("box", box=(int(msg["u0"]), int(msg["v0"]), int(msg["u1"]), int(msg["v1"])))
    if kind == "text":
        return Prompt("text", text=str(msg["text"]))
    raise KeyError(f"unknown prompt kind {kind!r}")


class GraspSession:
    def __init__(self, config, closed_loop: bool = True):
        self.config = config
        self.chain = config.chain()
        self.scene = config.scene()
        self.params: ControlParams = config.control()
        self.base_params = self.params
        self.pid: PIDController = config.pid()
        self.plant: GripperPlant = config.plant()
        seg = config.raw["segmenter"]
        if seg["backend"] == "external":
            self.backend = ExternalSegmenter(seg["host"], seg["port"], seg["timeout"])
        else:
            self.backend = MockSegmenter()
        self.phase = "awaiting_prompt"
        self.outcome: dict | None = None
        self.speed_scale = 1.0
        self.tick_index = 0
        self.replans = 0
        self.alignments = 0
        self.relocated = False
        self.final_error: float | None = None
        self.log: list[dict] = []
        self._pending = None  # (frame, labels, mask) awaiting confirmation
        self._tracker = None
        self._estimate: Point3 | None = None
        self._approach: ApproachExecutor | None = None
        self._advance: ApproachExecutor | None = None
        self._grip: GripExecutor | None = None
        self._platform_goal: PlatformPose | None = None
        self._relocations = 0
        self._log("config", config=config.effective())

    # -- logging ----------------------------------------------------------

    def _log(self, record: str, **fields):
        entry = {"record": record}
        entry.update(fields)
        self.log.append(entry)

    def log_lines(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.log)

    @property
    def done(self) -> bool:
        return self.phase == "done"

    # -- message handling ---------------------------------------------------

    def handle_message(self, msg) -> list[dict]:
        """Apply one client message; returns the responses. Malformed or
        out-of-phase messages produce an error response and leave the
        session unchanged."""
        self._log("message", dir="in", msg=msg)
        try:
            replies = self._dispatch(msg)
        except GraspSimError as exc:
            replies = [{"type": "error", "code": "protocol", "detail": str(exc)}]
        except (KeyError, TypeError, ValueError) as exc:
            replies = [{"type": "error", "code": "protocol", "detail": f"malformed message: {exc}"}]
        for r in replies:
            self._log("message", dir="out", msg=r)
        return replies

    def _dispatch(self, msg) -> list[dict]:
        if not isinstance(msg, dict) or "type" not in msg:
            return [{"type": "error", "code": "protocol", "detail": "message must be an object with a type"}]
        mtype = msg["type"]
        if mtype == "prompt":
            return self._on_prompt(msg)
        if mtype == "confirm":
            return self._on_confirm()
        if mtype == "abort":
            return self._on_abort()
        if mtype == "set_speed":
            return self._on_set_speed(msg)
        return [{"type": "error", "code": "protocol", "detail": f"unknown message type {mtype!r}"}]

    def _on_prompt(self, msg) -> list[dict]:
        if self.phase not in ("awaiting_prompt", "segmented_awaiting_confirm"):
            return [{"type": "error", "code": "protocol", "detail": f"prompt not allowed in phase {self.phase}"}]
        prompt = _prompt_from_message(msg)
        frame, labels = render_depth(self.scene)
        truth = FrameTruth(labels, self.scene.names())
        try:
            mask = segment(self.backend, frame, prompt, truth)
        except (NoObjectAtPrompt, BackendUnavailable, ValueError) as exc:
            return [{"type": "error", "code": "segmentation", "detail": str(exc)}]
        obj = self.scene.object_by_id(mask.object_label)
        if not obj.graspable:
            return [{"type": "error", "code": "segmentation", "detail": f"object {obj.name!r} is not graspable"}]
        self._pending = (frame, labels, mask)
        self._set_phase("segmented_awaiting_confirm")
        return [
            {
                "type": "segmentation",
                "mask_rle": mask_to_rle(mask),
                "score": mask.score,
                "label": obj.name,
            }
        ]

    def _on_confirm(self) -> list[dict]:
        if self.phase != "segmented_awaiting_confirm" or self._pending is None:
            return [{"type": "error", "code": "protocol", "detail": f"nothing to confirm in phase {self.phase}"}]
        frame, labels, mask = self._pending
        try:
            p_cam = compute_cam_coords(mask, frame)
        except AllInvalidDepth as exc:
            self._pending = None
            self._set_phase("awaiting_prompt")
            return [{"type": "error", "code": "segmentation", "detail": str(exc)}]
        fk = forward_kinematics(self.chain, self.scene.arm_theta)
        p_arm = transform_coords(p_cam, self.scene.hand_eye, fk)
        self._tracker = init_tracker(mask, p_arm)
        self._estimate = p_arm
        self._pending = None
        return self._begin_motion()

    def _begin_motion(self) -> list[dict]:
        """Reachability gate: start the approach or plan a relocation."""
        if is_reachable(self.chain, self._estimate, self.scene.arm_theta):
            return self._start_approach()
        if self._relocations >= MAX_RELOCATIONS:
            return self._finish("ik_failure")
        target_world = self.scene.base_transform().apply(self._estimate)
        try:
            goal = plan_platform_move(
                self.scene.platform, target_world, self.chain, mount_height=self.scene.arm_mount_height
            )
        except DegenerateGeometry:
            # Target above the base axis: retreat along the current heading
            # and re-evaluate from there.
            import math

            back = 0.6 * self.chain.max_reach
            goal = PlatformPose(
                self.scene.platform.x - back * math.cos(self.scene.platform.heading),
                self.scene.platform.y - back * math.sin(self.scene.platform.heading),
                self.scene.platform.heading,
            )
        self._platform_goal = goal
        self._relocations += 1
        self.relocated = True
        self._set_phase("relocating")
        return []

    def _start_approach(self) -> list[dict]:
        try:
            self._approach = ApproachExecutor(
                self.chain,
                self.backend,
                self._tracker,
                self._estimate,
                self.params,
                self.scene,
                obstacles_base=self._obstacles_in_base(),
            )
        except (NoConvergence, Unreachable):
            return self._finish("ik_failure")
        except CollisionUnavoidable:
            return self._finish("collision_abort")
        self._set_phase("approaching")
        return []

    def _obstacles_in_base(self):
        to_base = self.scene.base_transform().inverse()
        return tuple(replace(o, center=to_base.apply(o.center)) for o in self.scene.obstacles)

    def _on_abort(self) -> list[dict]:
        if self.phase == "done":
            return [{"type": "error", "code": "protocol", "detail": "session already finished"}]
        return self._finish("aborted_by_user")

    def _on_set_speed(self, msg) -> list[dict]:
        if self.phase == "done":
            return [{"type": "error", "code": "protocol", "detail": "session already finished"}]
        scale = float(msg["scale"])
        scale = min(max(scale, 0.1), 2.0)
        self.speed_scale = scale
        self.params = replace(self.base_params, v_max=self.base_params.v_max * scale)
        for executor in (self._approach, self._advance):
            if executor is not None:
                executor.params = self.params
        return [{"type": "speed", "scale": scale}]

    def _set_phase(self, phase: str) -> None:
        self.phase = phase
        self._log("phase", name=phase, t=round(self.scene.clock, 9))

    def _finish(self, status: str) -> list[dict]:
        self.outcome = {
            "type": "outcome",
            "status": status,
            "final_error": self.final_error,
            "replans": self.replans,
            "relocated": self.relocated,
            "ticks": self.tick_index,
        }
        self._set_phase("done")
        self._log("outcome", **{k: v for k, v in self.outcome.items() if k != "type"})
        return [dict(self.outcome)]

    # -- simulation ----------------------------------------------------------

    def tick(self) -> list[dict]:
        """Advance one control period of simulated time (in the phases
        that consume time) and return outbound messages."""
        if self.phase in ("awaiting_prompt", "segmented_awaiting_confirm", "done"):
            return []
        self.tick_index += 1
        try:
            if self.phase == "relocating":
                out = self._tick_relocating()
            elif self.phase == "approaching":
                out = self._tick_approaching()
            else:
                out = self._tick_grasping()
        except TargetLost:
            out = self._finish("target_lost")
        except (NoConvergence, Unreachable):
            out = self._finish("ik_failure")
        except CollisionUnavoidable:
            out = self._finish("collision_abort")
        return out + ([] if self.done else [self._telemetry()])

    def _track_during_drive(self):
        frame, labels = render_depth(self.scene)
        fk = forward_kinematics(self.chain, self.scene.arm_theta)
        rng = stream_rng(self.scene.rng_seed, self.scene.step_count, STREAM_TRACKER)
        self._tracker, est = track_and_pos(
            self._tracker,
            frame,
            self.backend,
            self.scene.hand_eye,
            fk,
            FrameTruth(labels, self.scene.names()),
            max_lost=self.params.max_lost,
            centroid_noise_px=self.params.centroid_noise_px,
            rng=rng,
        )
        self._estimate = est

    def _tick_relocating(self) -> list[dict]:
        self.scene = step_world(
            self.scene,
            self.params.dt,
            self.scene.arm_theta,
            platform_goal=self._platform_goal,
            platform_speed=self.config.raw["platform_speed"],
            platform_turn_rate=self.config.raw["platform_turn_rate"],
        )
        self._track_during_drive()
        if platform_arrived(self.scene.platform, self._platform_goal):
            self._platform_goal = None
            return self._begin_motion()
        return []

    def _tick_approaching(self) -> list[dict]:
        self.scene, done = self._approach.step(self.scene)
        self._tracker = self._approach.tracker
        self._estimate = self._approach.estimate
        self.replans = self._approach.replans + (self._advance.replans if self._advance else 0)
        self.alignments = self._approach.alignments
        if done:
            self.final_error = pregrasp_error(self.scene, self.chain, self._tracker.object_label, self.params)
            self._advance = ApproachExecutor(
                self.chain,
                self.backend,
                self._tracker,
                self._estimate,
                self.params,
                self.scene,
                obstacles_base=self._obstacles_in_base(),
                goal_offset=self.params.grasp_extra_advance,
            )
            self._set_phase("grasping")
        return []

    def _tick_grasping(self) -> list[dict]:
        if self._grip is None:
            self.scene, done = self._advance.step(self.scene)
            self._tracker = self._advance.tracker
            self._estimate = self._advance.estimate
            self.replans = self._approach.replans + self._advance.replans
            if done:
                self._grip = GripExecutor(
                    self.chain, self._tracker.object_label, self.params, pid=self.pid, plant=self.plant
                )
            return []
        self.scene, done = self._grip.step(self.scene)
        if done:
            if self._grip.result == "success":
                # Held object: stop its drift.
                target = self.scene.object_by_id(self._tracker.object_label)
                objects = tuple(
                    replace(o, drift_velocity=(0.0, 0.0, 0.0)) if o.id == target.id else o
                    for o in self.scene.objects
                )
                self.scene = replace(self.scene, objects=objects)
            return self._finish(self._grip.result or "grip_failure")
        return []

    def _telemetry(self) -> dict:
        gt = None
        if self._tracker is not None:
            try:
                world = ground_truth_centroid(self.scene, self._tracker.object_label)
                gt = [round(float(x), 9) for x in self.scene.base_transform().inverse().apply(world).xyz]
            except Exception:
                gt = None
        est = [round(float(x), 9) for x in self._estimate.xyz] if self._estimate is not None else None
        gripper = self._grip.gripper if self._grip is not None else None
        record = {
            "type": "telemetry",
            "t": round(self.scene.clock, 9),
            "phase": self.phase,
            "theta": [round(float(x), 9) for x in self.scene.arm_theta],
            "p_arm_est": est,
            "p_arm_gt": gt,
            "gripper": {
                "opening": round(gripper.opening, 9) if gripper else None,
                "force": round(gripper.force_reading, 9) if gripper else None,
            },
            "replans": self.replans,
        }
        self._log("telemetry", **{k: v for k, v in record.items() if k != "type"})
        return record
