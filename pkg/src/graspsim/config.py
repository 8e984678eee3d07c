"""Scenario file loading: strict schema validation, defaults, and
construction of the simulation objects a session needs.

Scenario files are single JSON documents validated against the schema
shipped in graspsim/schemas/. Parsing is strict: unknown fields are
rejected so experiment files stay reproducible. The effective (defaults
applied) configuration is echoed into every session log.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .control import ControlParams, GripperPlant, PIDController
from .errors import ParseError, SchemaError
from .kinematics import DEFAULT_DH_TABLE, DEFAULT_HOME, DEFAULT_TOOL_OFFSET, KinematicChain
from .simworld import NoiseModel, Obstacle, PlatformPose, Scene, SimObject
from .spatial import (
    CAMERA,
    END_EFFECTOR,
    WORLD,
    CameraIntrinsics,
    Point3,
    RigidTransform,
    rotation_from_quaternion,
)

DEFAULTS = {
    "name": "",
    "chain": {
        "links": DEFAULT_DH_TABLE,
        "tool_offset": DEFAULT_TOOL_OFFSET,
        "home": list(DEFAULT_HOME),
    },
    "hand_eye": {"translation": [0.0, 0.0, -0.08], "rotation_quat": [1.0, 0.0, 0.0, 0.0]},
    "intrinsics": {"fx": 277.0, "fy": 277.0, "cx": 160.0, "cy": 120.0, "width": 320, "height": 240},
    "platform": {"x": 0.0, "y": 0.0, "heading": 0.0},
    "arm_mount_height": 0.0,
    "platform_speed": 0.3,
    "platform_turn_rate": 1.0,
    "obstacles": [],
    "noise": {"depth_sigma": 0.0, "dropout_prob": 0.0, "servo_sigma": 0.0, "quantization": 0.001},
    "control": {
        "dt": 0.02,
        "v_max": 1.5,
        "replan_threshold": 0.005,
        "arrival_tol": 0.002,
        "pregrasp_standoff": 0.05,
        "grasp_extra_advance": 0.015,
        "latency_ticks": 2,
        "cart_step": 0.10,
        "link_radius": 0.03,
        "max_lost": 5,
        "centroid_noise_px": 0.0,
        "ik_seed": 0,
        "target_force": 5.0,
        "force_band": 0.2,
        "settle_time": 0.5,
        "grip_timeout": 5.0,
        "preclose_speed": 0.05,
        "grasp_radius": 0.02,
        "grasp_half_height": 0.03,
        "pid": {"kp": 2.0, "ki": 4.0, "kd": 0.05, "output_min": -0.05, "output_max": 0.05, "integral_cap": 0.01},
    },
    "segmenter": {"backend": "mock", "host": "127.0.0.1", "port": 7501, "timeout": 0.5},
    "prompt_script": [],
}

_OBJECT_DEFAULTS = {
    "rotation_quat": [1.0, 0.0, 0.0, 0.0],
    "drift": [0.0, 0.0, 0.0],
    "graspable": True,
}

_PALETTE = [
    (204, 84, 58),
    (66, 134, 198),
    (96, 172, 90),
    (196, 160, 64),
    (148, 96, 112),
    (90, 170, 170),
]


def _schema() -> dict:
    text = resources.files("graspsim.schemas").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def _merge(defaults, value):
    """Defaults applied recursively; scalars and arrays are taken as-is."""
    if isinstance(defaults, dict) and isinstance(value, dict):
        out = {}
        for key in defaults:
            out[key] = _merge(defaults[key], value[key]) if key in value else json.loads(json.dumps(defaults[key]))
        for key in value:
            if key not in defaults:
                out[key] = value[key]
        return out
    return value


@dataclass
class ScenarioConfig:
    raw: dict  # effective config, defaults applied
    path: str = ""

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def name(self) -> str:
        return self.raw["name"] or Path(self.path).stem or "scenario"

    @property
    def prompt_script(self) -> list[dict]:
        return list(self.raw["prompt_script"])

    def effective(self) -> dict:
        return json.loads(json.dumps(self.raw))

    def chain(self) -> KinematicChain:
        c = self.raw["chain"]
        return KinematicChain.from_table(c["links"], c["tool_offset"])

    def home(self) -> np.ndarray:
        return np.asarray(self.raw["chain"]["home"], dtype=float)

    def hand_eye(self) -> RigidTransform:
        he = self.raw["hand_eye"]
        rot = rotation_from_quaternion(*he["rotation_quat"])
        return RigidTransform(rot, he["translation"], CAMERA, END_EFFECTOR)

    def intrinsics(self) -> CameraIntrinsics:
        k = self.raw["intrinsics"]
        return CameraIntrinsics(k["fx"], k["fy"], k["cx"], k["cy"], k["width"], k["height"])

    def noise(self) -> NoiseModel:
        n = self.raw["noise"]
        return NoiseModel(n["depth_sigma"], n["dropout_prob"], n["servo_sigma"], n["quantization"])

    def platform(self) -> PlatformPose:
        p = self.raw["platform"]
        return PlatformPose(p["x"], p["y"], p["heading"])

    def objects(self) -> tuple[SimObject, ...]:
        out = []
        for i, o in enumerate(self.raw["objects"]):
            rot = rotation_from_quaternion(*o["rotation_quat"])
            pose = RigidTransform(rot, o["position"], f"obj:{o['id']}", WORLD)
            color = tuple(o.get("color") or _PALETTE[i % len(_PALETTE)])
            out.append(
                SimObject(
                    id=o["id"],
                    name=o["name"],
                    shape=o["shape"],
                    dims=tuple(o["dims"]),
                    pose=pose,
                    drift_velocity=tuple(o["drift"]),
                    graspable=o["graspable"],
                    color=color,
                )
            )
        return tuple(out)

    def obstacles(self) -> tuple[Obstacle, ...]:
        return tuple(
            Obstacle(Point3.from_array(ob["center"], WORLD), ob["radius"]) for ob in self.raw["obstacles"]
        )

    def control(self) -> ControlParams:
        c = {k: v for k, v in self.raw["control"].items() if k != "pid"}
        if "approach_axis" in c and c["approach_axis"] is not None:
            c["approach_axis"] = tuple(c["approach_axis"])
        return ControlParams(**c)

    def pid(self) -> PIDController:
        p = self.raw["control"]["pid"]
        return PIDController(p["kp"], p["ki"], p["kd"], p["output_min"], p["output_max"], p["integral_cap"])

    def plant(self) -> GripperPlant:
        return GripperPlant()

    def scene(self) -> Scene:
        return Scene(
            objects=self.objects(),
            obstacles=self.obstacles(),
            platform=self.platform(),
            arm_theta=self.home(),
            chain=self.chain(),
            hand_eye=self.hand_eye(),
            intrinsics=self.intrinsics(),
            noise=self.noise(),
            rng_seed=self.seed,
            arm_mount_height=float(self.raw["arm_mount_height"]),
        )


def _schema_error(err: jsonschema.ValidationError) -> SchemaError:
    path = ".".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "required":
        missing = err.message.split("'")[1]
        return SchemaError(f"{path}: missing required field '{missing}'")
    if err.validator == "additionalProperties":
        extra = err.message.split("'")[1] if "'" in err.message else "?"
        return SchemaError(f"{path}: unknown field '{extra}'")
    return SchemaError(f"{path}: {err.message}")


def parse_scenario(data: dict, path: str = "") -> ScenarioConfig:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0])
    merged = _merge(DEFAULTS, data)
    for obj in merged["objects"]:
        for key, val in _OBJECT_DEFAULTS.items():
            obj.setdefault(key, json.loads(json.dumps(val)))
    cfg = ScenarioConfig(merged, path)
    # Construction-time validation beyond what the schema encodes.
    cfg.scene()
    cfg.control()
    cfg.pid()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise SchemaError("<root>: scenario must be a JSON object")
    try:
        return parse_scenario(data, str(path))
    except (SchemaError, ParseError):
        raise
    except Exception as exc:
        raise SchemaError(f"invalid scenario values: {exc}") from exc
