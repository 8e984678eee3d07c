#!/usr/bin/env python3
"""Generate the end-to-end fixture scenarios.

Twenty scenarios: ten static in-reach targets with a mix of shapes,
prompt kinds, decoys and obstacles; five placed beyond the arm's reach
so the platform must relocate; five with drifting targets. All carry
depth noise sigma 2 mm and 5% dropout. Point-prompt pixel coordinates
are read off an initial render so they always land on the target.

Usage: python scripts/make_fixtures.py [--check]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from graspsim.config import parse_scenario
from graspsim.render import render_depth
from graspsim.runner import run_scenario

OUT = Path(__file__).resolve().parent.parent / "scenarios" / "e2e"

NOISE = {"depth_sigma": 0.002, "dropout_prob": 0.05, "servo_sigma": 0.0005, "quantization": 0.001}


def obj(oid, name, shape, dims, pos, drift=None, color=None, quat=None):
    o = {"id": oid, "name": name, "shape": shape, "dims": dims, "position": list(pos)}
    if drift:
        o["drift"] = list(drift)
    if color:
        o["color"] = list(color)
    if quat:
        o["rotation_quat"] = list(quat)
    return o


def centroid_prompt(config_dict, target_id):
    """Point prompt at the rendered mask centroid of the target."""
    probe = json.loads(json.dumps(config_dict))
    probe["prompt_script"] = []
    cfg = parse_scenario(probe)
    _, labels = render_depth(cfg.scene())
    vs, us = np.nonzero(labels == target_id)
    if us.size == 0:
        raise RuntimeError(f"target {target_id} not visible in {config_dict.get('name')}")
    return {"type": "prompt", "kind": "point", "u": int(round(us.mean())), "v": int(round(vs.mean()))}


def scenario(name, seed, objects, prompt, obstacles=None, extras=None):
    d = {
        "name": name,
        "seed": seed,
        "objects": objects,
        "noise": dict(NOISE),
        "prompt_script": [prompt, {"type": "confirm"}],
    }
    if obstacles:
        d["obstacles"] = obstacles
    if extras:
        d.update(extras)
    return d


def build_all():
    side = [0.7071067811865476, 0.7071067811865475, 0.0, 0.0]  # cylinder axis along world y
    fixtures = []

    # --- ten static, in reach -------------------------------------------
    fixtures.append(scenario(
        "static_box_text", 101,
        [obj(1, "red box", "box", [0.05, 0.05, 0.06], [0.60, 0.05, 0.20])],
        {"type": "prompt", "kind": "text", "text": "red box"}))

    fixtures.append(scenario(
        "static_sphere_point", 102,
        [obj(1, "ball", "sphere", [0.025], [0.56, -0.10, 0.18]),
         obj(2, "decoy", "box", [0.05, 0.05, 0.05], [0.62, 0.18, 0.20])],
        "POINT:1"))

    fixtures.append(scenario(
        "static_cylinder_upright", 103,
        [obj(1, "can", "cylinder", [0.025, 0.09], [0.58, 0.00, 0.16])],
        "POINT:1"))

    fixtures.append(scenario(
        "static_box_prompt_two_objects", 104,
        [obj(1, "big crate", "box", [0.06, 0.06, 0.07], [0.58, 0.08, 0.20]),
         obj(2, "small cube", "box", [0.04, 0.04, 0.04], [0.56, -0.16, 0.18])],
        "BOX:1"))

    fixtures.append(scenario(
        "static_with_obstacle", 105,
        [obj(1, "ball", "sphere", [0.03], [0.62, 0.00, 0.22])],
        "POINT:1",
        obstacles=[{"center": [0.35, 0.25, 0.15], "radius": 0.06}]))

    fixtures.append(scenario(
        "static_box_left", 106,
        [obj(1, "green box", "box", [0.05, 0.05, 0.05], [0.55, 0.17, 0.17])],
        {"type": "prompt", "kind": "text", "text": "green box"}))

    fixtures.append(scenario(
        "static_cylinder_side", 107,
        [obj(1, "rod", "cylinder", [0.022, 0.12], [0.60, -0.05, 0.24], quat=side)],
        "POINT:1"))

    fixtures.append(scenario(
        "static_small_sphere_right", 108,
        [obj(1, "marble", "sphere", [0.02], [0.54, -0.18, 0.15])],
        "POINT:1"))

    fixtures.append(scenario(
        "static_box_prompt_single", 109,
        [obj(1, "parcel", "box", [0.055, 0.05, 0.08], [0.64, -0.02, 0.21])],
        "BOX:1"))

    fixtures.append(scenario(
        "static_two_named", 110,
        [obj(1, "mug", "cylinder", [0.03, 0.08], [0.57, 0.12, 0.16]),
         obj(2, "bottle", "cylinder", [0.025, 0.10], [0.60, -0.13, 0.18])],
        {"type": "prompt", "kind": "text", "text": "bottle"}))

    # --- five requiring relocation ---------------------------------------
    reloc = [
        ("reloc_box_ahead", 201, obj(1, "crate", "box", [0.06, 0.06, 0.06], [1.90, 0.10, 0.22])),
        ("reloc_sphere_ahead", 202, obj(1, "ball", "sphere", [0.03], [1.70, -0.20, 0.20])),
        ("reloc_cylinder", 203, obj(1, "can", "cylinder", [0.027, 0.09], [2.10, 0.30, 0.18])),
        ("reloc_box_right", 204, obj(1, "parcel", "box", [0.05, 0.05, 0.07], [1.60, -0.45, 0.24])),
        ("reloc_far_box", 205, obj(1, "bin", "box", [0.07, 0.06, 0.08], [2.40, 0.00, 0.20])),
    ]
    for name, seed, target in reloc:
        fixtures.append(scenario(name, seed, [target], "POINT:1"))

    # --- five with drifting targets ---------------------------------------
    drifts = [
        ("drift_lateral", 301, obj(1, "ball", "sphere", [0.028], [0.58, -0.05, 0.20], drift=[0.0, 0.01, 0.0])),
        ("drift_diagonal", 302, obj(1, "cube", "box", [0.05, 0.05, 0.05], [0.56, 0.08, 0.19], drift=[0.006, -0.008, 0.0])),
        ("drift_away", 303, obj(1, "can", "cylinder", [0.025, 0.08], [0.55, 0.00, 0.18], drift=[0.01, 0.0, 0.0])),
        ("drift_toward", 304, obj(1, "ball", "sphere", [0.03], [0.64, 0.04, 0.21], drift=[-0.01, 0.0, 0.0])),
        ("drift_rising", 305, obj(1, "box", "box", [0.05, 0.05, 0.06], [0.59, -0.10, 0.17], drift=[0.0, 0.008, 0.006])),
    ]
    for name, seed, target in drifts:
        fixtures.append(scenario(name, seed, [target], "POINT:1"))

    return fixtures


def materialize(fixtures):
    OUT.mkdir(parents=True, exist_ok=True)
    for d in fixtures:
        prompt = d["prompt_script"][0]
        if prompt == "POINT:1":
            d["prompt_script"][0] = centroid_prompt(d, 1)
        elif prompt == "BOX:1":
            point = centroid_prompt(d, 1)
            half = 18
            d["prompt_script"][0] = {
                "type": "prompt", "kind": "box",
                "u0": max(point["u"] - half, 0), "v0": max(point["v"] - half, 0),
                "u1": min(point["u"] + half, d.get("intrinsics", {}).get("width", 320) - 1),
                "v1": min(point["v"] + half, d.get("intrinsics", {}).get("height", 240) - 1),
            }
        path = OUT / f"{d['name']}.json"
        path.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
        print("wrote", path.name)


def check():
    ok = 0
    for path in sorted(OUT.glob("*.json")):
        cfg = parse_scenario(json.loads(path.read_text()), str(path))
        t0 = time.perf_counter()
        row = run_scenario(cfg)
        status = row["status"]
        ok += status == "success"
        print(f"{path.stem:32s} {status:12s} err={row['final_error']} replans={row['replans']} "
              f"reloc={row['relocated']} ticks={row['ticks']} wall={time.perf_counter()-t0:.1f}s")
    print(f"{ok} successes")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--check", action="store_true", help="run every fixture and report outcomes")
    args = parser.parse_args()
    if args.check:
        check()
    else:
        materialize(build_all())
