#!/usr/bin/env python3
"""Export RLE golden fixtures for the operator console tests.

Masks come from real server segmentations (the demo scenario rendered
through the session) plus synthetic edge cases; each fixture records the
wire RLE, the set-pixel count, and a few sampled pixels so the console's
decoder can be checked independently of its encoder.
"""

import json
from pathlib import Path

import numpy as np

from graspsim.config import load_scenario
from graspsim.rle import encode_mask
from graspsim.session import GraspSession

OUT = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def fixture_from_bits(name, bits):
    rle = encode_mask(bits)
    vs, us = np.nonzero(bits)
    samples = []
    rng = np.random.default_rng(len(name))
    if vs.size:
        for i in rng.choice(vs.size, size=min(5, vs.size), replace=False):
            samples.append([int(vs[i]), int(us[i]), 1])
    zeros_v, zeros_u = np.nonzero(~bits)
    if zeros_v.size:
        for i in rng.choice(zeros_v.size, size=min(5, zeros_v.size), replace=False):
            samples.append([int(zeros_v[i]), int(zeros_u[i]), 0])
    return {
        "name": name,
        "mask_rle": rle,
        "popcount": int(bits.sum()),
        "samples": samples,
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    fixtures = []

    cfg = load_scenario(Path(__file__).resolve().parent.parent / "scenarios" / "demo.json")
    session = GraspSession(cfg)
    for prompt in (
        {"type": "prompt", "kind": "text", "text": "red box"},
        {"type": "prompt", "kind": "text", "text": "ball"},
        {"type": "prompt", "kind": "text", "text": "can"},
    ):
        replies = session.handle_message(prompt)
        assert replies[0]["type"] == "segmentation", replies
        rle = replies[0]["mask_rle"]
        from graspsim.rle import decode_mask

        fixtures.append(fixture_from_bits(f"server_{prompt['text'].replace(' ', '_')}", decode_mask(rle)))

    h, w = 24, 32
    fixtures.append(fixture_from_bits("empty", np.zeros((h, w), bool)))
    fixtures.append(fixture_from_bits("full", np.ones((h, w), bool)))
    single = np.zeros((h, w), bool)
    single[0, 0] = True
    fixtures.append(fixture_from_bits("first_pixel", single))
    last = np.zeros((h, w), bool)
    last[-1, -1] = True
    fixtures.append(fixture_from_bits("last_pixel", last))
    stripes = np.zeros((h, w), bool)
    stripes[:, ::2] = True
    fixtures.append(fixture_from_bits("stripes", stripes))

    out = OUT / "rle_goldens.json"
    out.write_text(json.dumps(fixtures, indent=1, sort_keys=True) + "\n")
    print(f"wrote {out} ({len(fixtures)} fixtures)")


if __name__ == "__main__":
    main()
