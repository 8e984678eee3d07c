"""Run-length coding for binary masks on the wire.

Format: {"size": [height, width], "counts": [...]} with counts giving
alternating runs of zeros and ones over the row-major flattened mask,
always starting with a zero run (possibly of length 0).
"""

import numpy as np


def encode_mask(bits: np.ndarray) -> dict:
    bits = np.asarray(bits).astype(np.uint8).reshape(bits.shape[0], -1)
    flat = bits.ravel()
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    runs = (ends - starts).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return {"size": [int(bits.shape[0]), int(bits.shape[1])], "counts": runs}


def decode_mask(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = rle["counts"]
    if sum(counts) != h * w:
        raise ValueError(f"run lengths sum to {sum(counts)}, expected {h * w}")
    values = np.zeros(len(counts), dtype=np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, counts)
    return flat.reshape(h, w).astype(bool)
