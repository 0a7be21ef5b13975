"""Small shared helpers: deterministic sub-RNG derivation and file hashing."""

import hashlib
import json

import numpy as np


def derive_rng(seed, label, *indices):
    """Independent generator derived from a run seed and a purpose label.

    All randomness in a run flows from one seed through named streams
    ("data", "mask", "init", "noise", ...) so each can be varied without
    disturbing the others.
    """
    tag = label + "|" + "|".join(str(i) for i in indices)
    key = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, key])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def fmt(x):
    """Stable float formatting for CSV output (byte-identical reruns)."""
    return format(float(x), ".12g")
