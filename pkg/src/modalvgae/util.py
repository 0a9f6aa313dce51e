"""Small shared helpers: canonical digests and seed-stream derivation."""

from __future__ import annotations

import hashlib
import json

import numpy as np

# stream tags keep per-purpose RNGs independent for the same truss index
STREAM_GEOMETRY = 0
STREAM_RAYLEIGH = 1
STREAM_EXCITATION = 2
STREAM_NOISE = 3
STREAM_MASKING = 4


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    """Stable content digest of a JSON-serializable object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def stream_seed(master_seed: int, index: int, tag: int) -> int:
    """Derive one 64-bit seed per (master, truss index, stream tag)."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index), int(tag)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream_rng(master_seed: int, index: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index), int(tag)])
    )
