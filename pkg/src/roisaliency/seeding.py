"""Deterministic RNG derivation.

Every stochastic stage derives its generator from (seed, stream tag, indices)
via numpy's SeedSequence, so results never depend on the order in which work
units run. Stream tags keep independent stages from sharing draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

# stream tags (arbitrary but fixed; changing one changes all downstream draws)
STREAM_PARAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_DROPOUT = 3
STREAM_SAMPLING = 4
STREAM_BOOTSTRAP = 5
STREAM_SYNTH = 6
STREAM_REPEAT = 7


def spawn_generator(seed: int, *key: int) -> np.random.Generator:
    """A PCG64 generator keyed by (seed, *key); identical keys give identical streams."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def spawn_seed(seed: int, *key: int) -> int:
    """A derived integer seed (for handing a whole sub-pipeline its own root)."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def content_key(arr: np.ndarray) -> tuple[int, int]:
    """A stable 64-bit digest of an array's bytes, as two uint32 key parts.

    Keying per-image draws on content (rather than position in a worklist)
    makes results independent of scheduling and gives identical images
    identical draws.
    """
    digest = hashlib.blake2b(np.ascontiguousarray(arr).tobytes(), digest_size=8).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:], "little"),
    )
