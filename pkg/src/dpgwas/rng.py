"""Seeded random streams.

Every random quantity in the package is derived from a single 64-bit run seed.
A run seed is expanded into independent *streams* (one per purpose, e.g. the
stage-1 and stage-2 noise of a top-M release). Each stream is a Philox
counter-based generator, so the ``i``-th draw of a stream can be produced
without producing the ``i - 1`` draws before it.  Noise for SNP ``i`` is
always the ``i``-th variate of its stream; a worker that handles SNPs
``[start, stop)`` therefore reproduces exactly the values a serial run would.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_DOUBLE_SCALE = 2.0**-53


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream_key(seed: int, stream: int | tuple) -> np.ndarray:
    """Philox key for ``stream`` of run ``seed``."""
    spawn_key = stream if isinstance(stream, tuple) else (int(stream),)
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=spawn_key)
    return ss.generate_state(2, dtype=np.uint64)


def open_uniforms(seed: int, stream, start: int, count: int) -> np.ndarray:
    """Uniform variates on the open interval (0, 1) at positions [start, start+count).

    Each variate consumes one 64-bit output of the stream; the top 53 bits are
    used and shifted by half a unit so that neither 0 nor 1 can occur.
    """
    if start < 0 or count < 0:
        raise ValueError("start and count must be nonnegative")
    bitgen = np.random.Philox(key=stream_key(seed, stream))
    bitgen.advance(start // 4)
    skip = start % 4
    raw = bitgen.random_raw(skip + count)[skip:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _DOUBLE_SCALE


def generator(seed: int, stream=0) -> np.random.Generator:
    """A numpy Generator for ``stream`` of ``seed`` (sequential use only)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream)))


def child_seed(seed: int, *path: int) -> int:
    """Derive a 64-bit seed for a sub-task (grid cell, run index, chain)."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
