"""Counter-based random streams.

Path ``p`` of stream ``(seed, stream)`` owns the Philox counter block
starting at ``p * blocks_per_path``.  A contiguous run of paths is one
contiguous stretch of counters, so it can be drawn in a single call and
still give every path exactly the values it would get on its own.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

#: shift that moves ``Generator.random`` output from [0, 1) to (0, 1)
_HALF_ULP = 2.0 ** -54
#: 64-bit words produced per Philox counter increment
_WORDS = 4

JUMPS = 0
INITIAL = 1


@lru_cache(maxsize=256)
def _key(seed: int, stream: tuple) -> np.ndarray:
    return np.random.SeedSequence(entropy=seed, spawn_key=stream).generate_state(2, np.uint64)


def _generator(seed: int, stream: tuple, block: int) -> np.random.Generator:
    counter = np.array([block % 2**64, block // 2**64, 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(int(seed), tuple(stream)), counter=counter))


def path_generator(seed: int, stream: tuple, path: int, per_path: int = 1 << 20) -> np.random.Generator:
    """Generator positioned at the start of ``path``'s counter block."""
    blocks = -(-per_path // _WORDS)
    return _generator(seed, stream, int(path) * blocks)


def path_uniforms(seed: int, stream: tuple, paths, shape) -> np.ndarray:
    """Uniforms in (0, 1), shape ``(len(paths), *shape)``; row ``j`` depends only on ``paths[j]``."""
    paths = np.asarray(paths, dtype=np.int64).ravel()
    shape = tuple(int(s) for s in shape)
    per_path = int(np.prod(shape)) if shape else 1
    blocks = -(-per_path // _WORDS)
    width = blocks * _WORDS
    out = np.empty((paths.size, per_path))
    # split into runs of consecutive path indices
    breaks = np.flatnonzero(np.diff(paths) != 1) + 1
    for run in np.split(np.arange(paths.size), breaks):
        if run.size == 0:
            continue
        first = int(paths[run[0]])
        gen = _generator(seed, stream, first * blocks)
        draw = gen.random((run.size, width))
        out[run] = draw[:, :per_path]
    out += _HALF_ULP
    return out.reshape((paths.size,) + shape)
