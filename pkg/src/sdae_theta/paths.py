"""Reproducible Brownian increments on dyadic grids with exact coarsening.

Increments are generated once at the finest level and coarse-grid
increments of the *same* path are obtained by summing adjacent pairs, one
level at a time.  That pairwise-halving construction makes the coupling
exact in the bitwise sense: coarsening to level ``l1`` equals coarsening to
``l2 > l1`` first and halving the rest of the way, float for float.

Randomness comes from the counter-based Philox generator keyed by
``(seed, stream)`` -- distinct path indices are distinct streams, so paths
are independent by construction and can be produced in any order.  Raw
53-bit uniforms are turned into normals with the Box-Muller transform.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

GENERATOR_ID = "philox4x64/boxmuller53/v1"

_MAGIC = b"SDAEBM01"
_HEADER = struct.Struct("<8sQQQ")  # magic, m, finest_level, count


@dataclass(frozen=True)
class BrownianLattice:
    """Finest-grid increments of one m-dimensional Brownian path.

    ``increments`` has shape ``(count, m)`` with ``count = horizon * 2**finest_level``
    and each entry distributed N(0, horizon / count).
    """

    seed: int
    stream: int
    m: int
    finest_level: int
    horizon: float
    increments: np.ndarray


def _normals(seed: int, stream: int, n: int) -> np.ndarray:
    """``n`` standard normals from the (seed, stream) Philox key via Box-Muller."""
    if n == 0:
        return np.zeros(0)
    key = np.array([seed % 2**64, stream % 2**64], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    pairs = (n + 1) // 2
    k1 = gen.integers(0, 2**53, size=pairs, dtype=np.uint64)
    k2 = gen.integers(0, 2**53, size=pairs, dtype=np.uint64)
    u1 = (k1 + 0.5) * 2.0**-53   # strictly inside (0, 1)
    u2 = (k2 + 0.5) * 2.0**-53
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * math.pi) * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n]


def _fine_count(finest_level: int, horizon: float) -> int:
    count = horizon * 2.0**finest_level
    rounded = round(count)
    if rounded < 1 or abs(count - rounded) > 1e-9:
        raise ValueError(
            f"horizon {horizon} is not an integer multiple of 2^-{finest_level}"
        )
    return int(rounded)


def generate(
    seed: int,
    m: int,
    finest_level: int,
    horizon: float,
    stream: int = 0,
) -> BrownianLattice:
    """Deterministic lattice of fine increments for one path.

    The same ``(seed, stream, m, finest_level, horizon)`` always yields the
    identical array; distinct streams are independent paths.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    count = _fine_count(finest_level, horizon)
    dt = horizon / count
    z = _normals(seed, stream, count * m)
    increments = (z * math.sqrt(dt)).reshape(count, m)
    return BrownianLattice(
        seed=seed,
        stream=stream,
        m=m,
        finest_level=finest_level,
        horizon=horizon,
        increments=increments,
    )


def coarsen_array(increments: np.ndarray, n_halvings: int) -> np.ndarray:
    """Pairwise-halve the time axis (second to last) ``n_halvings`` times."""
    arr = increments
    for _ in range(n_halvings):
        if arr.shape[-2] % 2 != 0:
            raise ValueError("increment count is not divisible by 2")
        arr = arr[..., 0::2, :] + arr[..., 1::2, :]
    return arr


def coarsen(lattice: BrownianLattice, level: int) -> np.ndarray:
    """Increments of the same path on the ``2^-level`` grid, shape ``(K, m)``.

    ``level == finest_level`` returns the fine increments unchanged.
    """
    if level > lattice.finest_level:
        raise ValueError(
            f"level {level} exceeds finest_level {lattice.finest_level}"
        )
    n_halvings = lattice.finest_level - level
    if lattice.increments.shape[0] % (2**n_halvings) != 0:
        raise ValueError(f"level {level} does not evenly divide the lattice")
    return coarsen_array(lattice.increments, n_halvings)


def save_lattice(lattice: BrownianLattice, path: str) -> None:
    """Debug dump: 32-byte header then the float64 little-endian increment array."""
    count = lattice.increments.shape[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, lattice.m, lattice.finest_level, count))
        fh.write(np.ascontiguousarray(lattice.increments, dtype="<f8").tobytes())


def load_lattice(path: str) -> BrownianLattice:
    """Read a dump written by :func:`save_lattice`.

    The header does not record the seed, so the loaded lattice carries
    ``seed = stream = -1``; the horizon is reconstructed from the count.
    """
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, m, finest_level, count = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}; not a lattice dump")
        data = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    if data.size != count * m:
        raise ValueError("truncated lattice dump")
    return BrownianLattice(
        seed=-1,
        stream=-1,
        m=int(m),
        finest_level=int(finest_level),
        horizon=count / 2.0 ** int(finest_level),
        increments=data.reshape(int(count), int(m)),
    )
