"""Counter-based random number generation on Philox-4x64-10.

Every draw is a pure function of a 256-bit counter and a 128-bit key, so a
value consumed at (trial, step, lane) is the same whether trials run
serially, chunked across workers, or fully vectorized.  Nothing here keeps
state between calls.

Counter layout (four uint64 words): ``(block, step << 32 | lane, trial,
stream)``.  The key is ``(master_seed, tag)``.  Streams keep unrelated
draws (reset coins, oracle noise, batch samples, subgradient noise, ...)
on disjoint counter domains.
"""

from __future__ import annotations

import numpy as np

# Disjoint counter domains, one per purpose.
STREAM_RESET = 0
STREAM_ORACLE = 1
STREAM_BATCH = 2
STREAM_SUBGRAD = 3
STREAM_MDS = 4
STREAM_MISC = 5

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_INV53 = float(2.0 ** -53)


def _mulhilo(a: np.uint64, b):
    """Full 64x64 -> 128 bit product as (high, low) words."""
    a_lo = a & _MASK32
    a_hi = a >> _SH32
    b_lo = b & _MASK32
    b_hi = b >> _SH32
    lo = a * b
    mid = a_lo * b_hi + ((a_lo * b_lo) >> _SH32)
    hi = a_hi * b_hi + (mid >> _SH32) + ((a_hi * b_lo + (mid & _MASK32)) >> _SH32)
    return hi, lo


def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox-4x64 with 10 rounds (Random123 reference constants).

    All arguments broadcast together; returns four uint64 arrays of the
    broadcast shape.
    """
    c0 = np.asarray(c0, dtype=np.uint64)
    c1 = np.asarray(c1, dtype=np.uint64)
    c2 = np.asarray(c2, dtype=np.uint64)
    c3 = np.asarray(c3, dtype=np.uint64)
    k0 = np.asarray(k0, dtype=np.uint64)
    k1 = np.asarray(k1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return c0, c1, c2, c3


def _raw(master: int, tag: int, stream: int, trial, step, lane, blocks: int):
    """uint64 words for the given lane: shape broadcast(trial, step) + (4*blocks,)."""
    trial = np.asarray(trial, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64)
    lane = np.asarray(lane, dtype=np.uint64)
    c1 = (step << _SH32) | lane
    base = np.broadcast(trial, c1)
    c0 = np.arange(blocks, dtype=np.uint64)
    c1 = np.broadcast_to(c1, base.shape)[..., None]
    c2 = np.broadcast_to(trial, base.shape)[..., None]
    x0, x1, x2, x3 = philox4x64(
        c0, c1, c2, np.uint64(stream), np.uint64(master), np.uint64(tag)
    )
    out = np.stack(np.broadcast_arrays(x0, x1, x2, x3), axis=-1)
    return out.reshape(base.shape + (4 * blocks,))


def uniforms(master, tag, stream, trial, step, count, lane=0):
    """i.i.d. uniforms on [0, 1), shape broadcast(trial, step) + (count,)."""
    blocks = -(-count // 4)
    words = _raw(master, tag, stream, trial, step, lane, blocks)
    return (words[..., :count] >> np.uint64(11)).astype(np.float64) * _INV53


def normals(master, tag, stream, trial, step, count, lane=0):
    """i.i.d. standard normals via Box-Muller, same addressing as uniforms."""
    pairs = -(-count // 2)
    u = uniforms(master, tag, stream, trial, step, 2 * pairs, lane=lane)
    r = np.sqrt(-2.0 * np.log1p(-u[..., :pairs]))
    theta = (2.0 * np.pi) * u[..., pairs:]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return z[..., :count]


def coins(master, tag, stream, trial, step, p, lane=0):
    """One Bernoulli(p) draw per (trial, step); p broadcasts."""
    u = uniforms(master, tag, stream, trial, step, 1, lane=lane)[..., 0]
    return u < p
