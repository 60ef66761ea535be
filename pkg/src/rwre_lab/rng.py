"""Deterministic randomness utilities.

Two kinds of streams are needed:

* per-site randomness for environment realizations, which must be a pure
  function of (master seed, site coordinates) so that lazily extending a
  realization to new sites is order-independent;
* sequential streams for path simulation, where each walk gets its own
  counter-keyed generator so that parallel execution order never matters.

Site randomness is a splitmix64-style integer mix folded over the
coordinates.  Walk streams are numpy Philox generators keyed by
(master seed, stream index).
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GAMMA = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_INV53 = 1.0 / float(1 << 53)


def _splitmix64(z):
    """One splitmix64 finalization round (vectorized over uint64 arrays).

    Wraparound on add/multiply is the point of the mix; the errstate guard
    silences numpy's scalar overflow warning for 0-d inputs.
    """
    with np.errstate(over="ignore"):
        z = (z + _GAMMA).astype(_U64, copy=False)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _seed_word(seed: int) -> np.uint64:
    return _splitmix64(np.asarray(int(seed) & 0xFFFFFFFFFFFFFFFF, dtype=_U64))


def site_hash(seed: int, coords) -> np.ndarray:
    """Mix a master seed with integer site coordinates.

    coords has shape (..., d); returns uint64 of shape (...).  The fold is
    sequential over the d axes, so coordinate permutations hash differently.
    """
    coords = np.asarray(coords, dtype=np.int64)
    h = np.broadcast_to(_seed_word(seed), coords.shape[:-1]).copy()
    for k in range(coords.shape[-1]):
        h = _splitmix64(h ^ coords[..., k].astype(_U64))
    return h


def site_uniforms(seed: int, coords) -> np.ndarray:
    """Uniform [0,1) variates attached to lattice sites, shape (...,)."""
    return (site_hash(seed, coords) >> _U64(11)).astype(np.float64) * _INV53


def child_seed(seed: int, *indices: int) -> int:
    """Derive an independent sub-seed from a master seed and integer indices."""
    h = _seed_word(seed)
    for ix in indices:
        h = _splitmix64(h ^ np.asarray(int(ix) & 0xFFFFFFFFFFFFFFFF, dtype=_U64))
    return int(h)


def stream_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, stream); independent across streams."""
    key = np.array([_seed_word(seed), _seed_word(stream ^ 0x5DEECE66D)], dtype=_U64)
    return np.random.Generator(np.random.Philox(key=key))


class UniformBuffer:
    """Cheap sequential uniforms for tight walk loops."""

    __slots__ = ("_gen", "_buf", "_pos", "_block")

    def __init__(self, gen: np.random.Generator, block: int = 8192):
        self._gen = gen
        self._block = block
        self._buf = gen.random(block)
        self._pos = 0

    def next(self) -> float:
        if self._pos >= self._buf.shape[0]:
            self._buf = self._gen.random(self._block)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u
