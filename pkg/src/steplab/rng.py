"""Deterministic stream splitting.

Every random draw in the package derives from a single run seed.  Purpose
tags and sample indices are folded into the seed with splitmix64, and the
result keys numpy's counter-based Philox generator, so any sample can be
regenerated in isolation and results never depend on execution order.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 mixing round; maps u64 -> u64."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fold(state, token):
    if isinstance(token, str):
        for b in token.encode():
            state = splitmix64(state ^ b)
        return state
    return splitmix64(state ^ (int(token) & _MASK))


def derive_seed(seed, *tags):
    """Mix purpose tags (ints or strings) into a 64-bit subseed."""
    state = splitmix64(int(seed) & _MASK)
    for tag in tags:
        state = _fold(state, tag)
    return state


def substream(seed, *tags):
    """Philox generator keyed by the (seed, tags) subseed."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *tags)))


def sample_prior(sched, d, count, seed):
    """Draw x_T ~ N(0, sigma_T^2 I), one substream per sample index."""
    sig = sched.sigma_T
    out = np.empty((count, d), dtype=np.float64)
    for i in range(count):
        out[i] = sig * substream(seed, "prior", i).standard_normal(d)
    return out
