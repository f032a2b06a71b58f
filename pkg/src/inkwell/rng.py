"""Counter-based randomness utilities.

Every stochastic component in the package draws its randomness from a single
integer seed, fanned out with :func:`derive`.  Derivation is a pure function
of the parent seed and a label path, so independent components can be
re-seeded without coordinating a shared generator, and any value can be
reproduced in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: int) -> int:
    # Finalizer from the splitmix64 generator; bijective on uint64.
    # Python ints so the deliberate wraparound never trips overflow warnings.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _splitmix64_array(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(_MASK64)
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(_MASK64)
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(_MASK64)
    return x ^ (x >> np.uint64(31))


def _token_to_u64(token: int | str) -> int:
    if isinstance(token, (int, np.integer)):
        return int(token) & _MASK64
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive(seed: int, *path: int | str) -> int:
    """Derive a child seed from ``seed`` and a label path.

    Deterministic, order-sensitive, and collision-resistant enough for
    experiment bookkeeping: ``derive(7, "train", 3)`` always names the same
    stream and is unrelated to ``derive(7, "train", 4)``.
    """
    h = _splitmix64(seed & _MASK64)
    for token in path:
        h = _splitmix64(h ^ _token_to_u64(token))
    return h


def generator(seed: int, *path: int | str) -> np.random.Generator:
    """NumPy generator seeded from a derived stream."""
    return np.random.default_rng(derive(seed, *path))


def counter_uniform(key: int, counters: np.ndarray) -> np.ndarray:
    """Uniform(0, 1) variates addressed by integer counters.

    The value at each counter is a pure function of ``(key, counter)``:
    permuting the counters permutes the outputs identically, which is what
    lets samplers stay equivariant under input reordering.  Outputs are in
    the open interval (0, 1).
    """
    counters = np.asarray(counters, dtype=np.uint64)
    bits = _splitmix64_array(np.uint64(key & _MASK64) ^ _splitmix64_array(counters))
    # 53-bit mantissa, offset by half a ulp to stay clear of exact 0 and 1
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0**-53)


def counter_gumbel(key: int, counters: np.ndarray) -> np.ndarray:
    """Standard Gumbel(0, 1) noise addressed by integer counters."""
    u = counter_uniform(key, counters)
    return -np.log(-np.log(u))
