"""Counter-based hashing RNG.

Every random number is a pure function of integer keys, so a value for
(frame k, channel c) never depends on how many values were drawn before it.
The same mixer is compiled into the render kernels (see ``render.kernels``);
``tests/test_rng.py`` checks the two agree bit-for-bit.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer on an unsigned 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash_keys(*keys: int) -> int:
    """Fold an arbitrary tuple of non-negative integer keys into 64 bits."""
    h = 0
    for k in keys:
        h = mix64((h + GOLDEN + (int(k) & MASK64)) & MASK64)
    return h


def to_unit(h: int) -> float:
    """Map 64 hash bits to a double in [0, 1) using the top 53 bits."""
    return (h >> 11) * (1.0 / 9007199254740992.0)


def uniform(lo: float, hi: float, *keys: int) -> float:
    return lo + (hi - lo) * to_unit(hash_keys(*keys))
