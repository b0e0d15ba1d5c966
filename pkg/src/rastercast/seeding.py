"""Deterministic seed derivation."""

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One output of the SplitMix64 generator seeded with ``x``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Scramble ``seed`` along a path of counters (run index, fold index, ...)."""
    x = splitmix64(seed & _MASK)
    for k in path:
        x = splitmix64((x + k) & _MASK)
    return x
