"""Counter-based random numbers keyed by replicate.

Every replicate owns a 64-bit key and draws its k-th uniform as a pure
function of (key, k). A replicate's path therefore does not depend on how
replicates are batched or spread over workers.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2**64
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(master_seed: int, index: int) -> int:
    """Seed of replicate `index` under `master_seed`, as a python int."""
    z = np.array([(int(master_seed) * 0x2545F4914F6CDD1D + int(index) + 1) & _MASK],
                 dtype=np.uint64)
    return int(_mix(_mix(z) + _GOLDEN)[0])


def derive_seeds(master_seed: int, n: int, offset: int = 0) -> np.ndarray:
    return np.array([derive_seed(master_seed, offset + r) for r in range(n)], dtype=np.uint64)


def seed_key(seed) -> np.ndarray:
    """Stream key(s) for one or many seeds."""
    s = np.atleast_1d(np.asarray(seed, dtype=np.uint64))
    return _mix(s ^ np.uint64(0xD1B54A32D192ED03))


def uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform draws in the open interval (0, 1), one per (key, counter) pair."""
    c = np.asarray(counters, dtype=np.uint64) + np.uint64(1)
    z = _mix(np.asarray(keys, dtype=np.uint64) + c * _GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
