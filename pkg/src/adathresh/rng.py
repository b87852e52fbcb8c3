"""Stateless counter-based random numbers.

Every variate is a pure function of ``(seed, stream tag, counter words)``,
so draws can be generated in any order, in any chunking and on any number of
workers and still be bit-identical.  The mixer is the SplitMix64 finaliser
applied to successive key words.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_MASK64 = (1 << 64) - 1

# stream tags keep independent uses of one seed apart
ASSIGN = 0xA551
SBM = 0x5B3
MC = 0x3C
ORACLE = 0x0AC1E
SEED = 0x5EED


def _mix(x):
    with np.errstate(over="ignore"):
        x = x ^ (x >> _S30)
        x = x * _M1
        x = x ^ (x >> _S27)
        x = x * _M2
        return x ^ (x >> _S31)


def _word(w):
    if isinstance(w, (int, np.integer)):
        return np.uint64(int(w) & _MASK64)
    return np.asarray(w).astype(np.uint64)


def counter_hash(seed, *words):
    """64-bit hash of ``seed`` and the key words (arrays broadcast)."""
    with np.errstate(over="ignore"):
        h = _mix(_word(seed) + _GOLDEN)
        for w in words:
            h = _mix(h ^ _mix(_word(w) + _GOLDEN))
    return h


def counter_uniform(seed, *words):
    """Uniform variates on [0, 1) with 53 random bits."""
    h = counter_hash(seed, *words)
    return (h >> _S11).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(seed, *words):
    """Derive an independent 64-bit seed, e.g. per experiment cell."""
    return int(counter_hash(seed, SEED, *words))
