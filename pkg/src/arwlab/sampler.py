"""Counter-based random streams and lazy ``(K, nu)``-walk trajectories.

Draw ``k`` of walk ``i`` under master seed ``s`` is a pure function of
``(s, i, k)``: a SplitMix64 finalizer applied to a per-walk key plus the
counter. Any walk prefix can therefore be regenerated on demand, which is
what lets many coupled IDLA copies share one walk sequence without storing
trajectories.

The walk is the embedded jump chain: from ``x`` it moves to ``y`` with
probability ``K(x, y)`` and dies with the row deficit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import RunawayWalkError
from .network import Network

DEFAULT_STEP_CAP = 10**9
DEATH = -1

# domain tags keep walk, sleep-mark and selection streams disjoint
WALK_DOMAIN = 0
SLEEP_DOMAIN = 1
SELECT_DOMAIN = 2
SITE_WALK_DOMAIN = 3
SITE_SLEEP_DOMAIN = 4
MC_DOMAIN = 5

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_DOMAIN_MUL = np.uint64(0xD1B54A32D192ED03)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True, inline="always")
def stream_key(seed, domain, index):
    """64-bit key of stream ``index`` in ``domain`` under ``seed``."""
    k = mix64(np.uint64(seed) + _GOLDEN)
    k = mix64(k ^ (np.uint64(domain) * _DOMAIN_MUL + _GOLDEN))
    return mix64(k ^ mix64(np.uint64(index) + _GOLDEN))


@numba.njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform double in ``[0, 1)`` for draw ``counter`` of stream ``key``."""
    z = mix64(np.uint64(key) + (np.uint64(counter) + _ONE) * _GOLDEN)
    return np.float64(z >> _S11) * _INV53


@numba.njit(cache=True, inline="always")
def pick(cum, lo, hi, u):
    """First ``j`` in ``[lo, hi)`` with ``cum[j] > u``; ``hi`` if none."""
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(cache=True)
def _walk_prefix(indptr, indices, cum, nu_cum, nu_last, key, length, out):
    """Fill ``out`` with up to ``length`` symbols; returns count written (death included)."""
    u = uniform(key, np.uint64(0))
    x = pick(nu_cum, 0, nu_cum.size, u)
    if x > nu_last:
        x = nu_last
    out[0] = x
    k = 1
    while k < length:
        u = uniform(key, np.uint64(k))
        lo = indptr[x]
        hi = indptr[x + 1]
        j = pick(cum, lo, hi, u)
        if j == hi:
            out[k] = -1
            return k + 1
        x = indices[j]
        out[k] = x
        k += 1
    return k


@dataclass(frozen=True)
class Tables:
    """Cumulative sampling tables derived from a network, shared by all kernels."""

    indptr: np.ndarray
    indices: np.ndarray
    cum: np.ndarray
    nu_cum: np.ndarray
    nu_last: int

    @classmethod
    def of(cls, net: Network) -> "Tables":
        cached = net.__dict__.get("_tables")
        if cached is not None:
            return cached
        K = net.kernel
        indptr = K.indptr.astype(np.int64)
        indices = K.indices.astype(np.int64)
        cum = np.empty(K.data.size)
        for x in range(net.n):
            lo, hi = indptr[x], indptr[x + 1]
            cum[lo:hi] = np.cumsum(K.data[lo:hi])
        nu_cum = np.cumsum(net.insertion)
        nu_last = int(np.flatnonzero(net.insertion > 0)[-1])
        tables = cls(indptr, indices, cum, nu_cum, nu_last)
        net.__dict__["_tables"] = tables
        return tables


class WalkStream:
    """Deterministic stream of uniforms for walk ``index`` under ``seed``."""

    __slots__ = ("seed", "index", "domain", "key", "counter")

    def __init__(self, seed: int, index: int, domain: int = WALK_DOMAIN):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.index = int(index) & 0xFFFFFFFFFFFFFFFF
        self.domain = int(domain)
        self.key = np.uint64(stream_key(np.uint64(self.seed), np.uint64(self.domain), np.uint64(self.index)))
        self.counter = 0

    def draw(self, k: int) -> float:
        """Draw number ``k`` (random access; does not move the counter)."""
        return float(uniform(self.key, np.uint64(k)))

    def next(self) -> float:
        u = self.draw(self.counter)
        self.counter += 1
        return u

    def __repr__(self):
        return f"WalkStream(seed={self.seed}, index={self.index}, domain={self.domain})"


def walk_stream(seed: int, index: int) -> WalkStream:
    return WalkStream(seed, index)


def sample_walk(net: Network, stream: WalkStream, step_cap: int = DEFAULT_STEP_CAP):
    """Lazily yield the sites ``x_0, x_1, ...`` of one walk; ends after the last site.

    Draw 0 picks ``x_0`` from ``nu``; draw ``k`` picks the ``k``-th step
    from the kernel row, where the row deficit means death. The generator
    is exhausted when the walk dies, so ``len(list(...))`` is the life-time
    ``tau_dagger`` in steps.
    """
    t = Tables.of(net)
    x = int(pick(t.nu_cum, 0, t.nu_cum.size, stream.draw(0)))
    x = min(x, t.nu_last)
    k = 1
    while True:
        yield x
        if k >= step_cap:
            raise RunawayWalkError(f"walk {stream.index} exceeded {step_cap} steps")
        lo, hi = int(t.indptr[x]), int(t.indptr[x + 1])
        j = int(pick(t.cum, lo, hi, stream.draw(k)))
        if j == hi:
            return
        x = int(t.indices[j])
        k += 1


def walk_prefix(net: Network, seed: int, index: int, length: int) -> np.ndarray:
    """First ``length`` symbols of walk ``index`` via the compiled path (``-1`` = death)."""
    t = Tables.of(net)
    out = np.empty(length, dtype=np.int64)
    key = np.uint64(stream_key(np.uint64(seed), np.uint64(WALK_DOMAIN), np.uint64(index)))
    m = _walk_prefix(t.indptr, t.indices, t.cum, t.nu_cum, t.nu_last, key, length, out)
    return out[:m]
