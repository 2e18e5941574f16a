"""Internal DLA driven by i.i.d. ``(K, nu)``-walks.

Walker ``t`` of replica ``r`` is walk index ``r * 2**32 + t`` of the
counter-based stream family, so every copy of a grand coupling can
regenerate exactly the walk prefix it needs.

Two filling-time samplers are provided. The ``walk`` sampler scans each
trajectory literally until it leaves the occupied set. The ``ruin`` sampler
applies only to nearest-neighbour path networks that lose mass solely at
their two ends; there the first exit from a run of occupied sites is a
gambler's-ruin event with closed-form probabilities, so one walker costs
O(1) amortised instead of O(run length squared). Both draw from the same
law of the filling time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ParameterError, RunawayWalkError
from .network import Network
from .sampler import (
    DEFAULT_STEP_CAP,
    MC_DOMAIN,
    WALK_DOMAIN,
    Tables,
    WalkStream,
    pick,
    sample_walk,
    stream_key,
    uniform,
)

REPLICA_STRIDE = 2**32
_RUNAWAY = -1


class OccupiedSet:
    """Subset of ``range(n)`` with O(1) membership, insertion and cardinality."""

    __slots__ = ("mask", "size")

    def __init__(self, n: int, members=()):
        self.mask = np.zeros(n, dtype=bool)
        for x in members:
            self.mask[x] = True
        self.size = int(self.mask.sum())

    @classmethod
    def from_mask(cls, mask) -> "OccupiedSet":
        s = cls.__new__(cls)
        s.mask = np.array(mask, dtype=bool)
        s.size = int(s.mask.sum())
        return s

    @classmethod
    def full(cls, n: int) -> "OccupiedSet":
        return cls.from_mask(np.ones(n, dtype=bool))

    @property
    def n(self) -> int:
        return self.mask.size

    def __contains__(self, x) -> bool:
        return bool(self.mask[x])

    def __len__(self) -> int:
        return self.size

    def add(self, x: int) -> None:
        if not self.mask[x]:
            self.mask[x] = True
            self.size += 1

    def members(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.mask)]

    def copy(self) -> "OccupiedSet":
        return OccupiedSet.from_mask(self.mask)

    def issubset(self, other: "OccupiedSet") -> bool:
        return not np.any(self.mask & ~other.mask)

    def is_full(self) -> bool:
        return self.size == self.mask.size

    def __eq__(self, other):
        return isinstance(other, OccupiedSet) and np.array_equal(self.mask, other.mask)

    def __repr__(self):
        return f"OccupiedSet({self.members()})"


def parse_initial(net: Network, text: str) -> OccupiedSet:
    """``"empty"``, ``"all"`` or a comma-separated list of labels/indices."""
    text = text.strip()
    if text in ("", "empty", "none"):
        return OccupiedSet(net.n)
    if text in ("all", "full"):
        return OccupiedSet.full(net.n)
    items = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in net.labels:
            items.append(tok)
        elif tok.lstrip("-").isdigit():
            items.append(int(tok))
        else:
            items.append(tok)
    return OccupiedSet(net.n, net.resolve_sites(items))


def idla_update(S: OccupiedSet, walk) -> OccupiedSet:
    """Settle one walker: ``S`` plus the first site of ``walk`` outside ``S``.

    ``walk`` is any iterable of sites (a lazy trajectory is consumed only
    up to settlement). If the walk dies inside ``S``, ``S`` is returned
    unchanged. The input set is never mutated.
    """
    for x in walk:
        if x not in S:
            out = S.copy()
            out.add(x)
            return out
    return S


def first_exit(S: OccupiedSet, walk):
    """Site where ``walk`` first leaves ``S``, or ``None`` if it dies inside."""
    for x in walk:
        if x not in S:
            return x
    return None


@dataclass
class FillingRecord:
    """Filling time ``T`` of one run plus optional first-passage times ``T_k``.

    ``increments[j]`` is ``T_{k0 + j}`` where ``k0 = |A|``, so the last entry
    equals ``T``. Walk indices used are ``first_index .. first_index + T - 1``.
    """

    T: int
    increments: list | None
    seed: int
    first_index: int

    @property
    def walk_range(self) -> tuple[int, int]:
        return self.first_index, self.first_index + self.T


@numba.njit(cache=True)
def _fill_walk(indptr, indices, cum, nu_cum, nu_last, seed, base, occ, inc, record, step_cap):
    n = occ.size
    count = 0
    for i in range(n):
        if occ[i]:
            count += 1
    if record:
        inc[count] = 0
    t = 0
    while count < n:
        t += 1
        key = stream_key(seed, np.uint64(WALK_DOMAIN), np.uint64(base + t))
        x = pick(nu_cum, 0, nu_cum.size, uniform(key, np.uint64(0)))
        if x > nu_last:
            x = nu_last
        k = 1
        while occ[x]:
            if k >= step_cap:
                return _RUNAWAY
            lo = indptr[x]
            hi = indptr[x + 1]
            j = pick(cum, lo, hi, uniform(key, np.uint64(k)))
            if j == hi:
                x = -1
                break
            x = indices[j]
            k += 1
        if x >= 0:
            occ[x] = True
            count += 1
            if record:
                inc[count] = t
    return t


@numba.njit(cache=True)
def _fill_walk_many(indptr, indices, cum, nu_cum, nu_last, seed, first_replica, count, init, step_cap):
    out = np.empty(count, dtype=np.int64)
    inc = np.empty(1, dtype=np.int64)
    for r in range(count):
        occ = init.copy()
        base = (first_replica + r) * 4294967296
        out[r] = _fill_walk(indptr, indices, cum, nu_cum, nu_last, seed, base, occ, inc, False, step_cap)
    return out


@numba.njit(cache=True)
def _coupled(indptr, indices, cum, nu_cum, nu_last, seed, base, masks, t_max, record_sets, step_cap):
    m, n = masks.shape
    card = np.empty((t_max + 1, m), dtype=np.int64)
    sets = np.zeros((t_max + 1 if record_sets else 1, m, n), dtype=np.bool_)
    counts = np.zeros(m, dtype=np.int64)
    for i in range(m):
        for y in range(n):
            if masks[i, y]:
                counts[i] += 1
        card[0, i] = counts[i]
        if record_sets:
            sets[0, i, :] = masks[i, :]
    for t in range(1, t_max + 1):
        key = stream_key(seed, np.uint64(WALK_DOMAIN), np.uint64(base + t))
        x0 = pick(nu_cum, 0, nu_cum.size, uniform(key, np.uint64(0)))
        if x0 > nu_last:
            x0 = nu_last
        for i in range(m):
            if counts[i] < n:
                x = x0
                k = 1
                while masks[i, x]:
                    if k >= step_cap:
                        card[0, 0] = _RUNAWAY
                        return card, sets
                    lo = indptr[x]
                    hi = indptr[x + 1]
                    j = pick(cum, lo, hi, uniform(key, np.uint64(k)))
                    if j == hi:
                        x = -1
                        break
                    x = indices[j]
                    k += 1
                if x >= 0:
                    masks[i, x] = True
                    counts[i] += 1
            card[t, i] = counts[i]
            if record_sets:
                sets[t, i, :] = masks[i, :]
    return card, sets


# -- exact exit sampler for birth-death paths --------------------------------


@dataclass(frozen=True)
class PathLayout:
    """Path ordering plus scale function of a nearest-neighbour network.

    Positions ``1..n`` hold the sites in path order; positions ``0`` and
    ``n + 1`` stand for death off either end. ``scale`` is harmonic for the
    walk away from the cemetery, so from position ``s`` strictly inside
    ``(l, r)`` the walk reaches ``r`` first with probability
    ``(scale[s] - scale[l]) / (scale[r] - scale[l])``.
    """

    order: np.ndarray
    scale: np.ndarray
    nu_cum: np.ndarray
    nu_last: int

    @classmethod
    def detect(cls, net: Network, tol: float = 1e-12):
        """Return the layout, or ``None`` if ``net`` is not such a path."""
        n = net.n
        if n < 2:
            return None
        K = net.kernel.tocsr()
        nbrs = []
        for x in range(n):
            row = K.indices[K.indptr[x]:K.indptr[x + 1]]
            nbrs.append([int(y) for y in row if y != x])
        if any(len(v) > 2 for v in nbrs):
            return None
        if any(x not in nbrs[y] for x in range(n) for y in nbrs[x]):
            return None
        ends = [x for x in range(n) if len(nbrs[x]) == 1]
        if len(ends) != 2:
            return None
        order = [ends[0]]
        prev = -1
        while len(order) < n:
            cur = order[-1]
            nxt = [y for y in nbrs[cur] if y != prev]
            if not nxt:
                return None
            prev = cur
            order.append(nxt[0])
        if len(set(order)) != n:
            return None
        death = net.death
        interior = order[1:-1]
        if interior and np.max(death[interior]) > tol:
            return None
        if death[order[0]] <= tol or death[order[-1]] <= tol:
            return None
        D = K.toarray() if n <= 4096 else None

        def w(a, b):
            return float(D[a, b]) if D is not None else float(K[a, b])

        inc = np.empty(n + 1)
        inc[0] = 1.0
        for i, x in enumerate(order, start=1):
            left = death[x] if i == 1 else w(x, order[i - 2])
            right = death[x] if i == n else w(x, order[i])
            inc[i] = inc[i - 1] * left / right
        if not np.all(np.isfinite(inc)) or np.any(inc <= 0):
            return None
        scale = np.concatenate([[0.0], np.cumsum(inc)])
        nu_path = net.insertion[np.asarray(order)]
        nz = np.flatnonzero(nu_path > 0)
        return cls(np.asarray(order, dtype=np.int64), scale, np.cumsum(nu_path), int(nz[-1]))


@numba.njit(cache=True, inline="always")
def _find(ptr, i):
    root = i
    while ptr[root] != root:
        root = ptr[root]
    while ptr[i] != root:
        nxt = ptr[i]
        ptr[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _fill_ruin(scale, nu_cum, nu_last, seed, base, occ0):
    n = nu_cum.size
    right = np.arange(n + 2)
    left = np.arange(n + 2)
    count = 0
    for i in range(n):
        if occ0[i]:
            right[i + 1] = i + 2
            left[i + 1] = i
            count += 1
    t = 0
    while count < n:
        t += 1
        key = stream_key(seed, np.uint64(MC_DOMAIN), np.uint64(base + t))
        s = pick(nu_cum, 0, n, uniform(key, np.uint64(0)))
        if s > nu_last:
            s = nu_last
        s += 1
        if right[s] == s:
            x = s
        else:
            lo = _find(left, s)
            hi = _find(right, s)
            p_hi = (scale[s] - scale[lo]) / (scale[hi] - scale[lo])
            x = hi if uniform(key, np.uint64(1)) < p_hi else lo
            if x == 0 or x == n + 1:
                continue
        right[x] = x + 1
        left[x] = x - 1
        count += 1
    return t


@numba.njit(cache=True)
def _fill_ruin_many(scale, nu_cum, nu_last, seed, first_replica, count, occ0):
    out = np.empty(count, dtype=np.int64)
    for r in range(count):
        out[r] = _fill_ruin(scale, nu_cum, nu_last, seed, (first_replica + r) * 4294967296, occ0)
    return out


# -- public API --------------------------------------------------------------


def _seed(seed) -> np.uint64:
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


def _initial_mask(net: Network, A) -> np.ndarray:
    if A is None:
        return np.zeros(net.n, dtype=bool)
    if isinstance(A, OccupiedSet):
        if A.n != net.n:
            raise ParameterError("initial set belongs to a network of a different size")
        return A.mask.copy()
    mask = np.zeros(net.n, dtype=bool)
    mask[net.resolve_sites(A)] = True
    return mask


def run_filling(net: Network, seed, A=None, record_increments=False, replica=0,
                step_cap=DEFAULT_STEP_CAP) -> FillingRecord:
    """Run IDLA from ``A`` (empty by default) until every site is occupied.

    Walkers are walk indices ``replica * 2**32 + 1, + 2, ...``; each one is
    consumed only until it settles or dies.
    """
    net.require_valid()
    t = Tables.of(net)
    occ = _initial_mask(net, A)
    base = int(replica) * REPLICA_STRIDE
    inc = np.full(net.n + 1, -1, dtype=np.int64)
    k0 = int(occ.sum())
    T = _fill_walk(t.indptr, t.indices, t.cum, t.nu_cum, t.nu_last, _seed(seed), base,
                   occ, inc, bool(record_increments), int(step_cap))
    if T == _RUNAWAY:
        raise RunawayWalkError(f"a walker exceeded {step_cap} steps")
    increments = [int(v) for v in inc[k0:]] if record_increments else None
    return FillingRecord(int(T), increments, int(seed), base + 1)


def run_filling_reference(net: Network, seed, A=None, replica=0) -> FillingRecord:
    """Pure-Python filling run built from :func:`idla_update` and :func:`sample_walk`.

    Slow; exists so the compiled sampler can be checked walk for walk.
    """
    S = OccupiedSet.from_mask(_initial_mask(net, A))
    base = int(replica) * REPLICA_STRIDE
    incs = [0]
    t = 0
    while not S.is_full():
        t += 1
        S2 = idla_update(S, sample_walk(net, WalkStream(seed, base + t)))
        if S2.size > S.size:
            incs.append(t)
        S = S2
    return FillingRecord(t, incs, int(seed), base + 1)


def filling_times(net: Network, seed, replicas: int, first_replica=0, A=None,
                  method="walk", step_cap=DEFAULT_STEP_CAP) -> np.ndarray:
    """Filling times of replicas ``first_replica .. first_replica + replicas - 1``.

    ``method`` is ``"walk"`` (literal trajectories) or ``"ruin"`` (exact
    exit sampling, path networks only).
    """
    net.require_valid()
    occ = _initial_mask(net, A)
    if method == "walk":
        t = Tables.of(net)
        out = _fill_walk_many(t.indptr, t.indices, t.cum, t.nu_cum, t.nu_last, _seed(seed),
                              int(first_replica), int(replicas), occ, int(step_cap))
        if np.any(out == _RUNAWAY):
            raise RunawayWalkError(f"a walker exceeded {step_cap} steps")
        return out
    if method == "ruin":
        layout = PathLayout.detect(net)
        if layout is None:
            raise ParameterError("the ruin sampler needs a nearest-neighbour path leaking only at its ends")
        occ_path = occ[layout.order]
        return _fill_ruin_many(layout.scale, layout.nu_cum, layout.nu_last, _seed(seed),
                               int(first_replica), int(replicas), occ_path)
    raise ParameterError(f"unknown sampling method {method!r}")


@dataclass
class CoupledRun:
    """Cardinalities ``|S_t^{A_i}|`` for ``t = 0..t_max`` (rows) and copies (columns)."""

    cardinality: np.ndarray
    sets: np.ndarray | None
    seed: int
    first_index: int
    initial: list = field(default_factory=list)

    def set_at(self, t: int, i: int) -> OccupiedSet:
        if self.sets is None:
            raise ValueError("run was made without record_sets=True")
        return OccupiedSet.from_mask(self.sets[t, i])


def default_horizon(net: Network) -> int:
    from .greens import statistics

    return int(np.ceil(4 * net.n * statistics(net).t_rel))


def coupled_run(net: Network, seed, initial_sets, t_max=None, record_sets=False, replica=0,
                step_cap=DEFAULT_STEP_CAP) -> CoupledRun:
    """Evolve one IDLA copy per initial set with the same walker sequence."""
    net.require_valid()
    if t_max is None:
        t_max = default_horizon(net)
    if t_max < 0:
        raise ParameterError("horizon must be nonnegative")
    masks = np.stack([_initial_mask(net, A) for A in initial_sets]) if initial_sets else np.zeros((0, net.n), bool)
    t = Tables.of(net)
    base = int(replica) * REPLICA_STRIDE
    card, sets = _coupled(t.indptr, t.indices, t.cum, t.nu_cum, t.nu_last, _seed(seed), base,
                          masks, int(t_max), bool(record_sets), int(step_cap))
    if card.size and card[0, 0] == _RUNAWAY:
        raise RunawayWalkError(f"a walker exceeded {step_cap} steps")
    return CoupledRun(card, sets if record_sets else None, int(seed), base + 1,
                      [OccupiedSet.from_mask(m) for m in np.stack([_initial_mask(net, A) for A in initial_sets])]
                      if initial_sets else [])


def transition_case(A: OccupiedSet, B: OccupiedSet, walk) -> int:
    """Which of the four coupled-update cases a walk falls in, for ``A`` within ``B``.

    1: never leaves ``A``; 2: leaves ``A`` but not ``B``; 3: reaches the
    complement of ``B`` before ``B - A``; 4: reaches ``B - A`` first and
    later the complement of ``B``.
    """
    seen_gap = False
    for x in walk:
        if x in B and x not in A:
            seen_gap = True
        elif x not in B:
            return 4 if seen_gap else 3
    return 2 if seen_gap else 1
