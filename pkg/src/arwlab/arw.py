"""Activated Random Walk on a killed network: stabilization, chain steps and
the two-stage stabilization that couples ARW with IDLA.

Randomness is attached to particles. The particle inserted at chain step
``t`` of replica ``r`` owns walk index ``r * 2**32 + t``; draw 0 of that
walk is its insertion site and draws ``1, 2, ...`` are its successive
kernel steps, exactly as for IDLA walker ``t``. Sleep decisions come from a
parallel stream of the same index. Particles that are present before any
insertion get ids from a disjoint index range.

Within a site the most recent arrival moves first. In Stage (i) after a
single insertion only the newcomer is ever displaced, so it follows its own
walk until it reaches an empty site or dies, which is IDLA's update.

A lone active particle falls asleep with probability ``lam / (1 + lam)``;
otherwise, and always when it shares its site, one particle takes a kernel
step. This is the rate description with the disabled sleep instruction at
crowded sites removed from the menu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, RunawayWalkError
from .network import Network
from .sampler import (
    SELECT_DOMAIN,
    SITE_WALK_DOMAIN,
    SLEEP_DOMAIN,
    WALK_DOMAIN,
    Tables,
    pick,
    stream_key,
    uniform,
)

SLEEPING = -1
RULES = ("lowest", "highest", "random")
DEFAULT_INSTRUCTION_CAP = 10**8
REPLICA_STRIDE = 2**32
_FRESH_BASE = 1 << 63


class Configuration:
    """Per-site states: ``0`` empty, ``SLEEPING`` (-1), or ``k >= 1`` active particles."""

    __slots__ = ("values",)

    def __init__(self, values):
        vals = tuple(int(v) for v in values)
        if any(v < SLEEPING for v in vals):
            raise ParameterError("site states must be -1 (sleeping), 0 or a positive count")
        self.values = vals

    @classmethod
    def empty(cls, n: int) -> "Configuration":
        return cls([0] * n)

    @classmethod
    def sleeping(cls, n: int) -> "Configuration":
        return cls([SLEEPING] * n)

    @classmethod
    def from_json(cls, items) -> "Configuration":
        vals = []
        for v in items:
            if v in ("0", 0):
                vals.append(0)
            elif v == "s":
                vals.append(SLEEPING)
            elif isinstance(v, int) and not isinstance(v, bool) and v >= 1:
                vals.append(v)
            else:
                raise ParameterError(f"bad site state {v!r}; expected \"0\", \"s\" or a positive integer")
        return cls(vals)

    def to_json(self) -> list:
        return ["0" if v == 0 else "s" if v == SLEEPING else v for v in self.values]

    @classmethod
    def from_stable_index(cls, n: int, index: int) -> "Configuration":
        """Stable state whose sleeping sites are the set bits of ``index``."""
        return cls([SLEEPING if index >> x & 1 else 0 for x in range(n)])

    def stable_index(self) -> int:
        if not self.is_stable():
            raise ParameterError("only stable configurations have a stable index")
        return sum(1 << x for x, v in enumerate(self.values) if v == SLEEPING)

    @property
    def n(self) -> int:
        return len(self.values)

    def is_stable(self) -> bool:
        return all(v <= 0 for v in self.values)

    def total(self) -> int:
        return sum(1 if v == SLEEPING else v for v in self.values)

    def support(self) -> list[int]:
        return [x for x, v in enumerate(self.values) if v != 0]

    def sleepers(self) -> int:
        return sum(v == SLEEPING for v in self.values)

    def rank(self, x: int) -> int:
        """Position of site ``x`` in the order ``0 < s < 1 < 2 < ...``."""
        v = self.values[x]
        return 1 if v == SLEEPING else 0 if v == 0 else v + 1

    def __le__(self, other: "Configuration") -> bool:
        return all(self.rank(x) <= other.rank(x) for x in range(self.n))

    def __eq__(self, other):
        return isinstance(other, Configuration) and self.values == other.values

    def __hash__(self):
        return hash(self.values)

    def __repr__(self):
        return "Configuration(" + " ".join(str(v) for v in self.to_json()) + ")"


@dataclass(frozen=True)
class ArwParams:
    """Sleep rate ``lam > 0`` (``math.inf`` allowed) and the site-selection rule."""

    lam: float
    rule: str = "lowest"

    def __post_init__(self):
        if not (self.lam > 0):
            raise ParameterError(f"sleep rate must be positive, got {self.lam!r}")
        if self.rule not in RULES:
            raise ParameterError(f"unknown selection rule {self.rule!r}; expected one of {RULES}")

    @property
    def sleep_probability(self) -> float:
        return 1.0 if math.isinf(self.lam) else self.lam / (1.0 + self.lam)


class InstructionStream:
    """Source of every random choice made during stabilization.

    ``replica`` shifts all particle indices by ``replica * 2**32`` so that
    replicas are disjoint, mirroring IDLA replica indexing.
    """

    def __init__(self, seed: int, replica: int = 0):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.base = int(replica) * REPLICA_STRIDE
        self._fresh = 0
        self._select_key = np.uint64(stream_key(self.seed, np.uint64(SELECT_DOMAIN), np.uint64(self.base)))
        self._select_counter = 0

    def inserted_id(self, t: int) -> int:
        return self.base + t

    def fresh_id(self) -> int:
        self._fresh += 1
        return _FRESH_BASE | (self.base + self._fresh)

    def keys(self, pid: int):
        idx = np.uint64(pid)
        return (np.uint64(stream_key(self.seed, np.uint64(WALK_DOMAIN), idx)),
                np.uint64(stream_key(self.seed, np.uint64(SLEEP_DOMAIN), idx)))

    def select(self) -> float:
        u = float(uniform(self._select_key, np.uint64(self._select_counter)))
        self._select_counter += 1
        return u


class _Particle:
    __slots__ = ("walk_key", "sleep_key", "k", "c")

    def __init__(self, keys):
        self.walk_key, self.sleep_key = keys
        self.k = 1  # draw 0 of the walk is the insertion site
        self.c = 0


class ArwState:
    """Mutable configuration with particle identities and instruction counters."""

    def __init__(self, net: Network, params: ArwParams, stream: InstructionStream,
                 instruction_cap: int = DEFAULT_INSTRUCTION_CAP):
        self.net = net
        self.params = params
        self.stream = stream
        self.tables = Tables.of(net)
        n = net.n
        self.stacks: list[list[_Particle]] = [[] for _ in range(n)]
        self.sleeper: list[_Particle | None] = [None] * n
        self.active: set[int] = set()
        self.cap = instruction_cap
        self.instructions = 0
        self.deaths = 0

    @classmethod
    def load(cls, net, params, config: Configuration, stream, **kw) -> "ArwState":
        if config.n != net.n:
            raise ParameterError(f"configuration has {config.n} sites, network has {net.n}")
        st = cls(net, params, stream, **kw)
        for x, v in enumerate(config.values):
            if v == SLEEPING:
                st.sleeper[x] = _Particle(stream.keys(stream.fresh_id()))
            for _ in range(max(v, 0)):
                st._arrive(x, _Particle(stream.keys(stream.fresh_id())))
        return st

    def configuration(self) -> Configuration:
        return Configuration([SLEEPING if self.sleeper[x] is not None else len(s)
                              for x, s in enumerate(self.stacks)])

    def total(self) -> int:
        return sum(len(s) for s in self.stacks) + sum(p is not None for p in self.sleeper)

    def insert(self, t: int) -> int:
        """Add inserted particle number ``t`` at its own ``nu``-draw; returns the site."""
        p = _Particle(self.stream.keys(self.stream.inserted_id(t)))
        tb = self.tables
        x = int(pick(tb.nu_cum, 0, tb.nu_cum.size, uniform(p.walk_key, np.uint64(0))))
        x = min(x, tb.nu_last)
        self._arrive(x, p)
        return x

    def _arrive(self, x: int, p: _Particle) -> None:
        s = self.sleeper[x]
        if s is not None:
            self.sleeper[x] = None
            self.stacks[x].append(s)
        self.stacks[x].append(p)
        self.active.add(x)

    def _select(self, sites) -> int:
        rule = self.params.rule
        if rule == "lowest":
            return min(sites)
        if rule == "highest":
            return max(sites)
        ordered = sorted(sites)
        return ordered[min(int(self.stream.select() * len(ordered)), len(ordered) - 1)]

    def _tick(self):
        self.instructions += 1
        if self.instructions > self.cap:
            raise RunawayWalkError(f"stabilization exceeded {self.cap} instructions")

    def _move_top(self, x: int) -> None:
        stack = self.stacks[x]
        p = stack.pop()
        if not stack:
            self.active.discard(x)
        tb = self.tables
        lo, hi = int(tb.indptr[x]), int(tb.indptr[x + 1])
        j = int(pick(tb.cum, lo, hi, uniform(p.walk_key, np.uint64(p.k))))
        p.k += 1
        if j == hi:
            self.deaths += 1
        else:
            self._arrive(int(tb.indices[j]), p)

    def topple(self, x: int) -> None:
        """One instruction at site ``x``, which must hold an active particle."""
        self._tick()
        stack = self.stacks[x]
        if len(stack) == 1:
            p = stack[0]
            u = float(uniform(p.sleep_key, np.uint64(p.c)))
            p.c += 1
            if u < self.params.sleep_probability:
                stack.pop()
                self.sleeper[x] = p
                self.active.discard(x)
                return
        self._move_top(x)

    def stage_one(self) -> None:
        """Move particles off crowded sites until every site holds at most one."""
        while True:
            crowded = [x for x in self.active if len(self.stacks[x]) >= 2]
            if not crowded:
                return
            self._tick()
            self._move_top(self._select(crowded))

    def stabilize(self) -> None:
        while self.active:
            self.topple(self._select(self.active))


def stabilize(net: Network, params: ArwParams, config: Configuration, stream: InstructionStream,
              instruction_cap: int = DEFAULT_INSTRUCTION_CAP) -> Configuration:
    """Run ARW dynamics from ``config`` until no active particle remains."""
    net.require_valid()
    st = ArwState.load(net, params, config, stream, instruction_cap=instruction_cap)
    st.stabilize()
    return st.configuration()


def arw_step(net: Network, params: ArwParams, config: Configuration, stream: InstructionStream,
             t: int = 1, instruction_cap: int = DEFAULT_INSTRUCTION_CAP) -> Configuration:
    """One chain step: insert particle ``t`` at a ``nu``-site, then stabilize."""
    if not config.is_stable():
        raise ParameterError("a chain step starts from a stable configuration")
    net.require_valid()
    st = ArwState.load(net, params, config, stream, instruction_cap=instruction_cap)
    st.insert(t)
    st.stabilize()
    return st.configuration()


def two_stage_trace(net: Network, params: ArwParams, config: Configuration, stream: InstructionStream,
                    instruction_cap: int = DEFAULT_INSTRUCTION_CAP):
    """Stabilize ``config`` in two stages; returns ``(zeta, xi)``.

    ``zeta`` is reached by moving only particles that are not alone, so it
    lies in ``{0, s, 1}^V``; ``xi`` completes the stabilization.
    """
    net.require_valid()
    st = ArwState.load(net, params, config, stream, instruction_cap=instruction_cap)
    st.stage_one()
    zeta = st.configuration()
    st.stabilize()
    return zeta, st.configuration()


def insert_and_trace(net: Network, params: ArwParams, t: int, stream: InstructionStream,
                     initial: Configuration | None = None,
                     instruction_cap: int = DEFAULT_INSTRUCTION_CAP):
    """Insert particles ``1..t`` into ``initial`` (empty by default) and stabilize in two stages.

    Stage (i) is run after each insertion; by the Abelian property of the
    move-only dynamics this has the same law as inserting all ``t`` first.
    From the empty configuration the support of ``zeta`` is then exactly the
    IDLA set ``S_t`` built from the same walk indices.
    """
    net.require_valid()
    initial = initial if initial is not None else Configuration.empty(net.n)
    st = ArwState.load(net, params, initial, stream, instruction_cap=instruction_cap)
    for s in range(1, t + 1):
        st.insert(s)
        st.stage_one()
    zeta = st.configuration()
    st.stabilize()
    return zeta, st.configuration()


class ArwChain:
    """The ARW chain on stable configurations, keeping particle identities across steps."""

    def __init__(self, net: Network, params: ArwParams, seed: int, initial: Configuration | None = None,
                 replica: int = 0, instruction_cap: int = DEFAULT_INSTRUCTION_CAP):
        net.require_valid()
        initial = initial if initial is not None else Configuration.empty(net.n)
        if not initial.is_stable():
            raise ParameterError("the chain starts from a stable configuration")
        self.stream = InstructionStream(seed, replica)
        self.state = ArwState.load(net, params, initial, self.stream, instruction_cap=instruction_cap)
        self.t = 0

    @property
    def configuration(self) -> Configuration:
        return self.state.configuration()

    def step(self) -> Configuration:
        self.t += 1
        self.state.insert(self.t)
        self.state.stabilize()
        return self.state.configuration()

    def run(self, steps: int):
        """Yield ``(t, configuration, instructions, deaths)`` after each step."""
        for _ in range(steps):
            before_i, before_d = self.state.instructions, self.state.deaths
            conf = self.step()
            yield self.t, conf, self.state.instructions - before_i, self.state.deaths - before_d


# -- site-wise instruction stacks ---------------------------------------------


class SiteStacks:
    """Stage (i) driven by instructions attached to sites instead of particles.

    The ``j``-th move out of site ``x`` uses draw ``j`` of the site stream of
    ``x``. With this encoding the move-only dynamics is Abelian path by path,
    which is the coupling behind the order-preservation of Stage (i).
    """

    def __init__(self, net: Network, seed: int):
        self.net = net
        self.tables = Tables.of(net)
        s = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self.keys = [np.uint64(stream_key(s, np.uint64(SITE_WALK_DOMAIN), np.uint64(x))) for x in range(net.n)]

    def stage_one(self, config: Configuration, rule: str = "lowest", rng=None,
                  instruction_cap: int = DEFAULT_INSTRUCTION_CAP) -> Configuration:
        """Topple crowded sites until each holds at most one particle.

        ``rule`` picks among crowded sites (``random`` uses ``rng``, a numpy
        generator); the output does not depend on it.
        """
        n = self.net.n
        count = [1 if v == SLEEPING else v for v in config.values]
        asleep = [v == SLEEPING for v in config.values]
        used = [0] * n
        tb = self.tables
        steps = 0
        while True:
            crowded = [x for x in range(n) if count[x] >= 2]
            if not crowded:
                break
            if rule == "lowest":
                x = crowded[0]
            elif rule == "highest":
                x = crowded[-1]
            else:
                x = crowded[int(rng.integers(len(crowded)))]
            steps += 1
            if steps > instruction_cap:
                raise RunawayWalkError(f"stage one exceeded {instruction_cap} instructions")
            asleep[x] = False
            lo, hi = int(tb.indptr[x]), int(tb.indptr[x + 1])
            j = int(pick(tb.cum, lo, hi, uniform(self.keys[x], np.uint64(used[x]))))
            used[x] += 1
            count[x] -= 1
            if j < hi:
                y = int(tb.indices[j])
                count[y] += 1
        return Configuration([SLEEPING if asleep[x] and count[x] == 1 else count[x] for x in range(n)])
