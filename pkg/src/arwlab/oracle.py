"""Exact ground truth for small systems.

Two independent routes to the same numbers:

- the subset chain of IDLA, whose absorption time is the filling time ``T``
  (survival, moments and mixing times by dynamic programming over subsets);
- the ARW transition operator ``P`` on ``{0, s}^V`` built by enumerating the
  stabilization state space, from which the separation and total-variation
  profiles and the spectral radius follow by dense linear algebra.

Subsets are bitmasks: site ``x`` belongs to ``S`` iff bit ``x`` is set.
Stable configurations are indexed the same way by their sleeping sites.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .arw import SLEEPING, ArwParams
from .errors import CapacityError, ParameterError
from .network import Network

SUBSET_CAP = 14
OPERATOR_CAP = 4
SOLVE_RESIDUAL_TOL = 1e-12
STOCHASTIC_TOL = 1e-10
UNIT_EIGEN_TOL = 1e-9
DEFAULT_EPS = (0.05, 0.25, 0.5, 0.75, 0.95)
_TSEP_STEP_CAP = 10**7


def _bits(mask: int, n: int) -> list[int]:
    return [x for x in range(n) if mask >> x & 1]


@dataclass
class SubsetKernel:
    """One-step law of the IDLA subset chain.

    ``q[S, y]`` is the probability that a fresh walker settles at ``y``
    (zero for ``y`` in ``S``); ``stay[S]`` is the probability it dies first.
    """

    n: int
    q: np.ndarray
    stay: np.ndarray
    residual: float
    p: np.ndarray = field(repr=False)

    @property
    def full(self) -> int:
        return (1 << self.n) - 1

    def as_mask(self, A) -> int:
        if A is None:
            return 0
        if isinstance(A, (int, np.integer)):
            return int(A)
        if hasattr(A, "members"):
            A = A.members()
        mask = 0
        for x in A:
            if not 0 <= int(x) < self.n:
                raise ParameterError(f"site {x} out of range")
            mask |= 1 << int(x)
        return mask


def subset_kernel(net: Network, cap: int = SUBSET_CAP) -> SubsetKernel:
    """Settlement law ``q_S`` for every ``S`` via absorbing solves on ``K[S, S]``.

    From ``x`` in ``S`` the exit law ``A_S(x, .)`` over the complement solves
    ``(I - K[S, S]) A_S = K[S, S^c]``; a walker born at ``x`` outside ``S``
    settles there immediately.
    """
    net.require_valid()
    n = net.n
    if n > cap:
        raise CapacityError(f"subset chain limited to {cap} sites, network has {n}")
    K = net.dense_kernel()
    nu = net.insertion
    size = 1 << n
    q = np.zeros((size, n))
    worst = 0.0
    for mask in range(size):
        inside = _bits(mask, n)
        outside = [y for y in range(n) if not mask >> y & 1]
        if not outside:
            continue
        row = np.zeros(n)
        row[outside] = nu[outside]
        if inside:
            M = np.eye(len(inside)) - K[np.ix_(inside, inside)]
            B = K[np.ix_(inside, outside)]
            exit_law = np.linalg.solve(M, B)
            worst = max(worst, float(np.max(np.abs(M @ exit_law - B), initial=0.0)))
            row[outside] += nu[inside] @ exit_law
        q[mask] = row
    stay = np.clip(1.0 - q.sum(axis=1), 0.0, 1.0)
    stay[size - 1] = 1.0
    p = np.array([q[(size - 1) ^ (1 << x), x] for x in range(n)])
    return SubsetKernel(n, q, stay, worst, p)


def _propagate(kern: SubsetKernel, dist: np.ndarray) -> np.ndarray:
    new = dist * kern.stay
    masks = np.arange(kern.full + 1)
    for y in range(kern.n):
        src = masks[(masks >> y & 1) == 0]
        new[src | (1 << y)] += dist[src] * kern.q[src, y]
    return new


def survival_curve(kern: SubsetKernel, A=None, t_max: int = 40) -> np.ndarray:
    """``P(T^A > t)`` for ``t = 0..t_max``."""
    if t_max < 0:
        raise ParameterError("t_max must be nonnegative")
    dist = np.zeros(kern.full + 1)
    dist[kern.as_mask(A)] = 1.0
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = max(0.0, 1.0 - dist[kern.full])
        if t < t_max:
            dist = _propagate(kern, dist)
    return out


def mixing_times(kern: SubsetKernel, eps_list=DEFAULT_EPS, A=None) -> dict:
    """Exact ``inf{t : P(T^A > t) <= eps}`` for each ``eps``."""
    eps_sorted = sorted(set(float(e) for e in eps_list), reverse=True)
    dist = np.zeros(kern.full + 1)
    dist[kern.as_mask(A)] = 1.0
    out, t = {}, 0
    for eps in eps_sorted:
        while 1.0 - dist[kern.full] > eps:
            dist = _propagate(kern, dist)
            t += 1
            if t > _TSEP_STEP_CAP:
                raise CapacityError("survival decays too slowly for exact mixing times")
        out[eps] = t
    return {e: out[float(e)] for e in eps_list}


def moments(kern: SubsetKernel) -> tuple[np.ndarray, np.ndarray]:
    """``h(S) = E[T^S]`` and ``Var(T^S)`` for every subset, by backward recursion."""
    size = kern.full + 1
    h = np.zeros(size)
    m2 = np.zeros(size)
    n = kern.n
    for mask in range(size - 2, -1, -1):
        out = [y for y in range(n) if not mask >> y & 1]
        nxt = np.array([mask | (1 << y) for y in out])
        qs = kern.q[mask, out]
        go = qs.sum()
        stay = 1.0 - go
        hm = (1.0 + qs @ h[nxt]) / go
        h[mask] = hm
        m2[mask] = (1.0 + 2.0 * (stay * hm + qs @ h[nxt]) + qs @ m2[nxt]) / go
    return h, np.maximum(m2 - h * h, 0.0)


@dataclass
class ExactReport:
    """Exact survival law of ``T^A`` and, for tiny systems, the ARW operator profiles."""

    survival: np.ndarray
    mean: float
    variance: float
    tsep: dict
    A: list = field(default_factory=list)
    lam: float | None = None
    P: np.ndarray | None = None
    pi: np.ndarray | None = None
    dsep: np.ndarray | None = None
    dsep_corner: np.ndarray | None = None
    dtv: np.ndarray | None = None
    rho: float | None = None
    t_rel_spectral: float | None = None
    tmix: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "A": list(self.A),
            "mean": self.mean,
            "variance": self.variance,
            "tsep": {str(k): v for k, v in self.tsep.items()},
            "survival": [float(v) for v in self.survival],
        }
        if self.P is not None:
            out.update({
                "lambda": self.lam,
                "pi": [float(v) for v in self.pi],
                "dsep": [float(v) for v in self.dsep],
                "dsep_corner": [float(v) for v in self.dsep_corner],
                "dtv": [float(v) for v in self.dtv],
                "rho": self.rho,
                "t_rel_spectral": self.t_rel_spectral,
                "tmix": {str(k): v for k, v in self.tmix.items()},
            })
        return out


def filling_time_law(kern: SubsetKernel, A=None, t_max: int = 40, eps_list=DEFAULT_EPS) -> ExactReport:
    """Survival, mean, variance and mixing times of ``T^A`` from the subset chain."""
    if t_max < 0:
        raise ParameterError("t_max must be nonnegative")
    mask = kern.as_mask(A)
    h, var = moments(kern)
    tsep = mixing_times(kern, eps_list, mask)
    return ExactReport(survival_curve(kern, mask, t_max), float(h[mask]), float(var[mask]), tsep,
                       _bits(mask, kern.n))


# -- the ARW operator ---------------------------------------------------------


def _selected(state, rule):
    sites = [x for x, v in enumerate(state) if v > 0]
    if not sites:
        return None
    return sites[0] if rule == "lowest" else sites[-1]


def _arrive(state, y):
    s = list(state)
    v = s[y]
    s[y] = 2 if v == SLEEPING else v + 1
    return tuple(s)


def _transitions(state, K, death, ps, rule):
    x = _selected(state, rule)
    lone = state[x] == 1
    move = (1.0 - ps) if lone else 1.0
    left = list(state)
    left[x] -= 1
    left = tuple(left)
    out = []
    if lone and ps > 0:
        s = list(state)
        s[x] = SLEEPING
        out.append((tuple(s), ps))
    for y in np.flatnonzero(K[x]):
        out.append((_arrive(left, int(y)), move * K[x, y]))
    if death[x] > 0:
        out.append((left, move * death[x]))
    return out


def exact_transition_operator(net: Network, lam: float, rule: str = "lowest",
                              cap: int = OPERATOR_CAP) -> np.ndarray:
    """Transition matrix of the ARW chain over ``{0, s}^V`` by exact stabilization.

    Every unstable configuration reachable from "stable state plus one
    particle" is enumerated breadth-first; absorption probabilities into the
    stable states come from one linear solve.
    """
    net.require_valid()
    n = net.n
    if n > cap:
        raise CapacityError(f"exact operator limited to {cap} sites, network has {n}")
    params = ArwParams(lam, rule)
    if rule == "random":
        raise ParameterError("the exact operator needs a deterministic selection rule")
    K = net.dense_kernel()
    death = net.death
    ps = params.sleep_probability
    size = 1 << n
    stable = [tuple(SLEEPING if m >> x & 1 else 0 for x in range(n)) for m in range(size)]
    stable_index = {s: i for i, s in enumerate(stable)}

    index, order, edges = {}, [], []
    queue = deque()
    for s in stable:
        for x in range(n):
            u = _arrive(s, x)
            if u not in index:
                index[u] = len(order)
                order.append(u)
                queue.append(u)
    while queue:
        u = queue.popleft()
        for v, w in _transitions(u, K, death, ps, rule):
            if v in stable_index:
                edges.append((index[u], ("stable", stable_index[v]), w))
            else:
                if v not in index:
                    index[v] = len(order)
                    order.append(v)
                    queue.append(v)
                edges.append((index[u], ("transient", index[v]), w))
    m = len(order)
    Q = np.zeros((m, m))
    R = np.zeros((m, size))
    for i, (kind, j), w in ((e[0], e[1], e[2]) for e in edges):
        if kind == "stable":
            R[i, j] += w
        else:
            Q[i, j] += w
    X = sla.solve(np.eye(m) - Q, R)
    P = np.zeros((size, size))
    nu = net.insertion
    for a, s in enumerate(stable):
        for x in range(n):
            if nu[x] > 0:
                P[a] += nu[x] * X[index[_arrive(s, x)]]
    return P


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    m = P.shape[0]
    A = np.vstack([P.T - np.eye(m), np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def spectral_radius(P: np.ndarray, tol: float = UNIT_EIGEN_TOL) -> float:
    """Largest modulus among eigenvalues at distance more than ``tol`` from 1."""
    z = sla.eigvals(P)
    rest = z[np.abs(z - 1.0) > tol]
    return float(np.max(np.abs(rest))) if rest.size else 0.0


def stationary_and_profiles(P: np.ndarray, t_max: int) -> dict:
    """``pi``, ``d_sep``, ``d_tv`` for ``t = 0..t_max``, and ``rho`` of a stochastic ``P``.

    ``dsep_corner`` is the separation at the single pair (all empty, all
    sleeping), which should attain the maximum.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ParameterError("transition matrix must be square")
    if P.min() < -STOCHASTIC_TOL or np.max(np.abs(P.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
        raise ParameterError("transition matrix is not row-stochastic")
    if t_max < 0:
        raise ParameterError("t_max must be nonnegative")
    pi = stationary_distribution(P)
    m = P.shape[0]
    Pt = np.eye(m)
    dsep = np.empty(t_max + 1)
    corner = np.empty(t_max + 1)
    dtv = np.empty(t_max + 1)
    for t in range(t_max + 1):
        ratio = 1.0 - Pt / pi[None, :]
        dsep[t] = ratio.max()
        corner[t] = ratio[0, m - 1]
        dtv[t] = 0.5 * np.abs(Pt - pi[None, :]).sum(axis=1).max()
        Pt = Pt @ P
    rho = spectral_radius(P)
    return {"pi": pi, "dsep": dsep, "dsep_corner": corner, "dtv": dtv, "rho": rho,
            "t_rel_spectral": math.inf if rho >= 1 else 1.0 / (1.0 - rho),
            "residual": float(np.max(np.abs(pi @ P - pi)))}


def _first_below(curve, eps):
    hits = np.flatnonzero(curve <= eps)
    return int(hits[0]) if hits.size else None


def exact_report(net: Network, lam=None, t_max: int = 40, mode: str = "subset",
                 eps_list=DEFAULT_EPS, A=None) -> ExactReport:
    """Everything the oracle knows about ``net``; ``mode`` is subset, operator or both."""
    if mode not in ("subset", "operator", "both"):
        raise ParameterError(f"unknown exact mode {mode!r}")
    if mode != "subset" and lam is None:
        raise ParameterError("the operator mode needs a sleep rate")
    if mode == "operator" and net.n > OPERATOR_CAP:
        raise CapacityError(f"exact operator limited to {OPERATOR_CAP} sites, network has {net.n}")
    kern = subset_kernel(net)
    rep = filling_time_law(kern, A, t_max, eps_list)
    if mode != "subset":
        P = exact_transition_operator(net, lam)
        prof = stationary_and_profiles(P, t_max)
        rep.lam = float(lam)
        rep.P = P
        rep.pi = prof["pi"]
        rep.dsep = prof["dsep"]
        rep.dsep_corner = prof["dsep_corner"]
        rep.dtv = prof["dtv"]
        rep.rho = prof["rho"]
        rep.t_rel_spectral = prof["t_rel_spectral"]
        rep.tmix = {e: _first_below(prof["dtv"], e) for e in eps_list}
    return rep
