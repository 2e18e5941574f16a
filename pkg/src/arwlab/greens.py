"""Exact linear algebra for the killed walk: Green's function, hitting
probabilities and the closed-form mixing statistics of the ARW chain.

The Green's function ``G = (I - K)^{-1}`` counts expected visits. Column
``x`` of ``G`` divided by ``G[x, x]`` is the probability to hit ``x`` before
dying, so one factorization of ``I - K`` serves every target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateNetworkError, ParameterError
from .network import Network

DENSE_LIMIT = 2000
GREEN_RESIDUAL_TOL = 1e-10
REVERSIBLE_IDENTITY_TOL = 1e-9
_BLOCK = 256

CSV_COLUMNS = ("n", "p_star", "t_rel", "L", "R", "lifetime", "tsep_lower", "tsep_upper")


class _Factor:
    """LU factorization of ``I - K``: dense below ``DENSE_LIMIT`` sites, sparse above."""

    def __init__(self, net: Network):
        n = net.n
        self.n = n
        self.dense = n <= DENSE_LIMIT
        if self.dense:
            M = np.eye(n) - net.dense_kernel()
            self.matrix = M
            with np.errstate(all="ignore"):
                self.lu = sla.lu_factor(M, check_finite=False)
            if not np.all(np.isfinite(self.lu[0])) or np.any(np.diag(self.lu[0]) == 0):
                raise DegenerateNetworkError("I - K is singular")
        else:
            M = (sp.identity(n, format="csc") - net.kernel.tocsc()).tocsc()
            self.matrix = M
            try:
                self.lu = spla.splu(M)
            except RuntimeError as exc:
                raise DegenerateNetworkError(f"I - K is singular: {exc}") from None

    def solve(self, B, trans=False):
        if self.dense:
            return sla.lu_solve(self.lu, B, trans=1 if trans else 0, check_finite=False)
        return self.lu.solve(np.asarray(B, dtype=float), trans="T" if trans else "N")

    def diagonal_of_inverse(self) -> np.ndarray:
        n = self.n
        diag = np.empty(n)
        for start in range(0, n, _BLOCK):
            cols = np.arange(start, min(n, start + _BLOCK))
            E = np.zeros((n, cols.size))
            E[cols, np.arange(cols.size)] = 1.0
            diag[cols] = self.solve(E)[cols, np.arange(cols.size)]
        return diag


@dataclass
class GreenMatrix:
    """Dense Green's function ``G = I + K + K^2 + ...`` of expected visit counts."""

    matrix: np.ndarray
    residual: float

    def __array__(self, dtype=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def green_function(net: Network) -> GreenMatrix:
    """Return ``(I - K)^{-1}`` as a dense matrix.

    Raises
    ------
    DegenerateNetworkError
        If ``I - K`` is singular or the residual ``max |(I - K) G - I|``
        exceeds ``GREEN_RESIDUAL_TOL``.
    """
    fac = _Factor(net)
    G = fac.solve(np.eye(net.n))
    residual = float(np.max(np.abs(fac.matrix @ G - np.eye(net.n))))
    if not np.isfinite(residual) or residual > GREEN_RESIDUAL_TOL:
        raise DegenerateNetworkError(f"Green's function residual {residual:.3g} too large")
    return GreenMatrix(G, residual)


def _hitting_from(fac: _Factor, diag: np.ndarray, start: np.ndarray) -> np.ndarray:
    # (start @ G)(x) / G(x, x) = P_start(tau_x < tau_dagger)
    visits = fac.solve(start, trans=True)
    return np.clip(visits / diag, 0.0, 1.0)


def hitting_probabilities(net: Network, start=None) -> np.ndarray:
    """Vector ``p(x) = P_nu(tau_x < tau_dagger)`` for every site ``x``.

    ``start`` replaces ``nu`` as the initial law when given.
    """
    net.require_valid()
    fac = _Factor(net)
    law = net.insertion if start is None else np.asarray(start, dtype=float)
    return _hitting_from(fac, fac.diagonal_of_inverse(), law)


def hitting_probability_set(net: Network, A) -> float:
    """``P_nu(tau_A < tau_dagger)``: probability that a walk ever visits ``A``."""
    net.require_valid()
    members = net.resolve_sites(_members(A))
    if not members:
        raise ParameterError("hitting probability of the empty set is undefined")
    inside = np.zeros(net.n, dtype=bool)
    inside[members] = True
    out = np.flatnonzero(~inside)
    if out.size == 0:
        return 1.0
    K = net.kernel
    Koo = K[out][:, out]
    b = np.asarray(K[out][:, np.flatnonzero(inside)].sum(axis=1)).ravel()
    M = sp.identity(out.size, format="csc") - Koo.tocsc()
    h = spla.spsolve(M, b) if out.size > 1 else np.array([b[0] / M.toarray()[0, 0]])
    nu = net.insertion
    return float(min(1.0, nu[inside].sum() + nu[out] @ np.atleast_1d(h)))


def _members(A):
    if hasattr(A, "members"):
        return A.members()
    return list(A)


@dataclass
class NetworkStats:
    """Closed-form statistics of the ARW chain on one network."""

    n: int
    p: np.ndarray
    p_uniform: np.ndarray
    p_star: float
    argmin: list
    t_rel: float
    L: float
    R: float
    expected_lifetime: float
    tsep_lower: float
    tsep_upper: float
    extra: dict = field(default_factory=dict)

    def row(self) -> list:
        return [self.n, self.p_star, self.t_rel, self.L, self.R,
                self.expected_lifetime, self.tsep_lower, self.tsep_upper]

    def to_dict(self, labels=None) -> dict:
        out = dict(zip(CSV_COLUMNS, self.row()))
        out["lifetime"] = self.expected_lifetime
        out["argmin"] = [labels[i] for i in self.argmin] if labels else list(self.argmin)
        out["p"] = [float(v) for v in self.p]
        out.update(self.extra)
        return out


def tsep_bounds(n: int, t_rel: float, L: float, R: float) -> tuple[float, float]:
    """Two-sided separation mixing-time bounds from ``t_rel``, ``L`` and ``R``."""
    logn = math.log(n)
    lower = max(t_rel, float(n), L * logn / 5.0)
    upper = (math.sqrt(R) + 3.0 * math.sqrt(t_rel * logn)) ** 2
    return lower, upper


def statistics(net: Network) -> NetworkStats:
    """Hitting probabilities and every derived mixing statistic, computed exactly."""
    net.require_valid()
    n = net.n
    fac = _Factor(net)
    diag = fac.diagonal_of_inverse()
    p = _hitting_from(fac, diag, net.insertion)
    pu = _hitting_from(fac, diag, np.full(n, 1.0 / n))
    lifetime = float(net.insertion @ fac.solve(np.ones(n)))
    p_star = float(p.min())
    argmin = [int(i) for i in np.flatnonzero(p <= p_star * (1 + 1e-12))]
    t_rel = 1.0 / p_star
    L = n / float(p.sum())
    R = n * float(np.max(pu / p))
    lower, upper = tsep_bounds(n, t_rel, L, R)
    return NetworkStats(n, p, pu, p_star, argmin, t_rel, L, R, lifetime, lower, upper)


def reversibility_identity_residual(net: Network):
    """``max_x |p(x) - nu(x) E_x[tau_dagger] / G(x, x)|`` on reversible networks.

    Returns ``None`` when detailed balance fails, since the identity does not
    apply there. ``E_x[tau_dagger]`` counts every step including the final
    death step, which equals the expected number of site visits ``(G 1)(x)``.
    """
    net.require_valid()
    if not net.report.reversible:
        return None
    fac = _Factor(net)
    diag = fac.diagonal_of_inverse()
    p = _hitting_from(fac, diag, net.insertion)
    lifetimes = fac.solve(np.ones(net.n))
    return float(np.max(np.abs(p - net.insertion * lifetimes / diag)))
