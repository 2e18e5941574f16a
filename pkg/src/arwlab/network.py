"""Finite sub-stochastic networks ``(V, K, nu)`` and their validation.

A network is a finite site set, a sparse sub-stochastic kernel ``K`` whose
row deficit ``1 - sum_y K(x, y)`` is the probability that a walker at ``x``
dies, and an insertion law ``nu`` from which new walkers are born.
Everything downstream works with dense indices ``0..n-1``; labels are kept
only for input/output.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateNetworkError, NetworkError

ROW_SUM_TOL = 1e-12
DETAILED_BALANCE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable network. Build with :meth:`from_edges` or :meth:`from_dense`."""

    labels: tuple[str, ...]
    kernel: sp.csr_matrix
    insertion: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        if n == 0:
            raise NetworkError("a network needs at least one site", "sites")
        if len(set(self.labels)) != n:
            raise NetworkError("site labels must be distinct", "sites")
        if self.kernel.shape != (n, n):
            raise NetworkError(f"kernel shape {self.kernel.shape} does not match {n} sites", "edges")
        data = self.kernel.data
        if data.size and (not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1):
            bad = int(np.flatnonzero(~np.isfinite(data) | (data < 0) | (data > 1))[0])
            raise NetworkError(f"kernel weight {data[bad]!r} outside [0, 1]", "edges")
        nu = self.insertion
        if nu.shape != (n,):
            raise NetworkError(f"insertion law has length {nu.shape[0]}, expected {n}", "nu")
        if not np.all(np.isfinite(nu)) or nu.min() < 0:
            bad = int(np.flatnonzero(~np.isfinite(nu) | (nu < 0))[0])
            raise NetworkError(f"negative or non-finite mass {nu[bad]!r}", f"nu[{bad}]")
        if abs(nu.sum() - 1.0) > ROW_SUM_TOL:
            raise NetworkError(f"masses sum to {nu.sum()!r}, not 1", "nu")
        nu.setflags(write=False)
        for arr in (self.kernel.data, self.kernel.indices, self.kernel.indptr):
            arr.setflags(write=False)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_edges(cls, labels, edges, nu="uniform", degrees=None, meta=None):
        """Build a network from ``(i, j, w)`` triples over dense indices.

        ``nu`` is a vector, ``"uniform"``, or ``"degree"``; the latter uses
        ``degrees`` when given and the number of out-edges otherwise.
        """
        labels = tuple(str(s) for s in labels)
        n = len(labels)
        rows, cols, vals = [], [], []
        seen = set()
        for k, edge in enumerate(edges):
            try:
                i, j, w = edge
            except (TypeError, ValueError):
                raise NetworkError("expected a [i, j, w] triple", f"edges[{k}]") from None
            if not (isinstance(i, (int, np.integer)) and isinstance(j, (int, np.integer))):
                raise NetworkError("indices must be integers", f"edges[{k}]")
            if not (0 <= i < n and 0 <= j < n):
                raise NetworkError(f"index out of range for {n} sites", f"edges[{k}]")
            w = float(w)
            if not np.isfinite(w) or w < 0:
                raise NetworkError(f"negative or non-finite weight {w!r}", f"edges[{k}]")
            if w > 1:
                raise NetworkError(f"weight {w!r} exceeds 1", f"edges[{k}]")
            if (i, j) in seen:
                raise NetworkError(f"duplicate edge ({i}, {j})", f"edges[{k}]")
            seen.add((i, j))
            if w > 0:
                rows.append(int(i))
                cols.append(int(j))
                vals.append(w)
        kernel = sp.csr_matrix((np.array(vals, dtype=float), (rows, cols)), shape=(n, n))
        kernel.sort_indices()
        out_degree = np.diff(kernel.indptr).astype(float)
        insertion = _insertion_vector(nu, n, degrees if degrees is not None else out_degree)
        return cls(labels, kernel, insertion, dict(meta or {}))

    @classmethod
    def from_dense(cls, K, nu="uniform", labels=None, meta=None):
        K = np.asarray(K, dtype=float)
        n = K.shape[0]
        labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(n))
        rows, cols = np.nonzero(K)
        edges = [(int(i), int(j), K[i, j]) for i, j in zip(rows, cols)]
        return cls.from_edges(labels, edges, nu, meta=meta)

    # -- accessors --------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.labels)

    @cached_property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.kernel.sum(axis=1)).ravel()

    @cached_property
    def death(self) -> np.ndarray:
        """Per-site death probability (row deficit), clipped at 0."""
        return np.clip(1.0 - self.row_sums, 0.0, 1.0)

    def dense_kernel(self) -> np.ndarray:
        return self.kernel.toarray()

    def index(self, label) -> int:
        return self._index[str(label)]

    @cached_property
    def _index(self):
        return {s: i for i, s in enumerate(self.labels)}

    def resolve_sites(self, spec) -> list[int]:
        """Turn labels or integer indices into sorted dense indices."""
        out = set()
        for item in spec:
            if isinstance(item, (int, np.integer)):
                if not 0 <= item < self.n:
                    raise NetworkError(f"site index {item} out of range", "sites")
                out.add(int(item))
            elif str(item) in self._index:
                out.add(self._index[str(item)])
            else:
                raise NetworkError(f"unknown site {item!r}", "sites")
        return sorted(out)

    def with_insertion(self, nu) -> "Network":
        return Network(self.labels, self.kernel.copy(), np.array(nu, dtype=float), dict(self.meta))

    @cached_property
    def report(self) -> "ValidationReport":
        return validate_network(self)

    def require_valid(self) -> "Network":
        """Return ``self`` or raise :class:`DegenerateNetworkError`."""
        rep = self.report
        if not rep.passed:
            raise DegenerateNetworkError("; ".join(rep.violations()))
        return self

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        coo = self.kernel.tocoo()
        order = np.lexsort((coo.col, coo.row))
        edges = [[int(coo.row[k]), int(coo.col[k]), float(coo.data[k])] for k in order]
        out = {"sites": list(self.labels), "edges": edges, "nu": [float(x) for x in self.insertion]}
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        try:
            sites = data["sites"]
            edges = data["edges"]
        except (KeyError, TypeError):
            raise NetworkError("network JSON needs 'sites' and 'edges'", "root") from None
        return cls.from_edges(sites, edges, data.get("nu", "uniform"),
                              degrees=data.get("degrees"), meta=data.get("meta"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path) -> "Network":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise NetworkError(f"invalid JSON: {exc}", str(path)) from None
        return cls.from_dict(data)

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON encoding (metadata excluded)."""
        body = self.to_dict()
        body.pop("meta", None)
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _insertion_vector(nu, n, degrees) -> np.ndarray:
    if isinstance(nu, str):
        if nu == "uniform":
            return np.full(n, 1.0 / n)
        if nu == "degree":
            deg = np.asarray(degrees, dtype=float)
            if deg.shape != (n,) or deg.min() < 0 or deg.sum() <= 0:
                raise NetworkError("degree-biased law needs nonnegative degrees", "degrees")
            return deg / deg.sum()
        raise NetworkError(f"unknown insertion rule {nu!r}", "nu")
    return np.array(nu, dtype=float)


@dataclass
class ValidationReport:
    """Outcome of :func:`validate_network`; ``passed`` iff all assumptions hold."""

    rows_ok: bool
    bad_rows: list
    nondegenerate: bool
    witness_cycle: list
    reachable: bool
    unreachable: list
    reversible: bool

    @property
    def passed(self) -> bool:
        return self.rows_ok and self.nondegenerate and self.reachable

    def violations(self) -> list[str]:
        out = []
        if not self.rows_ok:
            out.append("row sums exceed 1 at " + ", ".join(f"{s} ({v:.15g})" for s, v in self.bad_rows))
        if not self.nondegenerate:
            out.append("stochastic principal sub-matrix; witness cycle " + " -> ".join(self.witness_cycle))
        if not self.reachable:
            out.append("sites unreachable from the insertion support: " + ", ".join(self.unreachable))
        return out

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "row_sums": {"ok": self.rows_ok, "violations": [[s, v] for s, v in self.bad_rows]},
            "nondegenerate": {"ok": self.nondegenerate, "witness_cycle": self.witness_cycle},
            "reachability": {"ok": self.reachable, "unreachable": self.unreachable},
            "reversible": self.reversible,
            "violations": self.violations(),
        }


def _bfs(indptr, indices, sources, n):
    seen = np.zeros(n, dtype=bool)
    queue = deque(int(s) for s in sources)
    seen[list(queue)] = True
    while queue:
        x = queue.popleft()
        for y in indices[indptr[x]:indptr[x + 1]]:
            if not seen[y]:
                seen[y] = True
                queue.append(int(y))
    return seen


def validate_network(net: Network) -> ValidationReport:
    """Check the standing assumptions on ``(K, nu)``; never raises on violations.

    Non-degeneracy is tested as reachability of a leaky site (row sum below
    ``1 - ROW_SUM_TOL``) from every site, which is equivalent to no principal
    sub-matrix of ``K`` being stochastic.
    """
    n = net.n
    K = net.kernel
    sums = net.row_sums
    over = np.flatnonzero(sums > 1.0 + ROW_SUM_TOL)
    bad_rows = [(net.labels[i], float(sums[i])) for i in over]

    # sites that can reach a leak = reverse reachability from leaky sites
    KT = K.T.tocsr()
    leaky = np.flatnonzero(sums < 1.0 - ROW_SUM_TOL)
    can_die = _bfs(KT.indptr, KT.indices, leaky, n)
    witness = []
    if not can_die.all():
        # every trapped site keeps all mass inside the trapped set; follow edges to a repeat
        x = int(np.flatnonzero(~can_die)[0])
        path, pos = [], {}
        while x not in pos:
            pos[x] = len(path)
            path.append(x)
            row = K.indices[K.indptr[x]:K.indptr[x + 1]]
            x = int(next(y for y in row if not can_die[y]))
        witness = [net.labels[i] for i in path[pos[x]:]]

    reached = _bfs(K.indptr, K.indices, np.flatnonzero(net.insertion > 0), n)
    unreachable = [net.labels[i] for i in np.flatnonzero(~reached)]

    flux = sp.diags(net.insertion) @ K
    asym = abs(flux - flux.T)
    reversible = bool(asym.nnz == 0 or asym.max() <= DETAILED_BALANCE_TOL)

    return ValidationReport(
        rows_ok=not bad_rows,
        bad_rows=bad_rows,
        nondegenerate=bool(can_die.all()),
        witness_cycle=witness,
        reachable=bool(reached.all()),
        unreachable=unreachable,
        reversible=reversible,
    )
