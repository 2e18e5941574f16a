"""Example network families: wheels, transitive graphs with a sink, Euclidean
balls, regular-tree balls and arbitrary host-graph restrictions.

Every graph-derived family uses the restriction of simple random walk on a
host graph: site ``x`` sends weight ``1/deg(x)`` to each retained neighbour
and the missing mass is the probability of being killed at the sink or
boundary.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import DegenerateNetworkError, ParameterError
from .network import Network

FAMILIES = ("wheel", "transitive-minus-vertex", "euclidean-ball", "tree-ball", "host-restriction")
BASE_GRAPHS = ("cycle", "complete", "hypercube", "torus")


@dataclass
class GeneratorSpec:
    """Family name plus its parameters.

    ``insertion`` is ``"uniform"``, ``"degree"`` or an explicit vector.
    Parameters by family:

    - wheel: ``n`` (cycle length, >= 3)
    - transitive-minus-vertex: ``base`` (cycle|complete|hypercube|torus) and
      ``size`` (cycle/complete order, hypercube dimension) or ``dim`` and
      ``side`` for the torus
    - euclidean-ball: ``d`` and ``n`` (sites with squared norm <= n)
    - tree-ball: ``degree`` (>= 3) and ``depth``
    - host-restriction: ``edges`` (host edge list) and ``retained`` sites
    """

    family: str
    params: dict = field(default_factory=dict)
    insertion: object = "uniform"

    @classmethod
    def parse(cls, text: str) -> "GeneratorSpec":
        """Parse the compact CLI form, e.g. ``wheel:3`` or ``ball:2:9@degree``.

        Accepted forms: ``two-site``, ``wheel:N``, ``transitive:cycle:N``,
        ``transitive:complete:N``, ``transitive:hypercube:D``,
        ``transitive:torus:D:M``, ``ball:D:N``, ``tree:DEG:DEPTH``.
        """
        body, _, insertion = text.partition("@")
        insertion = insertion or "uniform"
        parts = body.split(":")
        head, args = parts[0], parts[1:]
        try:
            ints = [int(a) for a in args if a not in BASE_GRAPHS]
        except ValueError:
            raise ParameterError(f"non-integer parameter in generator spec {text!r}") from None
        if head == "two-site" and not args:
            return cls("transitive-minus-vertex", {"base": "cycle", "size": 3}, insertion)
        if head == "wheel" and len(ints) == 1:
            return cls("wheel", {"n": ints[0]}, insertion)
        if head in ("transitive", "transitive-minus-vertex") and args and args[0] in BASE_GRAPHS:
            base = args[0]
            if base == "torus" and len(ints) == 2:
                return cls("transitive-minus-vertex", {"base": base, "dim": ints[0], "side": ints[1]}, insertion)
            if base != "torus" and len(ints) == 1:
                return cls("transitive-minus-vertex", {"base": base, "size": ints[0]}, insertion)
        if head in ("ball", "euclidean-ball") and len(ints) == 2:
            return cls("euclidean-ball", {"d": ints[0], "n": ints[1]}, insertion)
        if head in ("tree", "tree-ball") and len(ints) == 2:
            return cls("tree-ball", {"degree": ints[0], "depth": ints[1]}, insertion)
        raise ParameterError(f"cannot parse generator spec {text!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        data = dict(data)
        family = data.pop("family", None)
        if family not in FAMILIES:
            raise ParameterError(f"unknown family {family!r}; expected one of {FAMILIES}")
        insertion = data.pop("insertion", "uniform")
        return cls(family, data, insertion)

    def to_dict(self) -> dict:
        out = {"family": self.family, **self.params}
        out["insertion"] = self.insertion if isinstance(self.insertion, str) else list(self.insertion)
        return out


def _label(node) -> str:
    if isinstance(node, tuple):
        return ",".join(str(c) for c in node)
    return str(node)


def restrict(host: nx.Graph, retained, insertion="uniform", meta=None) -> Network:
    """Killed simple random walk on ``host`` restricted to ``retained`` sites."""
    retained = list(retained)
    if not retained:
        raise ParameterError("restriction needs at least one retained site")
    index = {v: i for i, v in enumerate(retained)}
    if len(index) != len(retained):
        raise ParameterError("retained sites must be distinct")
    missing = [v for v in retained if v not in host]
    if missing:
        raise ParameterError(f"retained sites not in host graph: {missing[:5]}")
    edges, degrees = [], []
    for v in retained:
        deg = host.degree(v)
        degrees.append(float(deg))
        for u in host.neighbors(v):
            if u in index:
                edges.append((index[v], index[u], 1.0 / deg))
    labels = [_label(v) for v in retained]
    if isinstance(insertion, str) and insertion == "degree" and sum(degrees) == 0:
        raise ParameterError("degree-biased insertion on isolated sites")
    net = Network.from_edges(labels, edges, insertion, degrees=degrees, meta=meta)
    if not net.report.passed:
        raise DegenerateNetworkError("generated network is degenerate: " + "; ".join(net.report.violations()))
    return net


def _base_graph(params) -> nx.Graph:
    base = params.get("base")
    if base == "cycle":
        size = int(params["size"])
        if size < 3:
            raise ParameterError("cycle base needs at least 3 vertices")
        return nx.cycle_graph(size)
    if base == "complete":
        size = int(params["size"])
        if size < 2:
            raise ParameterError("complete base needs at least 2 vertices")
        return nx.complete_graph(size)
    if base == "hypercube":
        dim = int(params["size"])
        if dim < 1:
            raise ParameterError("hypercube dimension must be >= 1")
        g = nx.hypercube_graph(dim)
        return nx.relabel_nodes(g, {v: "".join(map(str, v)) for v in g})
    if base == "torus":
        dim, side = int(params["dim"]), int(params["side"])
        if dim < 1 or side < 3:
            raise ParameterError("torus needs dim >= 1 and side >= 3")
        return nx.grid_graph(dim=[side] * dim, periodic=True)
    raise ParameterError(f"unknown base graph {base!r}; expected one of {BASE_GRAPHS}")


def wheel(n: int, insertion="uniform") -> Network:
    """Cycle ``C_n`` with every site joined to an extra sink vertex."""
    if n < 3:
        raise ParameterError("wheel needs cycle length n >= 3")
    g = nx.cycle_graph(n)
    g.add_edges_from(("sink", v) for v in range(n))
    return restrict(g, range(n), insertion, {"family": "wheel", "n": n})


def transitive_minus_vertex(params, insertion="uniform") -> Network:
    g = _base_graph(params)
    nodes = list(g.nodes)
    meta = {"family": "transitive-minus-vertex", **params, "sink": _label(nodes[0])}
    return restrict(g, nodes[1:], insertion, meta)


def euclidean_ball(d: int, n: int, insertion="uniform") -> Network:
    """Sites of ``Z^d`` with squared norm at most ``n``, killed on exit."""
    if d < 1 or n < 0:
        raise ParameterError("euclidean ball needs d >= 1 and n >= 0")
    r = math.isqrt(n)
    pts = [p for p in itertools.product(range(-r, r + 1), repeat=d) if sum(c * c for c in p) <= n]
    index = {p: i for i, p in enumerate(pts)}
    edges = []
    for p, i in index.items():
        for axis in range(d):
            for step in (-1, 1):
                q = list(p)
                q[axis] += step
                j = index.get(tuple(q))
                if j is not None:
                    edges.append((i, j, 1.0 / (2 * d)))
    labels = [_label(p) for p in pts]
    degrees = [2.0 * d] * len(pts)
    return Network.from_edges(labels, edges, insertion, degrees=degrees,
                              meta={"family": "euclidean-ball", "d": d, "n": n})


def tree_ball(degree: int, depth: int, insertion="uniform") -> Network:
    """Ball of radius ``depth`` around a vertex of the infinite ``degree``-regular tree."""
    if degree < 3 or depth < 0:
        raise ParameterError("tree ball needs degree >= 3 and depth >= 0")
    g = nx.Graph()
    g.add_node(0)
    frontier, nxt = [0], 1
    for level in range(depth + 1):
        new = []
        for v in frontier:
            kids = degree if v == 0 else degree - 1
            for _ in range(kids):
                g.add_edge(v, nxt)
                new.append(nxt)
                nxt += 1
        frontier = new
    # the last generation added is the boundary (outside the ball)
    boundary = set(frontier)
    retained = [v for v in g.nodes if v not in boundary]
    return restrict(g, retained, insertion, {"family": "tree-ball", "degree": degree, "depth": depth})


def host_restriction(params, insertion="uniform") -> Network:
    host = nx.Graph()
    if "adjacency" in params:
        for u, nbrs in params["adjacency"].items():
            host.add_node(u)
            host.add_edges_from((u, v) for v in nbrs)
    for e in params.get("edges", []):
        host.add_edge(*e)
    retained = params.get("retained")
    if retained is None:
        raise ParameterError("host-restriction needs a 'retained' site list")
    return restrict(host, retained, insertion, {"family": "host-restriction"})


def generate(spec: GeneratorSpec) -> Network:
    """Build the network described by ``spec``; result always passes validation."""
    p = spec.params
    ins = spec.insertion
    try:
        if spec.family == "wheel":
            net = wheel(int(p["n"]), ins)
        elif spec.family == "transitive-minus-vertex":
            net = transitive_minus_vertex(p, ins)
        elif spec.family == "euclidean-ball":
            net = euclidean_ball(int(p["d"]), int(p["n"]), ins)
        elif spec.family == "tree-ball":
            net = tree_ball(int(p["degree"]), int(p["depth"]), ins)
        elif spec.family == "host-restriction":
            net = host_restriction(p, ins)
        else:
            raise ParameterError(f"unknown family {spec.family!r}")
    except KeyError as exc:
        raise ParameterError(f"missing parameter {exc.args[0]!r} for family {spec.family}") from None
    net.meta.setdefault("insertion", ins if isinstance(ins, str) else "explicit")
    if not net.report.passed:
        raise DegenerateNetworkError("generated network is degenerate: " + "; ".join(net.report.violations()))
    return net


def random_network(n, rng, density=0.5, stochastic_fraction=0.3, nu="random", max_tries=1000) -> Network:
    """Random valid network for property tests.

    Roughly ``stochastic_fraction`` of the rows carry no death mass; the
    rest lose between 10% and 70%. ``nu`` is ``"random"`` (Dirichlet with
    possibly sparse support), ``"uniform"`` or ``"point"``.
    """
    for _ in range(max_tries):
        mask = rng.random((n, n)) < density
        W = rng.random((n, n)) * mask
        sums = W.sum(axis=1)
        total = np.where(rng.random(n) < stochastic_fraction, 1.0, rng.uniform(0.3, 0.9, n))
        with np.errstate(invalid="ignore", divide="ignore"):
            K = np.where(sums[:, None] > 0, W / sums[:, None] * total[:, None], 0.0)
        if nu == "uniform":
            law = "uniform"
        elif nu == "point":
            law = np.zeros(n)
            law[rng.integers(n)] = 1.0
        else:
            law = rng.dirichlet(np.ones(n)) * (rng.random(n) < 0.7)
            if law.sum() == 0:
                continue
            law = law / law.sum()
        net = Network.from_dense(K, law, meta={"family": "random", "n": n})
        if net.report.passed:
            return net
    raise ParameterError(f"could not draw a valid random network with n={n}")
