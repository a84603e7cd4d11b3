"""Traffic network, link cost functions, bounded route enumeration.

A network file is a JSON document::

    {
      "name": "pigou",
      "cost_family": "polynomial",          # or "bpr"
      "nodes": [1, 2],
      "links": [{"id": 1, "tail": 1, "head": 2, "t0": 1, "c": 1, "m": 0, "b": 1}, ...],
      "od_pairs": [[1, 2]],
      "k_bound": 1,                          # optional default route-length bound
      "demand_interval": [1.0, 5.0]          # optional default sampling interval
    }

Cost families:

* ``polynomial``: ``t(v) = t0 + c*v + m*v**b``
* ``bpr``: ``t(v) = t0*(1 + 0.15*(v/c)**m)``
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np
from scipy import sparse

BPR_ALPHA = 0.15
# above this many routes incidence matrices are kept in CSR form
DENSE_ROUTE_LIMIT = 4000


class NetworkError(ValueError):
    """Base class for malformed or unusable networks."""


class NetworkParseError(NetworkError):
    """The network document does not match the file schema."""


class NetworkValidationError(NetworkError):
    """The document parsed but violates a network invariant."""


class NoRouteError(NetworkValidationError):
    """An OD pair has no route within the requested bound."""

    def __init__(self, od_pair, k_bound=None):
        self.od_pair = tuple(od_pair)
        self.k_bound = k_bound
        if k_bound is None:
            msg = f"OD pair {self.od_pair} is unreachable"
        else:
            msg = f"OD pair {self.od_pair} has no route with at most {k_bound} links"
        super().__init__(msg)


class FingerprintError(ValueError):
    """An artifact does not belong to the supplied network or route set."""


class CostFamily(str, enum.Enum):
    BPR = "bpr"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class LinkCostParams:
    t0: float
    c: float
    m: float
    b: float = 1.0


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    params: LinkCostParams


def _is_odd_positive_int(value: float) -> bool:
    return float(value).is_integer() and value > 0 and int(value) % 2 == 1


def validate_params(params: LinkCostParams, family: CostFamily, where: str = "link") -> None:
    """Raise :class:`NetworkValidationError` unless ``params`` give a positive,
    strictly increasing cost for ``family``."""
    if not params.t0 > 0:
        raise NetworkValidationError(f"{where}: t0 must be > 0, got {params.t0}")
    if not params.m >= 0:
        raise NetworkValidationError(f"{where}: m must be >= 0, got {params.m}")
    if family is CostFamily.BPR:
        if not params.c > 0:
            raise NetworkValidationError(f"{where}: capacity c must be > 0, got {params.c}")
        if not _is_odd_positive_int(params.m):
            raise NetworkValidationError(
                f"{where}: BPR exponent m must be an odd positive integer, got {params.m}")
    else:
        if not params.c >= 0:
            raise NetworkValidationError(f"{where}: c must be >= 0, got {params.c}")
        if not (params.c > 0 or params.m > 0):
            raise NetworkValidationError(f"{where}: c or m must be > 0 for a strictly increasing cost")
        if not _is_odd_positive_int(params.b):
            raise NetworkValidationError(
                f"{where}: polynomial exponent b must be an odd positive integer, got {params.b}")


def _check_flow(v):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(np.isnan(v)):
        raise ValueError("link flow must be nonnegative")
    return v


def link_travel_time(params: LinkCostParams, family: CostFamily | str, v):
    """Travel time on one link at flow ``v`` (scalar or array)."""
    family = CostFamily(family)
    v = _check_flow(v)
    if family is CostFamily.BPR:
        out = params.t0 * (1.0 + BPR_ALPHA * (v / params.c) ** params.m)
    else:
        out = params.t0 + params.c * v + params.m * v ** params.b
    return float(out) if out.ndim == 0 else out


def beckmann_term(params: LinkCostParams, family: CostFamily | str, v):
    """Closed-form integral of the link travel time from 0 to ``v``."""
    family = CostFamily(family)
    v = _check_flow(v)
    if family is CostFamily.BPR:
        m = params.m
        out = params.t0 * v + BPR_ALPHA * params.t0 * params.c * (v / params.c) ** (m + 1) / (m + 1)
    else:
        b = params.b
        out = params.t0 * v + params.c * v ** 2 / 2.0 + params.m * v ** (b + 1) / (b + 1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Network:
    """Directed traffic network with separable link costs and fixed OD pairs.

    Links are stored sorted by id; link index ``a`` in every flow vector refers
    to ``links[a]``. OD index ``k`` refers to ``od_pairs[k]``.
    """

    nodes: tuple
    links: tuple
    od_pairs: tuple
    cost_family: CostFamily
    name: str = "network"
    k_bound: int | None = None
    demand_interval: tuple | None = None
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "cost_family", CostFamily(self.cost_family))
        object.__setattr__(self, "links", tuple(sorted(self.links, key=lambda l: l.id)))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "od_pairs", tuple(tuple(p) for p in self.od_pairs))
        self._validate()

    def _validate(self):
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise NetworkValidationError("node ids must be unique")
        ids = [l.id for l in self.links]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise NetworkValidationError(f"duplicated link id(s): {dup}")
        for l in self.links:
            if l.tail not in node_set or l.head not in node_set:
                raise NetworkValidationError(f"link {l.id} references an unknown node")
            if l.tail == l.head:
                raise NetworkValidationError(f"link {l.id} is a self-loop")
            validate_params(l.params, self.cost_family, where=f"link {l.id}")
        if not self.od_pairs:
            raise NetworkValidationError("at least one OD pair is required")
        if len(set(self.od_pairs)) != len(self.od_pairs):
            raise NetworkValidationError("OD pairs must be distinct")
        for o, d in self.od_pairs:
            if o not in node_set or d not in node_set:
                raise NetworkValidationError(f"OD pair {(o, d)} references an unknown node")
            if o == d:
                raise NetworkValidationError(f"OD pair {(o, d)} has origin equal to destination")
        for o, d in self.od_pairs:
            if d not in self.reachable_from(o):
                raise NoRouteError((o, d))

    # -- sizes -----------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_od(self) -> int:
        return len(self.od_pairs)

    # -- lookup tables ---------------------------------------------------
    @cached_property
    def node_index(self) -> dict:
        return {n: i for i, n in enumerate(self.nodes)}

    @cached_property
    def link_index(self) -> dict:
        return {l.id: a for a, l in enumerate(self.links)}

    @cached_property
    def out_links(self) -> dict:
        """node -> list of link indices leaving it, ascending link id."""
        out = {n: [] for n in self.nodes}
        for a, l in enumerate(self.links):
            out[l.tail].append(a)
        return out

    @cached_property
    def origins(self) -> tuple:
        seen = []
        for o, _ in self.od_pairs:
            if o not in seen:
                seen.append(o)
        return tuple(seen)

    @cached_property
    def _param_arrays(self):
        p = [l.params for l in self.links]
        return tuple(np.array([getattr(q, f) for q in p], dtype=float) for f in ("t0", "c", "m", "b"))

    def reachable_from(self, origin) -> set:
        seen = {origin}
        stack = [origin]
        while stack:
            u = stack.pop()
            for a in self.out_links[u]:
                w = self.links[a].head
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    # -- vectorized costs ------------------------------------------------
    def link_times(self, v) -> np.ndarray:
        """Travel time of every link; ``v`` has shape (..., n_links)."""
        v = _check_flow(v)
        t0, c, m, b = self._param_arrays
        if self.cost_family is CostFamily.BPR:
            return t0 * (1.0 + BPR_ALPHA * (v / c) ** m)
        return t0 + c * v + m * v ** b

    def link_time_derivatives(self, v) -> np.ndarray:
        v = _check_flow(v)
        t0, c, m, b = self._param_arrays
        if self.cost_family is CostFamily.BPR:
            return t0 * BPR_ALPHA * m / c * (v / c) ** (m - 1)
        return c + m * b * v ** (b - 1)

    def beckmann(self, v) -> float:
        """Beckmann objective: sum over links of the integrated link time."""
        v = _check_flow(v)
        t0, c, m, b = self._param_arrays
        if self.cost_family is CostFamily.BPR:
            terms = t0 * v + BPR_ALPHA * t0 * c * (v / c) ** (m + 1) / (m + 1)
        else:
            terms = t0 * v + c * v ** 2 / 2.0 + m * v ** (b + 1) / (b + 1)
        return float(np.sum(terms))

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "cost_family": self.cost_family.value,
            "nodes": list(self.nodes),
            "links": [
                {"id": l.id, "tail": l.tail, "head": l.head, "t0": l.params.t0,
                 "c": l.params.c, "m": l.params.m, "b": l.params.b}
                for l in self.links
            ],
            "od_pairs": [list(p) for p in self.od_pairs],
        }
        if self.k_bound is not None:
            out["k_bound"] = self.k_bound
        if self.demand_interval is not None:
            out["demand_interval"] = list(self.demand_interval)
        if self.description:
            out["description"] = self.description
        return out

    @cached_property
    def fingerprint(self) -> str:
        """Hash of everything that changes equilibria (topology, costs, OD pairs)."""
        d = self.to_dict()
        core = {k: d[k] for k in ("cost_family", "nodes", "links", "od_pairs")}
        blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_LINK_FIELDS = ("id", "tail", "head", "t0", "c", "m")


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise NetworkParseError(f"{where}: expected an object")
    if key not in obj:
        raise NetworkParseError(f"{where}: missing field '{key}'")
    return obj[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _node_id(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise NetworkParseError(f"{where}: expected an integer id, got {value!r}")
    return value


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise NetworkParseError("top level: expected an object")
    family = _require(doc, "cost_family", "top level")
    try:
        family = CostFamily(family)
    except ValueError:
        raise NetworkParseError(f"cost_family: unknown family {family!r}") from None
    nodes_raw = _require(doc, "nodes", "top level")
    if not isinstance(nodes_raw, list):
        raise NetworkParseError("nodes: expected a list")
    nodes = [_node_id(n, f"nodes[{i}]") for i, n in enumerate(nodes_raw)]

    links_raw = _require(doc, "links", "top level")
    if not isinstance(links_raw, list):
        raise NetworkParseError("links: expected a list")
    links = []
    seen_ids = set()
    for i, rec in enumerate(links_raw):
        where = f"links[{i}]"
        for key in _LINK_FIELDS:
            _require(rec, key, where)
        lid = _node_id(rec["id"], f"{where}.id")
        if lid in seen_ids:
            raise NetworkParseError(f"{where}.id: duplicated link id {lid}")
        seen_ids.add(lid)
        params = LinkCostParams(
            t0=_number(rec["t0"], f"{where}.t0"),
            c=_number(rec["c"], f"{where}.c"),
            m=_number(rec["m"], f"{where}.m"),
            b=_number(rec.get("b", 1), f"{where}.b"),
        )
        links.append(Link(lid, _node_id(rec["tail"], f"{where}.tail"),
                          _node_id(rec["head"], f"{where}.head"), params))

    od_raw = _require(doc, "od_pairs", "top level")
    if not isinstance(od_raw, list):
        raise NetworkParseError("od_pairs: expected a list")
    od_pairs = []
    for i, p in enumerate(od_raw):
        if not isinstance(p, list) or len(p) != 2:
            raise NetworkParseError(f"od_pairs[{i}]: expected [origin, destination]")
        od_pairs.append((_node_id(p[0], f"od_pairs[{i}][0]"), _node_id(p[1], f"od_pairs[{i}][1]")))

    k_bound = doc.get("k_bound")
    if k_bound is not None:
        k_bound = _node_id(k_bound, "k_bound")
    interval = doc.get("demand_interval")
    if interval is not None:
        if not isinstance(interval, list) or len(interval) != 2:
            raise NetworkParseError("demand_interval: expected [x_min, x_max]")
        interval = tuple(_number(v, "demand_interval") for v in interval)

    return Network(
        nodes=nodes, links=links, od_pairs=od_pairs, cost_family=family,
        name=str(doc.get("name", "network")), k_bound=k_bound,
        demand_interval=interval, description=str(doc.get("description", "")),
    )


def parse_network(text: str) -> Network:
    """Parse and validate a network document.

    Raises
    ------
    NetworkParseError
        Malformed JSON (with line/column) or a field not matching the schema.
    NetworkValidationError
        Invariant violations, e.g. a non-odd exponent.
    NoRouteError
        Some OD pair is unreachable.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return network_from_dict(doc)


def load_network(path) -> Network:
    with open(path) as fh:
        return parse_network(fh.read())


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh, indent=1)
        fh.write("\n")


# -- routes ---------------------------------------------------------------

@dataclass(frozen=True)
class Route:
    od_index: int
    links: tuple  # link ids in travel order


@dataclass(frozen=True, eq=False)
class RouteSet:
    """Enumerated routes plus their OD and arc incidence matrices.

    ``delta_od`` is (n_od, n_routes) and ``delta_arc`` is (n_links, n_routes).
    Both are dense arrays for small route sets and CSR matrices above
    ``DENSE_ROUTE_LIMIT`` routes; either form supports ``@`` and ``.T``.
    """

    routes: tuple
    delta_od: Any
    delta_arc: Any
    k_bound: int
    network_fingerprint: str = ""

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    @property
    def n_od(self) -> int:
        return self.delta_od.shape[0]

    @cached_property
    def od_of_route(self) -> np.ndarray:
        return np.array([r.od_index for r in self.routes], dtype=int)

    @cached_property
    def routes_per_od(self) -> np.ndarray:
        return np.bincount(self.od_of_route, minlength=self.n_od)

    @cached_property
    def od_slices(self) -> list:
        """Routes of one OD are contiguous; slice per OD index."""
        bounds = np.concatenate([[0], np.cumsum(self.routes_per_od)])
        return [slice(int(bounds[k]), int(bounds[k + 1])) for k in range(self.n_od)]

    @cached_property
    def fingerprint(self) -> str:
        blob = json.dumps([self.network_fingerprint, self.k_bound,
                           [[r.od_index, list(r.links)] for r in self.routes]])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dense_delta_od(self) -> np.ndarray:
        return _dense(self.delta_od)

    def dense_delta_arc(self) -> np.ndarray:
        return _dense(self.delta_arc)

    def to_dict(self) -> dict:
        return {
            "network_fingerprint": self.network_fingerprint,
            "k_bound": self.k_bound,
            "routes": [{"od": r.od_index, "links": list(r.links)} for r in self.routes],
        }


def _dense(mat) -> np.ndarray:
    return mat.toarray() if sparse.issparse(mat) else np.asarray(mat)


def build_route_set(net: Network, routes: Sequence[Route], k_bound: int) -> RouteSet:
    n_r = len(routes)
    rows_od = [r.od_index for r in routes]
    rows_arc, cols_arc = [], []
    for j, r in enumerate(routes):
        for lid in r.links:
            rows_arc.append(net.link_index[lid])
            cols_arc.append(j)
    cols_od = np.arange(n_r)
    d_od = sparse.csr_matrix((np.ones(n_r), (rows_od, cols_od)), shape=(net.n_od, n_r))
    d_arc = sparse.csr_matrix((np.ones(len(rows_arc)), (rows_arc, cols_arc)),
                              shape=(net.n_links, n_r))
    if n_r <= DENSE_ROUTE_LIMIT:
        d_od, d_arc = d_od.toarray(), d_arc.toarray()
    return RouteSet(tuple(routes), d_od, d_arc, k_bound, net.fingerprint)


def _simple_paths(net: Network, origin, dest, k_bound: int) -> list:
    """Depth-first search over out-links in ascending id order; yields link-id
    tuples in lexicographic order."""
    paths = []
    links = net.links
    path: list = []
    on_path = {origin}

    def dfs(u):
        if u == dest:
            paths.append(tuple(path))
            return
        if len(path) == k_bound:
            return
        for a in net.out_links[u]:
            w = links[a].head
            if w in on_path:
                continue
            on_path.add(w)
            path.append(links[a].id)
            dfs(w)
            path.pop()
            on_path.discard(w)

    dfs(origin)
    return sorted(paths)


def enumerate_routes(net: Network, k_bound: int | None = None) -> RouteSet:
    """All simple routes with at most ``k_bound`` links for every OD pair.

    Routes are ordered by OD index, then lexicographically by link-id
    sequence. Falls back to ``net.k_bound`` when ``k_bound`` is None.
    """
    if k_bound is None:
        k_bound = net.k_bound
    if k_bound is None or int(k_bound) < 1:
        raise ValueError(f"k_bound must be a positive integer, got {k_bound}")
    k_bound = int(k_bound)
    routes = []
    for k, (o, d) in enumerate(net.od_pairs):
        paths = _simple_paths(net, o, d, k_bound)
        if not paths:
            raise NoRouteError((o, d), k_bound)
        routes.extend(Route(k, p) for p in paths)
    return build_route_set(net, routes, k_bound)


def route_set_from_dict(net: Network, doc: dict) -> RouteSet:
    fp = doc.get("network_fingerprint")
    if fp != net.fingerprint:
        raise FingerprintError(f"route file was built for network {fp}, not {net.fingerprint}")
    routes = [Route(int(r["od"]), tuple(int(x) for x in r["links"])) for r in doc["routes"]]
    return build_route_set(net, routes, int(doc["k_bound"]))


def route_costs(net: Network, rs: RouteSet, h) -> np.ndarray:
    """Route travel costs ``delta_arc.T @ t(delta_arc @ h)``.

    ``h`` may be a single route-flow vector or a (batch, n_routes) array.
    """
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != rs.n_routes:
        raise ValueError(f"expected {rs.n_routes} route flows, got {h.shape[-1]}")
    if np.any(h < 0):
        raise ValueError("route flows must be nonnegative")
    v = arc_flows(rs, h)
    # matmul of a nonnegative incidence matrix can leave -0.0, never negatives
    t = net.link_times(np.maximum(v, 0.0))
    return _right_mul(t, rs.delta_arc)


def arc_flows(rs: RouteSet, h) -> np.ndarray:
    """Arc flows ``delta_arc @ h`` for one vector or a batch of rows."""
    return _right_mul(np.asarray(h, dtype=float), rs.delta_arc.T)


def od_totals(rs: RouteSet, h) -> np.ndarray:
    return _right_mul(np.asarray(h, dtype=float), rs.delta_od.T)


def _right_mul(rows: np.ndarray, mat) -> np.ndarray:
    """``rows @ mat`` for dense or sparse ``mat`` and 1-D or 2-D ``rows``."""
    if sparse.issparse(mat):
        return np.asarray((mat.T @ rows.T).T)
    return rows @ mat
