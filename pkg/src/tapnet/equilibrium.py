"""Frank-Wolfe solver for the deterministic user equilibrium on arc flows."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .network import Network, NoRouteError

DEFAULT_GAP_TOL = 1e-6
DEFAULT_MAX_ITERS = 5000
LINE_SEARCH_TOL = 1e-10


@dataclass
class ArcFlowSolution:
    flows: np.ndarray
    relative_gap: float
    iterations: int
    objective: float
    converged: bool


def shortest_paths(net: Network, link_times, origin):
    """Dijkstra from ``origin``.

    Returns ``(dist, pred)`` dicts keyed by node id; ``pred[n]`` is the index
    of the link entering ``n`` on the tree (None for the origin and for
    unreachable nodes, whose distance is ``inf``). Among equally short
    alternatives the entering link with the smallest id wins.
    """
    times = np.asarray(link_times, dtype=float)
    if times.shape != (net.n_links,):
        raise ValueError(f"expected {net.n_links} link times, got shape {times.shape}")
    if not np.all(times > 0):
        raise ValueError("link times must be strictly positive")

    dist = {n: math.inf for n in net.nodes}
    pred = {n: None for n in net.nodes}
    dist[origin] = 0.0
    done = set()
    heap = [(0.0, origin)]
    links = net.links
    out = net.out_links
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for a in out[u]:
            w = links[a].head
            nd = d + times[a]
            if nd < dist[w]:
                dist[w] = nd
                pred[w] = a
                heapq.heappush(heap, (nd, w))
            elif nd == dist[w] and a < pred[w]:
                # link index order is link id order
                pred[w] = a
    return dist, pred


def all_or_nothing(net: Network, link_times, demands) -> np.ndarray:
    """Load each OD demand entirely onto its shortest route."""
    demands = np.asarray(demands, dtype=float)
    if demands.shape != (net.n_od,):
        raise ValueError(f"expected {net.n_od} demands, got shape {demands.shape}")
    if np.any(demands < 0):
        raise ValueError("demands must be nonnegative")
    flows = np.zeros(net.n_links)
    links = net.links
    trees = {}
    for k, (o, d) in enumerate(net.od_pairs):
        if o not in trees:
            trees[o] = shortest_paths(net, link_times, o)
        dist, pred = trees[o]
        if math.isinf(dist[d]):
            raise NoRouteError((o, d))
        q = demands[k]
        if q == 0:
            continue
        node = d
        while node != o:
            a = pred[node]
            flows[a] += q
            node = links[a].tail
    return flows


def _segment_search(net: Network, f: np.ndarray, direction: np.ndarray,
                    step_max: float, tol: float) -> float:
    """Minimize the Beckmann objective along ``f + g*direction`` for
    ``g`` in ``[0, step_max]`` by bisection on the directional derivative."""

    def slope(g):
        v = np.maximum(f + g * direction, 0.0)
        return float(net.link_times(v) @ direction)

    if slope(0.0) >= 0:
        return 0.0
    if slope(step_max) <= 0:
        return step_max
    lo, hi = 0.0, step_max
    # relative tolerance: steps shrink far below tol near convergence
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def line_search(net: Network, f, f_aux, tol: float = LINE_SEARCH_TOL) -> float:
    """Step in [0, 1] minimizing the Beckmann objective on the segment from
    ``f`` to ``f_aux``; 0 when the two coincide."""
    f = np.asarray(f, dtype=float)
    f_aux = np.asarray(f_aux, dtype=float)
    if f.shape != f_aux.shape:
        raise ValueError("flow vectors differ in shape")
    if np.any(f < 0) or np.any(f_aux < 0):
        raise ValueError("flows must be nonnegative")
    direction = f_aux - f
    if not np.any(direction):
        return 0.0
    return _segment_search(net, f, direction, 1.0, tol)


def relative_gap(net: Network, flows, demands) -> float:
    """``(t(f).f - t(f).aon) / t(f).f``; zero when nothing is loaded."""
    times = net.link_times(flows)
    total = float(times @ flows)
    if total == 0:
        return 0.0
    aon = all_or_nothing(net, times, demands)
    return (total - float(times @ aon)) / total


def frank_wolfe(net: Network, demands, gap_tol: float = DEFAULT_GAP_TOL,
                max_iters: int = DEFAULT_MAX_ITERS, variant: str = "away") -> ArcFlowSolution:
    """User-equilibrium arc flows for fixed ``demands``.

    Starts from an all-or-nothing load at free-flow times and stops once the
    relative gap is at most ``gap_tol`` or after ``max_iters`` iterations
    (``converged`` is False in that case). ``iterations`` counts evaluated
    iterates, so a zero-demand problem reports one.

    ``variant="classic"`` moves toward the all-or-nothing load every
    iteration. ``variant="away"`` (default) also keeps the all-or-nothing
    loads seen so far, as arc-flow vectors with convex weights, and may step
    away from the worst of them; this removes the slow tail of the classic
    method on near-degenerate equilibria. Both use an exact line search.
    """
    if not gap_tol > 0:
        raise ValueError("gap_tol must be positive")
    if variant not in ("away", "classic"):
        raise ValueError(f"unknown Frank-Wolfe variant {variant!r}")
    demands = np.asarray(demands, dtype=float)
    flows = all_or_nothing(net, net.link_times(np.zeros(net.n_links)), demands)
    vertices = [flows.copy()]
    weights = np.ones(1)
    iterations = 0
    while True:
        iterations += 1
        times = net.link_times(flows)
        total = float(times @ flows)
        if not math.isfinite(total):
            raise FloatingPointError("non-finite total travel time during Frank-Wolfe")
        aon = all_or_nothing(net, times, demands)
        gap = 0.0 if total == 0 else (total - float(times @ aon)) / total
        if gap <= gap_tol or iterations >= max_iters:
            break
        if variant == "classic":
            lam = _segment_search(net, flows, aon - flows, 1.0, LINE_SEARCH_TOL)
            flows = (1.0 - lam) * flows + lam * aon
            continue
        flows, vertices, weights = _away_step(net, flows, times, aon, vertices, weights)
    objective = net.beckmann(flows)
    if not math.isfinite(objective):
        raise FloatingPointError("non-finite Beckmann objective")
    return ArcFlowSolution(flows, gap, iterations, objective, gap <= gap_tol)


def _away_step(net, flows, times, aon, vertices, weights):
    vals = np.array([times @ v for v in vertices])
    worst = int(np.argmax(vals))
    total = float(times @ flows)
    if total - float(times @ aon) >= vals[worst] - total:
        direction = aon - flows
        step = _segment_search(net, flows, direction, 1.0, LINE_SEARCH_TOL)
        weights = weights * (1.0 - step)
        for i, v in enumerate(vertices):
            if np.array_equal(v, aon):
                weights[i] += step
                break
        else:
            vertices = vertices + [aon]
            weights = np.append(weights, step)
    else:
        w = weights[worst]
        step_max = w / (1.0 - w)
        direction = flows - vertices[worst]
        step = _segment_search(net, flows, direction, step_max, LINE_SEARCH_TOL)
        weights = weights * (1.0 + step)
        weights[worst] -= step
    keep = weights > 1e-15
    vertices = [v for v, k in zip(vertices, keep) if k]
    weights = weights[keep] / weights[keep].sum()
    flows = weights @ np.array(vertices)
    return flows, vertices, weights
