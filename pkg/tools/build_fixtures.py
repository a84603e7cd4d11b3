"""Regenerate the network fixtures shipped in ``src/tapnet/data``.

Topologies follow the usual literature layouts where they are public
(Nguyen-Dupuis, Sioux Falls, a one-way 10x10 grid). Link parameters and
demand intervals are chosen here; they are not published values. The Small
and Steenbrink layouts were picked by exhaustive search / hill-climbing so
the enumerated route counts match the commonly quoted sizes (30 and 1112).

    python tools/build_fixtures.py
"""
import json
import pathlib
import random

import numpy as np

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "tapnet" / "data"


def poly_links(edges, c_scale, m_scale, b=3):
    return [
        {"id": i + 1, "tail": a, "head": h, "t0": t0, "c": c_scale * t0, "m": m_scale * t0, "b": b}
        for i, (a, h, t0) in enumerate(edges)
    ]


def pigou():
    return {
        "name": "pigou",
        "description": "Two parallel links t1 = 1 + v, t2 = 2 + v.",
        "cost_family": "polynomial",
        "nodes": [1, 2],
        "links": [
            {"id": 1, "tail": 1, "head": 2, "t0": 1.0, "c": 1.0, "m": 0.0, "b": 1},
            {"id": 2, "tail": 1, "head": 2, "t0": 2.0, "c": 1.0, "m": 0.0, "b": 1},
        ],
        "od_pairs": [[1, 2]],
        "k_bound": 1,
        "demand_interval": [1.0, 5.0],
    }


def diamond():
    # linear costs keep the route-flow equilibrium available in closed form
    edges = [(1, 2, 1.0), (1, 3, 2.0), (2, 4, 2.0), (3, 4, 1.0), (2, 3, 0.5)]
    return {
        "name": "diamond",
        "description": "Diamond 1->{2,3}->4 with chord 2->3; linear link costs.",
        "cost_family": "polynomial",
        "nodes": [1, 2, 3, 4],
        "links": [{"id": i + 1, "tail": a, "head": h, "t0": t0, "c": 1.0, "m": 0.0, "b": 1}
                  for i, (a, h, t0) in enumerate(edges)],
        "od_pairs": [[1, 4]],
        "k_bound": 3,
        "demand_interval": [2.0, 6.0],
    }


def small():
    arcs = [(1, 2), (1, 3), (1, 4), (2, 1), (2, 3), (2, 4), (3, 1), (3, 2), (4, 1)]
    t0 = [4.0, 6.0, 9.0, 4.0, 3.0, 5.0, 6.0, 3.0, 9.0]
    edges = [(a, h, t) for (a, h), t in zip(arcs, t0)]
    return {
        "name": "small",
        "description": "4 nodes, 9 arcs, all 12 ordered OD pairs; 30 simple routes.",
        "cost_family": "polynomial",
        "nodes": [1, 2, 3, 4],
        "links": poly_links(edges, 0.02, 2e-5),
        "od_pairs": [[o, d] for o in range(1, 5) for d in range(1, 5) if o != d],
        "k_bound": 4,
        "demand_interval": [5.0, 30.0],
    }


def steenbrink():
    undirected = [(1, 2), (1, 3), (1, 4), (1, 8), (2, 3), (2, 5), (2, 6), (3, 5), (3, 6),
                  (4, 5), (4, 7), (5, 6), (5, 7), (5, 8), (5, 9), (6, 9), (7, 8), (8, 9)]
    rng = random.Random(7)
    edges = []
    for a, h in undirected:
        t0 = float(rng.randint(3, 12))
        edges.append((a, h, t0))
        edges.append((h, a, t0))
    zones = [1, 3, 7, 9]
    return {
        "name": "steenbrink",
        "description": "9 nodes, 18 two-way streets, zones {1,3,7,9}; 1112 routes with K=7.",
        "cost_family": "polynomial",
        "nodes": list(range(1, 10)),
        "links": poly_links(edges, 0.01, 1e-7),
        "od_pairs": [[o, d] for o in zones for d in zones if o != d],
        "k_bound": 7,
        "demand_interval": [50.0, 200.0],
    }


def nguyen_dupuis():
    edges = [(1, 5, 7), (1, 12, 9), (4, 5, 9), (4, 9, 12), (5, 6, 3), (5, 9, 9), (6, 7, 5),
             (6, 10, 13), (7, 8, 5), (7, 11, 9), (8, 2, 9), (9, 10, 10), (9, 13, 9),
             (10, 11, 6), (11, 2, 9), (11, 3, 8), (12, 6, 7), (12, 8, 14), (13, 3, 11)]
    edges = [(a, h, float(t)) for a, h, t in edges]
    return {
        "name": "nguyen-dupuis",
        "description": ("Nguyen-Dupuis layout (13 nodes, 19 links, OD 1-2, 1-3, 4-2, 4-3). "
                        "t = t0 + 0.01 t0 v + 1e-7 t0 v^3; demands in [100, 300]."),
        "cost_family": "polynomial",
        "nodes": list(range(1, 14)),
        "links": poly_links(edges, 0.01, 1e-7),
        "od_pairs": [[1, 2], [1, 3], [4, 2], [4, 3]],
        "k_bound": 5,
        "demand_interval": [100.0, 300.0],
    }


SIOUX_EDGES = [
    # node a, node b, free-flow time, capacity (both directions)
    (1, 2, 6, 25900), (1, 3, 4, 23403), (2, 6, 5, 4958), (3, 4, 4, 17110), (3, 12, 4, 23403),
    (4, 5, 2, 17782), (4, 11, 6, 4908), (5, 6, 4, 4948), (5, 9, 5, 10000), (6, 8, 2, 4898),
    (7, 8, 3, 7841), (7, 18, 2, 23403), (8, 9, 10, 5050), (8, 16, 5, 5045), (9, 10, 3, 13915),
    (10, 11, 5, 10000), (10, 15, 6, 13512), (10, 16, 4, 4854), (10, 17, 8, 4993),
    (11, 12, 6, 4908), (11, 14, 4, 4876), (12, 13, 3, 25900), (13, 24, 4, 5091),
    (14, 15, 5, 5127), (14, 23, 4, 4924), (15, 19, 3, 14564), (15, 22, 3, 9599),
    (16, 17, 2, 5229), (16, 18, 3, 19679), (17, 19, 2, 4823), (18, 20, 4, 23403),
    (19, 20, 4, 5002), (20, 21, 6, 5059), (20, 22, 5, 5075), (21, 22, 2, 5229),
    (21, 24, 3, 4885), (22, 23, 4, 5000), (23, 24, 2, 5078),
]


def _hop_distance(adj, o):
    dist = {o: 0}
    frontier = [o]
    while frontier:
        nxt = []
        for u in frontier:
            for w in adj[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    nxt.append(w)
        frontier = nxt
    return dist


def sioux_falls():
    directed = []
    for a, h, t0, cap in SIOUX_EDGES:
        directed.append((a, h, float(t0), float(cap)))
        directed.append((h, a, float(t0), float(cap)))
    directed.sort(key=lambda e: (e[0], e[1]))
    links = [
        {"id": i + 1, "tail": a, "head": h, "t0": t0, "c": 0.15 * t0 / cap,
         "m": 0.15 * t0 / cap ** 3, "b": 3}
        for i, (a, h, t0, cap) in enumerate(directed)
    ]
    adj = {n: [] for n in range(1, 25)}
    for a, h, _, _ in directed:
        adj[a].append(h)
    candidates = []
    for o in range(1, 25):
        dist = _hop_distance(adj, o)
        candidates += [(o, d) for d in range(1, 25) if d != o and dist[d] <= 4]
    rng = random.Random(11)
    ods = sorted(rng.sample(candidates, 100))
    return {
        "name": "sioux-falls",
        "description": ("Sioux Falls layout (24 nodes, 76 links); t = t0 + 0.15 t0 v/cap + "
                        "0.15 t0 (v/cap)^3 with literature free-flow times and capacities; "
                        "100 OD pairs sampled (seed 11) among pairs within 4 links."),
        "cost_family": "polynomial",
        "nodes": list(range(1, 25)),
        "links": links,
        "od_pairs": [list(p) for p in ods],
        "k_bound": 4,
        "demand_interval": [500.0, 3000.0],
    }


def regular_city(n=10, n_od=30):
    # one-way grid: rows alternate east/west, columns alternate south/north
    def node(r, c):
        return r * n + c + 1

    arcs = []
    for r in range(n):
        for c in range(n - 1):
            a, h = node(r, c), node(r, c + 1)
            arcs.append((a, h) if r % 2 == 0 else (h, a))
    for c in range(n):
        for r in range(n - 1):
            a, h = node(r, c), node(r + 1, c)
            arcs.append((a, h) if c % 2 == 0 else (h, a))
    arcs.sort()
    rng = np.random.default_rng(3)
    t0 = rng.uniform(1.0, 2.0, len(arcs)).round(2)
    links = [{"id": i + 1, "tail": a, "head": h, "t0": float(t), "c": 60.0, "m": 3, "b": 1}
             for i, ((a, h), t) in enumerate(zip(arcs, t0))]
    adj = {k: [] for k in range(1, n * n + 1)}
    for a, h in arcs:
        adj[a].append(h)
    candidates = []
    for o in adj:
        dist = _hop_distance(adj, o)
        candidates += [(o, d) for d in adj if 4 <= dist.get(d, 99) <= 6]
    picker = random.Random(5)
    ods = sorted(picker.sample(candidates, n_od))
    return {
        "name": "regular-city-10x10",
        "description": ("10x10 one-way grid (100 nodes, 180 arcs; rows alternate E/W, columns "
                        "alternate S/N); BPR costs with m=3, c=60; 30 OD pairs 4-6 hops apart, routes of up to 8 arcs."),
        "cost_family": "bpr",
        "nodes": list(range(1, n * n + 1)),
        "links": links,
        "od_pairs": [list(p) for p in ods],
        "k_bound": 8,
        "demand_interval": [20.0, 100.0],
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for builder in (pigou, diamond, small, steenbrink, nguyen_dupuis, sioux_falls, regular_city):
        doc = builder()
        path = OUT / f"{doc['name']}.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print(path.relative_to(OUT.parents[2]))


if __name__ == "__main__":
    main()
