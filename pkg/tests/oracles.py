"""Reference computations that share no code with the library."""
import itertools

import numpy as np


def svd_pinv(a, rcond=1e-12):
    """Moore-Penrose inverse from a full SVD."""
    u, s, vt = np.linalg.svd(np.asarray(a, dtype=float), full_matrices=False)
    inv = np.where(s > rcond * s.max(), 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def penrose_residuals(a, p):
    return (
        np.abs(a @ p @ a - a).max(),
        np.abs(p @ a @ p - p).max(),
        np.abs((a @ p).T - a @ p).max(),
        np.abs((p @ a).T - p @ a).max(),
    )


def random_od_incidence(rng, n_od, n_routes):
    """0/1 matrix with one 1 per column and every row used."""
    owner = np.concatenate([np.arange(n_od), rng.integers(0, n_od, n_routes - n_od)])
    rng.shuffle(owner)
    d = np.zeros((n_od, n_routes))
    d[owner, np.arange(n_routes)] = 1.0
    return d


def naive_routes(doc, o, d, k):
    """Every simple path from o to d with at most k links, as sorted link-id tuples,
    by brute force over link sequences."""
    links = {l["id"]: (l["tail"], l["head"]) for l in doc["links"]}
    out = []
    for length in range(1, k + 1):
        for seq in itertools.permutations(sorted(links), length):
            node = o
            visited = {o}
            ok = True
            for lid in seq:
                tail, head = links[lid]
                if tail != node or head in visited:
                    ok = False
                    break
                visited.add(head)
                node = head
            if ok and node == d:
                out.append(seq)
    return sorted(out)


def naive_route_costs(doc, routes, h):
    """Per-route loop: arc flows by summation, then link times along each route."""
    links = {l["id"]: l for l in doc["links"]}
    flow = {lid: 0.0 for lid in links}
    for r, hr in zip(routes, h):
        for lid in r:
            flow[lid] += hr

    def t(l, v):
        if doc["cost_family"] == "bpr":
            return l["t0"] * (1 + 0.15 * (v / l["c"]) ** l["m"])
        return l["t0"] + l["c"] * v + l["m"] * v ** l.get("b", 1)

    return np.array([sum(t(links[lid], flow[lid]) for lid in r) for r in routes])


def affine_route_costs(doc, routes):
    """For linear link costs t = t0 + c v: route costs are A h + q."""
    ids = sorted(l["id"] for l in doc["links"])
    pos = {lid: i for i, lid in enumerate(ids)}
    links = {l["id"]: l for l in doc["links"]}
    arc = np.zeros((len(ids), len(routes)))
    for j, r in enumerate(routes):
        for lid in r:
            arc[pos[lid], j] = 1.0
    slope = np.array([links[i]["c"] for i in ids])
    t0 = np.array([links[i]["t0"] for i in ids])
    return arc.T @ (slope[:, None] * arc), arc.T @ t0


def single_od_affine_equilibrium(a, q, demand):
    """Exact equilibrium of one OD with affine route costs by trying every
    support set: equal costs on the support, nonnegative flows, and no
    cheaper unused route."""
    n = len(q)
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            s = list(support)
            # unknowns: flows on s and the common cost pi
            m = np.zeros((size + 1, size + 1))
            rhs = np.zeros(size + 1)
            m[:size, :size] = a[np.ix_(s, s)]
            m[:size, size] = -1.0
            rhs[:size] = -q[s]
            m[size, :size] = 1.0
            rhs[size] = demand
            try:
                sol = np.linalg.solve(m, rhs)
            except np.linalg.LinAlgError:
                continue
            h = np.zeros(n)
            h[s] = sol[:size]
            if np.any(h < -1e-12):
                continue
            cost = a @ h + q
            if np.all(cost >= sol[size] - 1e-9):
                return np.maximum(h, 0.0), sol[size]
    raise RuntimeError("no equilibrium found")


def simplex_grid(n, total, steps):
    """All points of {h >= 0, sum h = total} on a grid of ``steps`` per unit simplex edge."""
    for combo in itertools.product(range(steps + 1), repeat=n - 1):
        if sum(combo) <= steps:
            w = np.array(list(combo) + [steps - sum(combo)], dtype=float)
            yield total * w / steps
