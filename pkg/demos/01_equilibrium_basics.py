"""Equilibrium basics: the two-road network, route enumeration and Frank-Wolfe.

Run with ``python3 demos/01_equilibrium_basics.py``.
"""
import numpy as np

import tapnet
from tapnet.equilibrium import frank_wolfe
from tapnet.network import route_costs

# Two parallel roads with travel times 1 + v and 2 + v share 3 units of demand.
# At equilibrium both roads must cost the same, so 1 + v1 = 2 + v2 with
# v1 + v2 = 3, giving (2, 1) and a common cost of 3.
pigou = tapnet.load_fixture("pigou")
routes = tapnet.enumerate_routes(pigou)
sol = frank_wolfe(pigou, [3.0])
print("two-road flows     ", np.round(sol.flows, 6))
print("two-road route cost", np.round(route_costs(pigou, routes, sol.flows), 6))
print(f"relative gap {sol.relative_gap:.2e} after {sol.iterations} iterations\n")

# A larger network: routes are every simple path of at most K links, listed
# per OD pair in a fixed order. The OD-route and arc-route incidence
# matrices are what the learning and refinement stages work with.
net = tapnet.load_fixture("nguyen-dupuis")
rs = tapnet.enumerate_routes(net)
print(f"{net.name}: {net.n_links} links, {net.n_od} OD pairs, {rs.n_routes} routes (K={rs.k_bound})")
for k, sl in enumerate(rs.od_slices):
    print(f"  OD {net.od_pairs[k]}: {sl.stop - sl.start} routes")

# Frank-Wolfe works on arc flows only; it never needs the route list.
demand = np.array([220.0, 180.0, 260.0, 150.0])
for variant in ("classic", "away"):
    s = frank_wolfe(net, demand, gap_tol=1e-6, variant=variant)
    print(f"{variant:>8}: gap {s.relative_gap:.1e} in {s.iterations:5d} iterations, "
          f"Beckmann objective {s.objective:.6f}")
