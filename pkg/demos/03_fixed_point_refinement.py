"""Refining approximate route flows with the projection-splitting operator.

Starts from deliberately poor guesses (equilibrium flows with heavy noise,
then all-zero flows) and iterates the operator until it stops moving. The
result meets demand exactly and has equal costs on every used route.

Run with ``python3 demos/03_fixed_point_refinement.py``.
"""
import numpy as np

import tapnet
from tapnet.equilibrium import frank_wolfe
from tapnet.fixed_point import RefineOptions, default_alpha, refine
from tapnet.metrics import evaluate_sample
from tapnet.network import od_totals, route_costs

net = tapnet.load_fixture("nguyen-dupuis")
rs = tapnet.enumerate_routes(net)
x = np.array([240.0, 160.0, 300.0, 120.0])
y = frank_wolfe(net, x, gap_tol=1e-10).flows
print(f"default step for this demand: {default_alpha(net, rs, x):.3e}")

rng = np.random.default_rng(0)
starts = {
    "zero flows": np.zeros(rs.n_routes),
    "noisy guess": rng.uniform(0, 2, rs.n_routes) * x.mean() / 3,
}
for label, h0 in starts.items():
    before = evaluate_sample(np.maximum(h0, 0), x, y, net, rs)
    res = refine(h0, x, net, rs, RefineOptions(tol=1e-10))
    after = evaluate_sample(res.flows, x, y, net, rs)
    print(f"\n{label}: {res.iterations} iterations, converged={res.converged}")
    print(f"  demand error E2  {before.e2:.2e} -> {after.e2:.2e}")
    print(f"  arc-flow error E1 {before.e1:.2e} -> {after.e1:.2e}")

# Wardrop check on the last result: per OD, used routes share the minimum cost.
c = route_costs(net, rs, res.flows)
for k, sl in enumerate(rs.od_slices):
    used = res.flows[sl] > 1e-6 * res.flows[sl].max()
    print(f"OD {net.od_pairs[k]}: {used.sum()} used routes, cost spread "
          f"{np.ptp(c[sl][used]):.1e}, cheapest unused "
          f"{c[sl][~used].min() if (~used).any() else float('nan'):.3f} vs used {c[sl][used].min():.3f}")
print("demand residual", np.abs(od_totals(rs, res.flows) - x).max())
