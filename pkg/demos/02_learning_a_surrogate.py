"""Learning a route-flow surrogate on a small network.

Samples random demands, solves each one to equilibrium, trains the
one-hidden-layer network on the arc flows, and then scores it on the held-out
rows before and after refinement. Takes a few seconds.

Run with ``python3 demos/02_learning_a_surrogate.py``.
"""
import numpy as np

import tapnet
from tapnet.dataset import generate_dataset, sample_demands, split_dataset
from tapnet.fixed_point import refine
from tapnet.metrics import aggregate, evaluate_batch, format_table
from tapnet.mlp import TrainConfig, forward, init_mlp, train

net = tapnet.load_fixture("small")
rs = tapnet.enumerate_routes(net)
x = sample_demands(200, net.n_od, net.demand_interval, seed=0)
ds = generate_dataset(net, x)
train_ds, test_ds = split_dataset(ds, 0.7, seed=1)
print(f"{len(train_ds)} training rows, {len(test_ds)} test rows, {rs.n_routes} routes")

# Labels are arc flows, yet the network predicts route flows: the loss maps
# predictions through the arc-route incidence matrix. For the first half of
# training only the demand-consistency term is active.
model = init_mlp(net.n_od, rs.n_routes, seed=2, normalize=True, x_ref=train_ds.x)
cfg = TrainConfig(epochs=4000, learning_rate=0.005, seed=3)
hist = train(model, train_ds.x, train_ds.y, rs, cfg)
s = hist["switch_epoch"]
print(f"loss before the switch (epoch {s - 1}): L1={hist['l1'][s - 1]:.3g}")
print(f"final loss: L1={hist['l1'][-1]:.3g}  L2={hist['l2'][-1]:.3g}\n")

h = np.maximum(forward(model, test_ds.x), 0.0)
rows = [{"label": "mlp", **aggregate(evaluate_batch(h, test_ds.x, test_ds.y, net, rs), net.n_od)}]

# The raw predictions are only approximately feasible; refinement finishes
# the job starting from them.
refined = refine(forward(model, test_ds.x), test_ds.x, net, rs).flows
rows.append({"label": "mlp+refine",
             **aggregate(evaluate_batch(refined, test_ds.x, test_ds.y, net, rs), net.n_od)})
print(format_table(rows))
