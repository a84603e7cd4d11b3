"""Projection-splitting refinement of route flows toward user equilibrium.

The operator applied to a route-flow vector ``h`` with demands ``x`` is::

    P(h) = h - P1(h) + P2(2*P1(h) - h - alpha*c(P1(h)))

where ``P1`` clips to the nonnegative orthant, ``P2`` projects onto the
demand-feasible affine set ``{h : delta_od @ h = x}`` and ``c`` is the route
cost map. ``P2`` is applied to the whole bracketed argument (a composition,
not a product). A point with ``h == P(h) == P1(h)`` solves the equilibrium
variational inequality.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .network import Network, RouteSet, _right_mul, route_costs


@dataclass(frozen=True)
class RefineOptions:
    """``alpha=None`` picks a step from a cocoercivity bound on the route
    cost map (see :func:`default_alpha`). ``warm_start`` lifts the start
    point with :func:`lift_start` before iterating."""

    alpha: float | None = None
    tol: float = 1e-9
    max_iters: int = 100_000
    warm_start: bool = True

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class RefineResult:
    flows: np.ndarray
    residual: np.ndarray | float
    iterations: np.ndarray | int
    converged: np.ndarray | bool
    alpha: np.ndarray | float


def project_nonneg(h) -> np.ndarray:
    return np.maximum(np.asarray(h, dtype=float), 0.0)


def pinv_delta_od(delta_od):
    """Moore-Penrose inverse of an OD-route incidence matrix.

    Each column holds a single one, so the rows are orthogonal and
    ``pinv = delta_od.T @ diag(1 / routes_per_od)``.
    """
    is_sparse = sparse.issparse(delta_od)
    dense = delta_od.toarray() if is_sparse else np.asarray(delta_od, dtype=float)
    if not np.all((dense == 0) | (dense == 1)):
        raise ValueError("OD incidence matrix must be 0/1")
    if not np.all(dense.sum(axis=0) == 1):
        raise ValueError("every route must belong to exactly one OD pair")
    counts = dense.sum(axis=1)
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"OD row(s) {empty} have no routes; pseudoinverse undefined")
    if is_sparse:
        return sparse.csr_matrix(delta_od.T @ sparse.diags(1.0 / counts))
    return dense.T / counts


def project_demand(h, x, delta_od, pinv) -> np.ndarray:
    """``h - pinv @ (delta_od @ h - x)``; rows of a 2-D ``h`` are projected
    independently. Each OD's violation is spread evenly over its routes."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    if h.shape[-1] != delta_od.shape[1] or x.shape[-1] != delta_od.shape[0]:
        raise ValueError("shape mismatch between flows, demands and incidence matrix")
    violation = _right_mul(h, delta_od.T) - x
    return h - _right_mul(violation, pinv.T)


def fp_step(h, x, net: Network, rs: RouteSet, alpha, pinv=None) -> np.ndarray:
    """One application of the splitting operator.

    For row batches ``alpha`` may be a column of per-row steps.
    """
    if np.any(np.asarray(alpha) < 0):
        raise ValueError("alpha must be nonnegative")
    if pinv is None:
        pinv = pinv_delta_od(rs.delta_od)
    h = np.asarray(h, dtype=float)
    h_pos = project_nonneg(h)
    costs = route_costs(net, rs, h_pos)
    if not np.all(np.isfinite(costs)):
        raise FloatingPointError("non-finite route cost in fixed-point step")
    return h - h_pos + project_demand(2.0 * h_pos - h - alpha * costs, x, rs.delta_od, pinv)


def default_alpha(net: Network, rs: RouteSet, x) -> float | np.ndarray:
    """Step size ``1 / (L * ||delta_arc||^2)`` for demand vector ``x``.

    ``L`` bounds the slope of every link time over flows reachable by
    nonnegative demand-feasible route flows, which makes ``alpha * c``
    firmly nonexpansive. A 2-D ``x`` gives one step per row.
    """
    x = np.asarray(x, dtype=float)
    xs = np.atleast_2d(x)
    # largest possible flow on each link: sum of demands of ODs that reach it
    link_od = rs.delta_od @ rs.delta_arc.T
    if sparse.issparse(link_od):
        link_od = link_od.toarray()
    v_max = xs @ (link_od > 0)
    slope = np.max(net.link_time_derivatives(v_max), axis=1)
    if rs.n_routes <= 4000:
        norm_sq = float(np.linalg.norm(rs.dense_delta_arc(), 2)) ** 2
    else:
        abs_arc = abs(rs.delta_arc)
        norm_sq = float(abs_arc.sum(axis=0).max() * abs_arc.sum(axis=1).max())
    # zero slope only when no flow can load the links; any step is then safe
    alpha = 1.0 / (np.where(slope > 0, slope, 1.0) * norm_sq)
    return float(alpha[0]) if x.ndim == 1 else alpha


def lift_start(h, x, net: Network, rs: RouteSet, alpha) -> np.ndarray:
    """Move nonpositive entries of ``h`` to ``min(h_i, alpha * (pi_k - c_i))``.

    ``pi_k`` is the cheapest cost among routes of OD ``k`` that carry flow
    (all routes if none do), with costs evaluated at ``P1(h)``. ``P1(h)`` is
    unchanged. A nonnegative equilibrium maps to an exact fixed point of the
    operator, whose unused coordinates sit at ``alpha * (pi_k - c_i) <= 0``.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    h_pos = project_nonneg(h)
    c = np.atleast_2d(route_costs(net, rs, h_pos))
    out = h.copy()
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float).reshape(-1, 1), (h.shape[0], 1))
    for sl in rs.od_slices:
        cs = c[:, sl]
        used = h_pos[:, sl] > 0
        pi = np.where(used.any(axis=1), np.where(used, cs, np.inf).min(axis=1), cs.min(axis=1))
        off = h[:, sl] <= 0
        lifted = np.minimum(h[:, sl], alpha * (pi[:, None] - cs))
        out[:, sl] = np.where(off, lifted, h[:, sl])
    return out


def refine(h0, x, net: Network, rs: RouteSet, opts: RefineOptions | None = None) -> RefineResult:
    """Iterate the splitting operator from ``h0`` until the sup-norm step is
    at most ``opts.tol``.

    ``h0``/``x`` may be single vectors or row batches; batch rows stop
    updating as soon as they converge, so each row follows its own solo run
    (up to floating-point rounding of batched products).
    Returns the nonnegative part of the last iterate. ``iterations`` counts
    accepted moves before convergence was detected; reaching ``max_iters``
    sets ``converged`` False rather than raising. With ``warm_start=False``
    and ``max_iters=1`` this is a single application of the operator.
    """
    opts = opts or RefineOptions()
    h0 = np.asarray(h0, dtype=float)
    x = np.asarray(x, dtype=float)
    single = h0.ndim == 1
    z = np.atleast_2d(h0).copy()
    xs = np.atleast_2d(x)
    if z.shape[0] != xs.shape[0]:
        raise ValueError("flows and demands have different batch sizes")
    if opts.alpha is not None:
        alpha = np.full(xs.shape[0], float(opts.alpha))
    else:
        alpha = default_alpha(net, rs, xs)
    pinv = pinv_delta_od(rs.delta_od)
    if opts.warm_start:
        z = lift_start(z, xs, net, rs, alpha)

    n = z.shape[0]
    residual = np.full(n, np.inf)
    iterations = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for _ in range(opts.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        nxt = fp_step(z[idx], xs[idx], net, rs, alpha[idx, None], pinv)
        res = np.max(np.abs(nxt - z[idx]), axis=1)
        residual[idx] = res
        z[idx] = nxt
        done = res <= opts.tol
        iterations[idx[~done]] += 1
        active[idx[done]] = False

    converged = ~active
    flows = project_nonneg(z)
    if single:
        return RefineResult(flows[0], float(residual[0]), int(iterations[0]),
                            bool(converged[0]), float(alpha[0]))
    return RefineResult(flows, residual, iterations, converged, alpha)


def vi_gap(net: Network, rs: RouteSet, h, x) -> float:
    """``c(h).h - sum_k x_k * min cost of OD k``: zero exactly at equilibrium
    for feasible nonnegative ``h``."""
    h = np.asarray(h, dtype=float)
    c = route_costs(net, rs, h)
    best = np.array([c[sl].min() for sl in rs.od_slices])
    return float(c @ h - np.asarray(x, dtype=float) @ best)
