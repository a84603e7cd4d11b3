"""Prediction accuracy and equilibrium-condition metrics.

Per sample, with route costs ``c = c(h)`` and, for each OD pair, the used
routes (positive flow) and unused routes (zero flow):

* ``e1``  -- max |delta_arc h - y| / max y
* ``e2``  -- max |delta_od h - x| / max y
* ``Mm`` term of an OD -- (max used cost - min used cost) / max used cost
* ``mM`` term of an OD -- max(max used - min unused, 0) / max(max used, min unused)

The relaxed checks at margin ``eps``:

* Mm' -- max used - min used <= eps * max used
* mM' -- min unused >= (1 - eps) * max used

``e_Mm[eps]`` / ``e_mM[eps]`` sum an OD's term only when the matching relaxed
check fails at that margin, which makes them non-increasing in ``eps``.
Unfiltered sums are kept as ``e_Mm_raw`` / ``e_mM_raw``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .network import Network, RouteSet, arc_flows, od_totals, route_costs

DEFAULT_EPS = (0.1, 0.05, 0.01)
DEFAULT_ZERO_TOL = 1e-6
FLOW_FLOOR = 1e-12


@dataclass
class OdDetail:
    used: list
    unused: list
    max_used: float
    min_used: float
    min_unused: float  # inf when every route is used
    mm_term: float
    mM_term: float

    @property
    def pi(self) -> float:
        """Estimated equilibrium OD cost: cheapest used route."""
        return self.min_used


@dataclass
class MetricsRecord:
    e1: float
    e2: float
    e_Mm_raw: float
    e_mM_raw: float
    e_Mm: dict = field(default_factory=dict)
    e_mM: dict = field(default_factory=dict)
    od: list = field(default_factory=list)


def classify_routes(h_od: np.ndarray, zero_tol: float = DEFAULT_ZERO_TOL):
    """Split one OD's route positions into (used, unused); a route counts as
    unused when its flow is at most ``zero_tol`` times the OD's largest route
    flow (floored at 1e-12)."""
    top = max(float(np.max(h_od)) if h_od.size else 0.0, FLOW_FLOOR)
    used = h_od > zero_tol * top
    return np.flatnonzero(used), np.flatnonzero(~used)


def _od_detail(c_od, h_od, zero_tol) -> OdDetail:
    used, unused = classify_routes(h_od, zero_tol)
    if used.size == 0:
        return OdDetail([], unused.tolist(), 0.0, 0.0, float("inf"), 0.0, 0.0)
    cu = c_od[used]
    max_used, min_used = float(cu.max()), float(cu.min())
    min_unused = float(c_od[unused].min()) if unused.size else float("inf")
    mm_term = (max_used - min_used) / max_used if used.size > 1 else 0.0
    if unused.size:
        mM_term = max(max_used - min_unused, 0.0) / max(max_used, min_unused)
    else:
        mM_term = 0.0
    return OdDetail(used.tolist(), unused.tolist(), max_used, min_used, min_unused, mm_term, mM_term)


def mm_passes(d: OdDetail, eps: float) -> bool:
    return abs(d.max_used - d.min_used) <= eps * d.max_used


def mM_passes(d: OdDetail, eps: float) -> bool:
    if not d.used or not d.unused:
        return True
    return d.min_unused >= d.max_used * (1.0 - eps)


def check_conditions(record: MetricsRecord, eps: float) -> list:
    """Per OD ``(Mm' passes, mM' passes)`` at margin ``eps``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    return [(mm_passes(d, eps), mM_passes(d, eps)) for d in record.od]


def evaluate_sample(h, x, y, net: Network, rs: RouteSet, eps_list=DEFAULT_EPS,
                    zero_tol: float = DEFAULT_ZERO_TOL) -> MetricsRecord:
    """All metrics for one (nonnegative) route-flow prediction ``h``."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    scale = float(np.max(y)) if y.size else 0.0
    if not scale > 0:
        raise ValueError("max(y) must be positive to normalise the errors")
    e1 = float(np.max(np.abs(arc_flows(rs, h) - y))) / scale
    e2 = float(np.max(np.abs(od_totals(rs, h) - x))) / scale
    c = route_costs(net, rs, h)
    details = [_od_detail(c[sl], h[sl], zero_tol) for sl in rs.od_slices]
    rec = MetricsRecord(
        e1=e1, e2=e2,
        e_Mm_raw=sum(d.mm_term for d in details),
        e_mM_raw=sum(d.mM_term for d in details),
        od=details,
    )
    for eps in eps_list:
        checks = check_conditions(rec, eps)
        rec.e_Mm[eps] = sum(d.mm_term for d, (ok, _) in zip(details, checks) if not ok)
        rec.e_mM[eps] = sum(d.mM_term for d, (_, ok) in zip(details, checks) if not ok)
    return rec


def aggregate(records, n_od: int, eps_list=DEFAULT_EPS) -> dict:
    """Dataset-level row: means of e1/e2 and per-OD means of the condition
    metrics (sum divided by ``n_od * len(records)``)."""
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    n = len(records)
    row = {
        "E1": sum(r.e1 for r in records) / n,
        "E2": sum(r.e2 for r in records) / n,
    }
    for eps in eps_list:
        row[f"E_mM({eps:g})"] = sum(r.e_mM[eps] for r in records) / (n_od * n)
    for eps in eps_list:
        row[f"E_Mm({eps:g})"] = sum(r.e_Mm[eps] for r in records) / (n_od * n)
    return row


def evaluate_batch(H, X, Y, net: Network, rs: RouteSet, eps_list=DEFAULT_EPS,
                   zero_tol: float = DEFAULT_ZERO_TOL) -> list:
    return [evaluate_sample(h, x, y, net, rs, eps_list, zero_tol) for h, x, y in zip(H, X, Y)]


def report_columns(eps_list=DEFAULT_EPS) -> list:
    return (["E1", "E2"] + [f"E_mM({e:g})" for e in eps_list]
            + [f"E_Mm({e:g})" for e in eps_list])


def write_report(rows: list, path_stem, eps_list=DEFAULT_EPS, notes: dict | None = None) -> None:
    """Write ``<stem>.json`` and ``<stem>.csv``. Each row is a dict with a
    ``label`` plus the metric columns."""
    cols = report_columns(eps_list)
    with open(f"{path_stem}.json", "w") as fh:
        json.dump({"columns": cols, "rows": rows, "notes": notes or {}}, fh, indent=1)
        fh.write("\n")
    with open(f"{path_stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + cols)
        for r in rows:
            w.writerow([r["label"]] + [repr(float(r[c])) for c in cols])


def format_table(rows: list, eps_list=DEFAULT_EPS) -> str:
    cols = report_columns(eps_list)
    width = max(len(r["label"]) for r in rows) + 2
    head = "".ljust(width) + "".join(c.rjust(13) for c in cols)
    lines = [head]
    for r in rows:
        lines.append(r["label"].ljust(width) + "".join(f"{r[c]:13.4g}" for c in cols))
    return "\n".join(lines)
