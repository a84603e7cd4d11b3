"""Demand sampling, Frank-Wolfe labelled datasets, splits and persistence.

File format
-----------
A dataset file is a single JSON object::

    {"format": "tapnet-dataset", "version": 1,
     "meta": {...},                 # see Dataset.meta
     "x": [[...], ...],             # N x n_od demands
     "y": [[...], ...],             # N x n_links equilibrium arc flows
     "gap": [...], "iterations": [...]}

Floats are written with Python's shortest round-trip repr, so save/load is
bit-exact.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import DEFAULT_GAP_TOL, DEFAULT_MAX_ITERS, frank_wolfe, relative_gap
from .network import FingerprintError, Network

FORMAT = "tapnet-dataset"
VERSION = 1
TRAIN_FRACTION = 0.7


class DatasetError(ValueError):
    """Malformed or inconsistent dataset file."""


@dataclass
class Dataset:
    """Demand/equilibrium pairs for one network.

    ``meta`` keys: ``network_fingerprint``, ``network_name``, ``interval``,
    ``seed``, ``gap_tol``, ``max_iters``, ``fw_variant``, ``excluded``
    (sample indices whose solve missed ``gap_tol``), and after splitting
    ``split_seed``, ``train_fraction``, ``train_idx``, ``test_idx``.
    """

    x: np.ndarray
    y: np.ndarray
    gap: np.ndarray
    iterations: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        meta = {k: v for k, v in self.meta.items() if k not in ("train_idx", "test_idx")}
        meta["rows"] = idx.tolist()
        return Dataset(self.x[idx], self.y[idx], self.gap[idx], self.iterations[idx], meta)

    def train(self) -> "Dataset":
        return self.subset(self._split_key("train_idx"))

    def test(self) -> "Dataset":
        return self.subset(self._split_key("test_idx"))

    def _split_key(self, key):
        if key not in self.meta:
            raise DatasetError("dataset has not been split")
        return self.meta[key]


def sample_demands(n: int, n_od: int, interval, seed) -> np.ndarray:
    """``n`` demand vectors with i.i.d. uniform entries on ``interval``."""
    lo, hi = (float(v) for v in interval)
    if not (lo >= 0 and lo < hi):
        raise ValueError(f"invalid demand interval [{lo}, {hi}]")
    if n < 1 or n_od < 1:
        raise ValueError("n and n_od must be positive")
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(n, n_od))


def _solve_row(args):
    net, demand, gap_tol, max_iters, variant = args
    return frank_wolfe(net, demand, gap_tol=gap_tol, max_iters=max_iters, variant=variant)


def generate_dataset(net: Network, demands, gap_tol: float = DEFAULT_GAP_TOL,
                     max_iters: int = DEFAULT_MAX_ITERS, variant: str = "away",
                     workers: int = 1, meta: dict | None = None) -> Dataset:
    """Solve one equilibrium per demand row.

    Rows whose solve stops above ``gap_tol`` are dropped and their indices
    recorded in ``meta["excluded"]``. With ``workers > 1`` rows are solved in
    a process pool; output order always follows the input rows.
    """
    demands = np.atleast_2d(np.asarray(demands, dtype=float))
    if demands.shape[0] == 0:
        raise ValueError("no demand rows")
    if demands.shape[1] != net.n_od:
        raise ValueError(f"demand rows have {demands.shape[1]} entries, network has {net.n_od} OD pairs")
    jobs = [(net, row, gap_tol, max_iters, variant) for row in demands]
    if workers > 1:
        from multiprocessing import Pool

        with Pool(workers) as pool:
            sols = pool.map(_solve_row, jobs)
    else:
        sols = [_solve_row(j) for j in jobs]

    keep = [i for i, s in enumerate(sols) if s.converged]
    excluded = [i for i, s in enumerate(sols) if not s.converged]
    info = dict(meta or {})
    info.update(
        network_fingerprint=net.fingerprint,
        network_name=net.name,
        gap_tol=gap_tol,
        max_iters=max_iters,
        fw_variant=variant,
        excluded=excluded,
    )
    return Dataset(
        x=demands[keep],
        y=np.array([sols[i].flows for i in keep]).reshape(len(keep), net.n_links),
        gap=np.array([sols[i].relative_gap for i in keep]),
        iterations=np.array([sols[i].iterations for i in keep], dtype=int),
        meta=info,
    )


def split_indices(n: int, ratio: float = TRAIN_FRACTION, seed=0):
    """Shuffled (train, test) index lists with ``round(ratio * n)`` train rows."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(ratio * n + 0.5))
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


def split_dataset(ds: Dataset, ratio: float = TRAIN_FRACTION, seed=0):
    """Record a deterministic split in ``ds.meta`` and return
    ``(train, test)`` subsets."""
    if len(ds) < 10:
        raise ValueError("need at least 10 rows to split")
    train_idx, test_idx = split_indices(len(ds), ratio, seed)
    ds.meta.update(split_seed=seed, train_fraction=ratio, train_idx=train_idx, test_idx=test_idx)
    return ds.train(), ds.test()


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "meta": ds.meta,
        "x": ds.x.tolist(),
        "y": ds.y.tolist(),
        "gap": ds.gap.tolist(),
        "iterations": ds.iterations.tolist(),
    }


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(ds), fh)
        fh.write("\n")


def load_dataset(path, net: Network | None = None, verify: bool = False) -> Dataset:
    """Read a dataset file.

    With ``net`` the stored network fingerprint must match. ``verify``
    recomputes every row's relative gap and rejects rows above twice the
    stored value.
    """
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise DatasetError(f"{path}: not a {FORMAT} file")
    try:
        meta = doc["meta"]
        x = np.array(doc["x"], dtype=float)
        y = np.array(doc["y"], dtype=float)
        gap = np.array(doc["gap"], dtype=float)
        iterations = np.array(doc["iterations"], dtype=int)
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"{path}: malformed dataset ({exc})") from None
    n = len(gap)
    if x.shape[0] != n or y.shape[0] != n or iterations.shape != (n,):
        raise DatasetError(f"{path}: row counts disagree")
    if n:
        if x.ndim != 2 or y.ndim != 2:
            raise DatasetError(f"{path}: x and y must be matrices")
    ds = Dataset(x.reshape(n, -1), y.reshape(n, -1), gap, iterations, copy.deepcopy(meta))
    if net is not None:
        check_fingerprint(ds, net)
        if verify:
            for i in range(n):
                g = relative_gap(net, ds.y[i], ds.x[i])
                if g > 2 * ds.gap[i] + 1e-15:
                    raise DatasetError(f"{path}: row {i} relative gap {g:.3e} exceeds stored {ds.gap[i]:.3e}")
    return ds


def check_fingerprint(ds: Dataset, net: Network) -> None:
    fp = ds.meta.get("network_fingerprint")
    if fp != net.fingerprint:
        raise FingerprintError(
            f"dataset belongs to network {fp}, not {net.name} ({net.fingerprint})")
