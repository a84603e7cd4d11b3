"""Demand -> route-flow predictor trained with a feasibility-plus-fit loss.

Architecture: input (n_od) -> dense -> ReLU (n_routes) -> dense (n_routes),
no output activation. The loss for demand ``x``, arc-flow label ``y`` and
prediction ``h`` is::

    L1 = ||delta_od @ h - x||^2          (demand feasibility)
    L2 = ||delta_arc @ h - y||^2         (fit to equilibrium arc flows)

Training runs L1 alone for the first half of the epochs and L1 + L2 after.
Gradients are derived by hand; the optimizer is AdamW with decoupled weight
decay.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import FingerprintError, RouteSet, _right_mul


class TrainingError(RuntimeError):
    def __init__(self, epoch, msg="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"{msg} at epoch {epoch}")


@dataclass
class Mlp:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    seed: int | None = None
    routes_fingerprint: str = ""

    PARAMS = ("W1", "b1", "W2", "b2")

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]

    @property
    def n_out(self) -> int:
        return self.W2.shape[0]

    @property
    def normalized(self) -> bool:
        return self.norm_mean is not None

    def params(self) -> dict:
        return {k: getattr(self, k) for k in self.PARAMS}


def init_mlp(n_in: int, n_routes: int, seed=0, normalize: bool = False, x_ref=None) -> Mlp:
    """He-normal weights, zero biases.

    With ``normalize`` the inputs are standardized using the column
    statistics of ``x_ref`` (identity statistics when it is omitted);
    constant columns keep a unit scale.
    """
    if n_in < 1 or n_routes < 1:
        raise ValueError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_routes, n_in))
    W2 = rng.normal(0.0, math.sqrt(2.0 / n_routes), size=(n_routes, n_routes))
    m = Mlp(W1, np.zeros(n_routes), W2, np.zeros(n_routes), seed=seed)
    if normalize:
        if x_ref is None:
            mean, std = np.zeros(n_in), np.ones(n_in)
        else:
            x_ref = np.atleast_2d(np.asarray(x_ref, dtype=float))
            mean, std = x_ref.mean(axis=0), x_ref.std(axis=0)
            std = np.where(std > 0, std, 1.0)
        m.norm_mean, m.norm_std = mean, std
    return m


def _inputs(m: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != m.n_in:
        raise ValueError(f"expected {m.n_in} inputs, got {x.shape[-1]}")
    if m.normalized:
        x = (x - m.norm_mean) / m.norm_std
    return x


def forward(m: Mlp, x) -> np.ndarray:
    """Route-flow prediction for one demand vector or a batch of rows."""
    xt = _inputs(m, x)
    hidden = np.maximum(xt @ m.W1.T + m.b1, 0.0)
    return hidden @ m.W2.T + m.b2


def loss(h, x, y, rs: RouteSet, phase: int = 2):
    """``(active, L1, L2)``. Batches are averaged over rows; phase 1 makes
    only L1 active, phase 2 the sum."""
    if phase not in (1, 2):
        raise ValueError("phase must be 1 or 2")
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if h.shape[-1] != rs.n_routes or x.shape[-1] != rs.n_od or y.shape[-1] != rs.delta_arc.shape[0]:
        raise ValueError("shape mismatch between prediction, data and route set")
    r1 = _right_mul(h, rs.delta_od.T) - x
    r2 = _right_mul(h, rs.delta_arc.T) - y
    l1 = float(np.mean(np.sum(np.atleast_2d(r1) ** 2, axis=1)))
    l2 = float(np.mean(np.sum(np.atleast_2d(r2) ** 2, axis=1)))
    return (l1 if phase == 1 else l1 + l2), l1, l2


def gradients(m: Mlp, x, y, rs: RouteSet, phase: int = 2):
    """Loss triple and gradients of the active loss w.r.t. every parameter.

    Overflow yields non-finite values rather than warnings; callers check.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _gradients(m, x, y, rs, phase)


def _gradients(m, x, y, rs, phase):
    xt = np.atleast_2d(_inputs(m, x))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = xt.shape[0]
    pre = xt @ m.W1.T + m.b1
    hidden = np.maximum(pre, 0.0)
    h = hidden @ m.W2.T + m.b2
    values = loss(h, x, y, rs, phase)

    r1 = _right_mul(h, rs.delta_od.T) - x
    g_h = _right_mul(r1, rs.delta_od)
    if phase == 2:
        r2 = _right_mul(h, rs.delta_arc.T) - y
        g_h = g_h + _right_mul(r2, rs.delta_arc)
    g_h *= 2.0 / n

    grads = {"W2": g_h.T @ hidden, "b2": g_h.sum(axis=0)}
    g_pre = (g_h @ m.W2) * (pre > 0)
    grads["W1"] = g_pre.T @ xt
    grads["b1"] = g_pre.sum(axis=0)
    return values, grads


@dataclass
class AdamW:
    """AdamW with bias correction; weight decay is applied to the parameter
    directly (``p -= lr * weight_decay * p``) before the adaptive step."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` (name -> array) in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            p -= self.lr * self.weight_decay * p
            p -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


def train_step(m: Mlp, x, y, rs: RouteSet, phase: int, opt: AdamW):
    """One optimizer update on a batch; returns the pre-update loss triple."""
    values, grads = gradients(m, x, y, rs, phase)
    if not all(math.isfinite(v) for v in values):
        raise TrainingError(opt.t, "non-finite loss")
    opt.step(m.params(), grads)
    return values


@dataclass
class TrainConfig:
    """Defaults not fixed by the method: batch size (full batch), weight decay
    0.01, Adam betas/eps. ``loss_switch_epoch`` is ``epochs // 2``."""

    epochs: int = 4000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 2:
            raise ValueError("epochs must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    @property
    def loss_switch_epoch(self) -> int:
        return self.epochs // 2

    def optimizer(self) -> AdamW:
        return AdamW(self.learning_rate, self.beta1, self.beta2, self.eps, self.weight_decay)


def train(m: Mlp, x, y, rs: RouteSet, cfg: TrainConfig, log_every: int = 0, logger=None):
    """Train ``m`` in place.

    Epochs before ``cfg.loss_switch_epoch`` update on L1 only, later epochs on
    L1 + L2. Returns a history dict with per-epoch ``l1``, ``l2``, ``total``
    (epoch means of the pre-update batch losses) and ``phase``.
    """
    if m.routes_fingerprint and m.routes_fingerprint != rs.fingerprint:
        raise FingerprintError("model was initialised for a different route set")
    m.routes_fingerprint = rs.fingerprint
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = x.shape[0]
    opt = cfg.optimizer()
    rng = np.random.default_rng(cfg.seed)
    bs = n if not cfg.batch_size else min(cfg.batch_size, n)
    hist = {"l1": [], "l2": [], "total": [], "phase": [],
            "switch_epoch": cfg.loss_switch_epoch, "batch_size": bs}
    for epoch in range(cfg.epochs):
        phase = 1 if epoch < cfg.loss_switch_epoch else 2
        order = np.arange(n) if bs == n else rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            try:
                vals = train_step(m, x[idx], y[idx], rs, phase, opt)
            except TrainingError:
                raise TrainingError(epoch) from None
            sums += vals
            batches += 1
        total, l1, l2 = sums / batches
        hist["l1"].append(l1)
        hist["l2"].append(l2)
        hist["total"].append(total)
        hist["phase"].append(phase)
        if logger is not None and log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            logger.info("epoch %d phase %d  L1 %.6g  L2 %.6g", epoch, phase, l1, l2)
    return hist


# -- persistence ------------------------------------------------------------

MODEL_FORMAT = "tapnet-mlp"


def model_to_dict(m: Mlp) -> dict:
    return {
        "format": MODEL_FORMAT,
        "routes_fingerprint": m.routes_fingerprint,
        "seed": m.seed,
        "W1": m.W1.tolist(), "b1": m.b1.tolist(),
        "W2": m.W2.tolist(), "b2": m.b2.tolist(),
        "norm_mean": None if m.norm_mean is None else m.norm_mean.tolist(),
        "norm_std": None if m.norm_std is None else m.norm_std.tolist(),
    }


def model_from_dict(doc: dict) -> Mlp:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a tapnet model file")

    def arr(key):
        return None if doc.get(key) is None else np.array(doc[key], dtype=float)

    m = Mlp(arr("W1"), arr("b1"), arr("W2"), arr("b2"), arr("norm_mean"), arr("norm_std"),
            seed=doc.get("seed"), routes_fingerprint=doc.get("routes_fingerprint", ""))
    n_r, n_d = m.W1.shape
    if m.W2.shape != (n_r, n_r) or m.b1.shape != (n_r,) or m.b2.shape != (n_r,):
        raise ValueError("inconsistent layer shapes in model file")
    if m.norm_std is not None and np.any(m.norm_std <= 0):
        raise ValueError("normalization std must be positive")
    return m


def save_model(m: Mlp, path, extra: dict | None = None) -> None:
    doc = model_to_dict(m)
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path, rs: RouteSet | None = None) -> Mlp:
    with open(path) as fh:
        m = model_from_dict(json.load(fh))
    if rs is not None and m.routes_fingerprint != rs.fingerprint:
        raise FingerprintError(
            f"model was trained on route set {m.routes_fingerprint}, not {rs.fingerprint}")
    return m


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
