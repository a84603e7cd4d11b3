"""Command-line entry point: ``tapnet <subcommand> [options]``.

Every run writes a JSON manifest (resolved configuration, seeds,
fingerprints, versions, duration, output digests). ``--config FILE`` loads a
JSON object whose keys (flag names, with or without dashes) override the
command-line values.

Exit codes
----------
0 success, 2 usage error, 3 missing file, 4 invalid input, 5 unreachable OD
pair, 6 fingerprint mismatch, 7 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import pathlib
import platform
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from . import FIXTURES, __version__, fixture_path
from .dataset import (DatasetError, check_fingerprint, generate_dataset, load_dataset,
                      sample_demands, save_dataset, split_dataset)
from .equilibrium import DEFAULT_GAP_TOL, DEFAULT_MAX_ITERS, frank_wolfe
from .fixed_point import RefineOptions, project_nonneg, refine
from .metrics import DEFAULT_EPS, aggregate, evaluate_batch, format_table, write_report
from .mlp import TrainConfig, TrainingError, config_dict, forward, init_mlp, load_model, save_model, train
from .network import (FingerprintError, Network, NetworkError, NoRouteError, enumerate_routes,
                      load_network, route_set_from_dict)

log = logging.getLogger("tapnet")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_INVALID = 4
EXIT_NO_ROUTE = 5
EXIT_FINGERPRINT = 6
EXIT_NUMERIC = 7

ALIASES = {"nguyen": "nguyen-dupuis", "sioux": "sioux-falls", "regular": "regular-city-10x10"}

# (epochs, learning rate) per bundled network
HYPERPARAMS = {
    "small": (4000, 0.001),
    "steenbrink": (4000, 0.005),
    "nguyen-dupuis": (8000, 0.01),
    "sioux-falls": (4000, 0.0005),
    "regular-city-10x10": (4000, 0.0005),
}
DEFAULT_HYPER = (4000, 0.001)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seeds: dict = field(default_factory=dict)
    fingerprints: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    tool_version: str = __version__
    platform: dict = field(default_factory=lambda: {
        "python": platform.python_version(), "numpy": np.__version__,
        "scipy": scipy.__version__, "machine": platform.machine(),
    })
    duration_s: float = 0.0

    def record_output(self, key: str, path) -> None:
        data = pathlib.Path(path).read_bytes()
        self.outputs[key] = {"path": str(path), "sha256": hashlib.sha256(data).hexdigest()}

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, default=str)
            fh.write("\n")


# -- argument helpers ---------------------------------------------------------

def resolve_network(spec: str) -> Network:
    """A network file path or the name of a bundled fixture."""
    path = pathlib.Path(spec)
    if path.is_file():
        return load_network(path)
    name = ALIASES.get(spec, spec)
    if name in FIXTURES:
        return load_network(fixture_path(name))
    raise FileNotFoundError(f"network {spec!r} is neither a file nor a bundled fixture "
                            f"({', '.join(FIXTURES)})")


def _read_json(path):
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def _write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_routes(net: Network, path, k_bound=None):
    if path is None:
        return enumerate_routes(net, k_bound)
    return route_set_from_dict(net, _read_json(path))


def parse_eps(text: str) -> tuple:
    try:
        eps = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from None
    if not eps or not all(0 < e < 1 for e in eps):
        raise argparse.ArgumentTypeError("eps values must lie in (0, 1)")
    return eps


def parse_demand(text: str) -> np.ndarray:
    """Comma-separated numbers or a JSON file with a list (or list of lists)."""
    path = pathlib.Path(text)
    if path.suffix == ".json" or path.is_file():
        return np.asarray(_read_json(path), dtype=float)
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise ValueError(f"demand {text!r} is neither a file nor a number list") from None


# -- subcommands ---------------------------------------------------------------

def cmd_validate(args, man: RunManifest) -> int:
    net = resolve_network(args.network)
    rs = enumerate_routes(net, args.k)
    man.fingerprints.update(network=net.fingerprint, routes=rs.fingerprint)
    summary = {
        "name": net.name, "nodes": net.n_nodes, "links": net.n_links, "od_pairs": net.n_od,
        "cost_family": net.cost_family.value, "k_bound": rs.k_bound, "routes": rs.n_routes,
        "routes_per_od": rs.routes_per_od.tolist(), "fingerprint": net.fingerprint,
    }
    print(json.dumps(summary))
    return EXIT_OK


def cmd_routes(args, man: RunManifest) -> int:
    net = resolve_network(args.network)
    rs = enumerate_routes(net, args.k)
    man.fingerprints.update(network=net.fingerprint, routes=rs.fingerprint)
    _write_json(rs.to_dict(), args.out)
    man.record_output("routes", args.out)
    log.info("%d routes (K=%d) written to %s", rs.n_routes, rs.k_bound, args.out)
    return EXIT_OK


def _demand_interval(net: Network, args):
    lo = args.xmin if args.xmin is not None else (net.demand_interval or (None, None))[0]
    hi = args.xmax if args.xmax is not None else (net.demand_interval or (None, None))[1]
    if lo is None or hi is None:
        raise UsageError("network has no demand interval; pass --xmin and --xmax")
    return float(lo), float(hi)


def _generate(net: Network, args, seed: int, split_seed: int):
    interval = _demand_interval(net, args)
    demands = sample_demands(args.n, net.n_od, interval, seed)
    ds = generate_dataset(net, demands, args.gap_tol, args.fw_iters, args.variant,
                          workers=args.threads, meta={"interval": list(interval), "seed": seed})
    if ds.meta["excluded"]:
        log.warning("%d samples missed gap_tol and were dropped", len(ds.meta["excluded"]))
    if len(ds) >= 10:
        split_dataset(ds, args.train_fraction, split_seed)
    return ds


def cmd_generate(args, man: RunManifest) -> int:
    net = resolve_network(args.network)
    man.seeds.update(demand=args.seed, split=args.seed)
    man.fingerprints["network"] = net.fingerprint
    ds = _generate(net, args, args.seed, args.seed)
    save_dataset(ds, args.out)
    man.record_output("dataset", args.out)
    log.info("%d samples written to %s", len(ds), args.out)
    return EXIT_OK


def cmd_solve(args, man: RunManifest) -> int:
    net = resolve_network(args.network)
    man.fingerprints["network"] = net.fingerprint
    demands = np.atleast_2d(parse_demand(args.demand))
    out = []
    for x in demands:
        sol = frank_wolfe(net, x, args.gap_tol, args.fw_iters, args.variant)
        out.append({"demand": x.tolist(), "flows": sol.flows.tolist(),
                    "relative_gap": sol.relative_gap, "iterations": sol.iterations,
                    "converged": sol.converged, "objective": sol.objective})
    doc = {"network_fingerprint": net.fingerprint, "solutions": out}
    if args.out:
        _write_json(doc, args.out)
        man.record_output("solutions", args.out)
    else:
        print(json.dumps(doc))
    return EXIT_OK if all(s["converged"] for s in out) else EXIT_NUMERIC


def _dataset_network(args, ds_path):
    ds = load_dataset(ds_path)
    spec = args.network or ds.meta.get("network_name")
    if not spec:
        raise UsageError("pass --network (dataset does not name its network)")
    net = resolve_network(spec)
    check_fingerprint(ds, net)
    return net, ds


def _train(net, rs, ds, args, seed_init: int, seed_train: int):
    part = ds.train() if "train_idx" in ds.meta else ds
    m = init_mlp(net.n_od, rs.n_routes, seed=seed_init, normalize=args.normalize, x_ref=part.x)
    cfg = TrainConfig(epochs=args.epochs, learning_rate=args.lr, weight_decay=args.weight_decay,
                      batch_size=args.batch_size, seed=seed_train)
    hist = train(m, part.x, part.y, rs, cfg, log_every=max(cfg.epochs // 10, 1), logger=log)
    extra = {"train_config": config_dict(cfg), "normalize": args.normalize,
             "final_l1": hist["l1"][-1], "final_l2": hist["l2"][-1], "train_rows": len(part)}
    return m, extra


def _hyper(args, net):
    epochs, lr = HYPERPARAMS.get(net.name, DEFAULT_HYPER)
    if args.epochs is None:
        args.epochs = epochs
    if args.lr is None:
        args.lr = lr


def cmd_train(args, man: RunManifest) -> int:
    net, ds = _dataset_network(args, args.dataset)
    rs = load_routes(net, args.routes)
    _hyper(args, net)
    man.seeds.update(init=args.seed, train=args.seed)
    man.fingerprints.update(network=net.fingerprint, routes=rs.fingerprint)
    m, extra = _train(net, rs, ds, args, args.seed, args.seed)
    save_model(m, args.out_model, extra)
    man.record_output("model", args.out_model)
    log.info("model written to %s (final L1 %.4g, L2 %.4g)", args.out_model,
             extra["final_l1"], extra["final_l2"])
    return EXIT_OK


def _refine_opts(args) -> RefineOptions:
    return RefineOptions(alpha=args.alpha, tol=args.tol, max_iters=args.refine_iters,
                         warm_start=args.warm_start)


def cmd_refine(args, man: RunManifest) -> int:
    net = resolve_network(args.network)
    rs = load_routes(net, args.routes)
    man.fingerprints.update(network=net.fingerprint, routes=rs.fingerprint)
    if args.model_output:
        if not args.dataset:
            raise UsageError("--model-output needs --dataset for the demands")
        ds = load_dataset(args.dataset, net)
        part = ds.test() if "test_idx" in ds.meta else ds
        x = part.x
        h0 = forward(load_model(args.model_output, rs), x)
    else:
        doc = _read_json(args.flows_file)
        if doc.get("routes_fingerprint", rs.fingerprint) != rs.fingerprint:
            raise FingerprintError("flows file was written for a different route set")
        x = np.atleast_2d(np.asarray(doc["demands"], dtype=float))
        h0 = np.atleast_2d(np.asarray(doc["flows"], dtype=float))
    res = refine(h0, x, net, rs, _refine_opts(args))
    doc = {"routes_fingerprint": rs.fingerprint, "demands": x.tolist(), "flows": res.flows.tolist(),
           "residual": res.residual.tolist(), "iterations": res.iterations.tolist(),
           "converged": res.converged.tolist(), "alpha": np.asarray(res.alpha).tolist()}
    _write_json(doc, args.out)
    man.record_output("flows", args.out)
    n_bad = int(np.sum(~res.converged))
    if n_bad:
        log.warning("%d of %d rows did not reach tol within max_iters", n_bad, len(x))
    return EXIT_OK


def _report(net, rs, m, part, args, stem):
    pred = forward(m, part.x)
    rows = []
    raw = aggregate(evaluate_batch(project_nonneg(pred), part.x, part.y, net, rs, args.eps),
                    net.n_od, args.eps)
    rows.append({"label": "mlp", **raw})
    res = None
    if not args.no_refine:
        res = refine(pred, part.x, net, rs, _refine_opts(args))
        ref = aggregate(evaluate_batch(res.flows, part.x, part.y, net, rs, args.eps),
                        net.n_od, args.eps)
        rows.append({"label": "mlp+refine", **ref})
    notes = {"network": net.name, "samples": len(part),
             "mlp_row": "negative predicted flows clipped to zero before evaluation",
             "eps_aggregates": "an OD term counts only where its relaxed condition fails at that eps"}
    if res is not None:
        notes["refine"] = {
            "mode": "single operator application" if args.refine_iters == 1 else "iterated to tol",
            "alpha": "cocoercivity bound per sample" if args.alpha is None else args.alpha,
            "tol": args.tol, "max_iters": args.refine_iters, "warm_start": args.warm_start,
            "converged": int(res.converged.sum()), "max_iterations": int(res.iterations.max()),
        }
    write_report(rows, stem, args.eps, notes)
    print(format_table(rows, args.eps))
    return rows


def _stem(path: str) -> str:
    p = pathlib.Path(path)
    return str(p.with_suffix("")) if p.suffix in (".json", ".csv") else str(p)


def cmd_evaluate(args, man: RunManifest) -> int:
    net, ds = _dataset_network(args, args.dataset)
    rs = load_routes(net, args.routes)
    m = load_model(args.model, rs)
    man.fingerprints.update(network=net.fingerprint, routes=rs.fingerprint)
    part = ds.test() if "test_idx" in ds.meta else ds
    stem = _stem(args.report)
    _report(net, rs, m, part, args, stem)
    man.record_output("report_json", f"{stem}.json")
    man.record_output("report_csv", f"{stem}.csv")
    return EXIT_OK


def cmd_pipeline(args, man: RunManifest) -> int:
    net = resolve_network(args.network)
    _hyper(args, net)
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = {"demand": args.seed, "split": args.seed + 1, "init": args.seed + 2, "train": args.seed + 3}
    man.seeds.update(seeds)

    rs = enumerate_routes(net, args.k)
    man.fingerprints.update(network=net.fingerprint, routes=rs.fingerprint)
    _write_json(rs.to_dict(), out / "routes.json")
    man.record_output("routes", out / "routes.json")

    if args.dataset:
        ds = load_dataset(args.dataset, net)
    else:
        ds = _generate(net, args, seeds["demand"], seeds["split"])
        save_dataset(ds, out / "dataset.json")
        man.record_output("dataset", out / "dataset.json")
    if "test_idx" not in ds.meta:
        raise UsageError("pipeline needs at least 10 samples for a train/test split")

    model_path = pathlib.Path(args.model) if args.model else out / "model.json"
    if args.skip_train:
        m = load_model(model_path, rs)
    else:
        m, extra = _train(net, rs, ds, args, seeds["init"], seeds["train"])
        save_model(m, model_path, extra)
    man.record_output("model", model_path)

    stem = str(out / "report")
    _report(net, rs, m, ds.test(), args, stem)
    man.record_output("report_json", f"{stem}.json")
    man.record_output("report_csv", f"{stem}.csv")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON file whose keys override the flags")
    p.add_argument("--threads", type=int, default=1, help="worker processes for equilibrium solves")
    p.add_argument("--manifest", help="manifest path (default: next to the main output)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_fw(p, gap=True):
    if gap:
        p.add_argument("--gap-tol", type=float, default=DEFAULT_GAP_TOL)
    p.add_argument("--max-fw-iters", dest="fw_iters", type=int, default=DEFAULT_MAX_ITERS)
    p.add_argument("--variant", choices=("away", "classic"), default="away")


def _add_sampling(p):
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--xmin", type=float)
    p.add_argument("--xmax", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.7)
    _add_fw(p)


def _add_training(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True,
                   help="standardize inputs with training-split statistics")
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--batch-size", type=int)


def _add_refine(p, iters_flag="--max-iters"):
    p.add_argument("--alpha", type=float, help="step size (default: cocoercivity bound)")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument(iters_flag, dest="refine_iters", type=int, default=100_000)
    p.add_argument("--warm-start", action=argparse.BooleanOptionalAction, default=True,
                   help="lift nonpositive start entries using route costs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tapnet", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"tapnet {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("validate", help="check a network file and its route enumeration")
    p.add_argument("--network", required=True)
    p.add_argument("--k", type=int, help="route length bound (default: from the network)")
    _add_common(p)

    p = sub.add_parser("routes", help="enumerate routes and write a route file")
    p.add_argument("--network", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("generate", help="sample demands and solve equilibria")
    p.add_argument("--network", required=True)
    p.add_argument("--out", required=True)
    _add_sampling(p)
    _add_common(p)

    p = sub.add_parser("solve", help="solve equilibrium arc flows for given demands")
    p.add_argument("--network", required=True)
    p.add_argument("--demand", required=True, help="comma list or JSON file")
    p.add_argument("--out")
    _add_fw(p)
    _add_common(p)

    p = sub.add_parser("train", help="train the route-flow predictor")
    p.add_argument("--dataset", required=True)
    p.add_argument("--routes")
    p.add_argument("--network")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True)
    _add_training(p)
    _add_common(p)

    p = sub.add_parser("refine", help="fixed-point refinement of route flows")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model-output", help="model file; predictions on --dataset")
    src.add_argument("--flows-file", help="JSON with 'demands' and 'flows'")
    p.add_argument("--dataset")
    p.add_argument("--network", required=True)
    p.add_argument("--routes")
    p.add_argument("--out", required=True)
    _add_refine(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="metrics report for a model on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--network")
    p.add_argument("--routes")
    p.add_argument("--eps", type=parse_eps, default=DEFAULT_EPS)
    p.add_argument("--report", required=True, help="output stem; .json and .csv are written")
    p.add_argument("--no-refine", action="store_true")
    _add_refine(p)
    _add_common(p)

    p = sub.add_parser("pipeline", help="routes, dataset, training, refinement and report")
    p.add_argument("--network", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dataset", help="reuse a dataset instead of generating one")
    p.add_argument("--model", help="model path (default: OUT_DIR/model.json)")
    p.add_argument("--skip-train", action="store_true", help="load the model instead of training")
    p.add_argument("--eps", type=parse_eps, default=DEFAULT_EPS)
    p.add_argument("--no-refine", action="store_true")
    _add_sampling(p)
    _add_training(p)
    _add_refine(p, "--refine-iters")
    _add_common(p)
    return parser


COMMANDS = {
    "validate": cmd_validate, "routes": cmd_routes, "generate": cmd_generate,
    "solve": cmd_solve, "train": cmd_train, "refine": cmd_refine,
    "evaluate": cmd_evaluate, "pipeline": cmd_pipeline,
}


def apply_config(args, path) -> None:
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    for key, value in doc.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest in ("subcommand", "config") or not hasattr(args, dest):
            raise UsageError(f"config key {key!r} is not an option of '{args.subcommand}'")
        if dest == "eps" and isinstance(value, str):
            value = parse_eps(value)
        elif dest == "eps":
            value = tuple(float(v) for v in value)
        setattr(args, dest, value)


def _manifest_path(args):
    if args.manifest:
        return args.manifest
    if args.subcommand == "pipeline":
        return pathlib.Path(args.out_dir) / "manifest.json"
    for attr in ("out", "out_model", "report"):
        target = getattr(args, attr, None)
        if target:
            return f"{_stem(target)}.manifest.json"
    return f"tapnet-{args.subcommand}.manifest.json"


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        if args.config:
            apply_config(args, args.config)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        man = RunManifest(args.subcommand, {})
        code = COMMANDS[args.subcommand](args, man)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, str(exc) if exc.filename is None else f"no such file: {exc.filename}")
    except NoRouteError as exc:
        return _fail(EXIT_NO_ROUTE, str(exc))
    except FingerprintError as exc:
        return _fail(EXIT_FINGERPRINT, f"{exc}; regenerate the artifact for this network/route set")
    except (TrainingError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except (NetworkError, DatasetError, ValueError, KeyError, argparse.ArgumentTypeError) as exc:
        return _fail(EXIT_INVALID, str(exc))
    man.config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()}
    man.duration_s = time.perf_counter() - start
    man.write(_manifest_path(args))
    return code


def _fail(code: int, msg: str) -> int:
    print(f"tapnet: error: {msg}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())
