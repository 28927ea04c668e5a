"""Command-line surface: data generation, training, probing, verification,
and grid export.

Every command resolves its configuration as JSON-config-then-flag-overrides,
persists the fully resolved config next to its outputs, and writes a
MANIFEST.json with a sha256 per artifact.  Given identical flags and seed,
every output byte is reproducible.  Exit codes: 0 success, 1 verification or
training failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import dml as dml_mod
from . import mim as mim_mod
from . import nn, oracles, train as train_mod
from .errors import ConfigError
from .tensor import Tensor

DML_ARCH_HIDDEN = [400, 400, 400, 400]   # 4-layer MLP, 400 units, batch norm, softmax head
MNIST_CNN_ARCH = "C(100,3,1,0)-P(2,2,0,max)-C(100,3,1,0)-C(200,3,1,0)-P(2,2,0,max)-C(500,3,1,0)-P(.,.,.,avg)-FC(10)"


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("NB_SEED")
    if env is not None:
        return int(env)
    return 0


def _load_config(path: str | None, known: dict) -> dict:
    """JSON config with unknown-key rejection; flags override these values."""
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    unknown = set(cfg) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)} (known: {sorted(known)})")
    return cfg


def _merge_config(defaults: dict, file_cfg: dict, args, flag_names: list[str]) -> dict:
    resolved = dict(defaults)
    resolved.update(file_cfg)
    for name in flag_names:
        value = getattr(args, name.replace("-", "_"))
        if value is not None:
            resolved[name] = value
    return resolved


def _write_manifest(out_dir: Path, paths: list[Path]) -> None:
    arts = []
    for p in sorted(paths):
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        arts.append({"path": p.name, "sha256": digest, "bytes": p.stat().st_size})
    (out_dir / "MANIFEST.json").write_text(json.dumps({"artifacts": arts}, indent=1) + "\n")


def _emit_config(out_dir: Path, resolved: dict) -> Path:
    path = out_dir / "resolved_config.json"
    path.write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    return path


def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".meta.json")


# --- gen-data ---

def cmd_gen_data(args) -> int:
    seed = _resolve_seed(args)
    kind = args.kind
    if kind == "moons":
        ds = D.make_two_moons(args.n, gap=args.gap, noise=args.noise, seed=seed)
    elif kind == "circles":
        ds = D.make_circles(args.n, noise=args.noise, seed=seed)
    elif kind == "blobs":
        ds = D.make_blobs(args.k, args.n, noise=args.noise, seed=seed)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    # normalize in the base space, then lift: the smoothness perturbation
    # scale is calibrated for unit-variance data
    ds = D.standardize(ds)
    if args.dim is not None:
        ds = D.lift_and_rotate(ds, args.dim, seed=seed + 1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_csv(ds, out)
    meta = dict(ds.meta)
    meta["seed"] = seed
    meta["standardized"] = True
    _meta_path(out).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    print(f"wrote {ds.size} points of dimension {ds.dim} ({ds.num_components} components) to {out}")
    return 0


def _stopping_split(args, points: np.ndarray, objective, seed: int):
    """Optionally hold out a user-designated stopping split.

    Returns (training points, epoch callback or None).  The callback evaluates
    the training objective on the held-out points and stops after
    ``--patience`` epochs without improvement.
    """
    fraction = getattr(args, "stop_split", 0.0) or 0.0
    if fraction <= 0.0:
        return points, None
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"--stop-split must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed + 99)
    perm = rng.permutation(points.shape[0])
    n_hold = max(2, int(round(fraction * points.shape[0])))
    hold, keep = points[perm[:n_hold]], points[perm[n_hold:]]
    hold_t = Tensor(hold)

    def evaluate(net) -> float:
        loss, _ = objective(net, hold_t, np.random.default_rng(0))
        return loss.item()

    return keep, train_mod.holdout_early_stopper(evaluate, patience=args.patience)


def _load_dataset(args) -> D.ManifoldDataset:
    data_path = Path(args.data)
    if getattr(args, "labels", None):
        return D.load_idx(data_path, Path(args.labels))
    meta = {}
    mp = _meta_path(data_path)
    if mp.exists():
        meta = json.loads(mp.read_text())
    return D.load_csv(data_path, meta=meta)


# --- train-dml ---

def cmd_train_dml(args) -> int:
    seed = _resolve_seed(args)
    defaults = {"k": 2, "beta": 2.0, "mbs": 400, "bs": 400, "lr": 1e-3,
                "epochs": 300, "weight-decay": 0.0, "arch": "mlp"}
    if args.preset == "mnist-cnn":
        defaults.update({"k": 10, "beta": 1.0, "mbs": 5000, "bs": 5000,
                         "epochs": 100, "arch": "cnn"})
    cfg = _merge_config(defaults, _load_config(args.config, defaults), args,
                        ["k", "beta", "mbs", "bs", "lr", "epochs"])
    print(f"smoothness weight beta={cfg['beta']} (useful sweep range: 0.5 to 6)")

    ds = _load_dataset(args)
    if not ds.meta.get("standardized"):
        ds = D.standardize(ds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg["arch"] == "cnn":
        side = int(round(np.sqrt(ds.dim)))
        net = nn.build_cnn(MNIST_CNN_ARCH, (1, side, side), seed=seed, batchnorm=True,
                           softmax_head=True)
        points = ds.points.reshape(ds.size, 1, side, side)
    else:
        net = nn.build_mlp(ds.dim, DML_ARCH_HIDDEN, cfg["k"], seed=seed,
                           batchnorm=True, softmax_head=True)
        points = ds.points

    dml_cfg = dml_mod.DmlConfig(partitions=cfg["k"], beta=cfg["beta"])
    sched = train_mod.AccumulationSchedule(mbs=cfg["mbs"], bs=cfg["bs"], epochs=cfg["epochs"])
    opt = train_mod.AdamState.for_params(net.parameters(), lr=cfg["lr"],
                                         weight_decay=cfg["weight-decay"])
    objective = dml_mod.make_dml_objective(dml_cfg)
    train_points, callback = _stopping_split(args, points, objective, seed)
    log = train_mod.train_objective(net, train_points, objective, sched, opt, seed=seed,
                                    epoch_callback=callback)

    pred = train_mod.predict_components(net, points)
    accuracy = train_mod.cluster_accuracy(pred, ds.components, cfg["k"])
    out_head = net.forward(Tensor(points[: min(ds.size, 5000)]), train=False).data
    if cfg["k"] == 2:
        L = out_head[:, 0]
        final_obj = dml_mod.dml_binary_objective(L, float(L.mean()))
        final_loss = float(dml_mod.dml_binary_loss(Tensor(L), dml_cfg).item())
    else:
        from .bayes import PosteriorBatch
        final_obj = None
        final_loss = float(dml_mod.dml_multi_loss(PosteriorBatch(Tensor(out_head)), dml_cfg).item())

    ckpt_json, ckpt_bin = nn.save_checkpoint(net, out_dir / "checkpoint")
    log_path = out_dir / "train_log.jsonl"
    log.write_jsonl(log_path)
    metrics_path = out_dir / "metrics.csv"
    log.write_metrics_csv(metrics_path)
    labels_path = out_dir / "predicted_labels.csv"
    labels_path.write_text("\n".join(["index,predicted,truth"] +
                                     [f"{i},{p},{t}" for i, (p, t) in
                                      enumerate(zip(pred, ds.components))]) + "\n")
    report = {"cluster_accuracy": accuracy, "final_loss": final_loss,
              "final_objective": final_obj, "updates": len(log.records), "seed": seed}
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    cfg_path = _emit_config(out_dir, {**cfg, "seed": seed, "command": "train-dml",
                                      "data": str(args.data)})
    _write_manifest(out_dir, [ckpt_json, ckpt_bin, log_path, metrics_path, labels_path,
                              report_path, cfg_path])
    print(f"cluster accuracy {accuracy:.4f}; loss {final_loss:.6f}; objective {final_obj}")
    return 0


# --- train-mim ---

def cmd_train_mim(args) -> int:
    seed = _resolve_seed(args)
    defaults = {"alpha": 2.0, "beta": 4.0, "mbs": 500, "bs": 2000, "lr": 1e-3,
                "epochs": 20, "weight-decay": 0.0, "hidden": [500, 500, 500],
                "scales": "off", "arch": "mlp",
                "cnn-arch": "C(64,3,1,0)-P(2,2,0,max)-C(128,3,1,0)"}
    cfg = _merge_config(defaults, _load_config(args.config, defaults), args,
                        ["alpha", "beta", "mbs", "bs", "lr", "epochs", "scales"])
    ds = _load_dataset(args)
    if not ds.meta.get("standardized"):
        ds = D.standardize(ds)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg["arch"] == "cnn":
        side = int(round(np.sqrt(ds.dim)))
        net = nn.build_cnn(cfg["cnn-arch"], (1, side, side), seed=seed, batchnorm=True)
        points = ds.points.reshape(ds.size, 1, side, side)
    else:
        net = nn.build_mlp(ds.dim, list(cfg["hidden"]), out_units=None, seed=seed)
        points = ds.points
    mim_cfg = mim_mod.MimConfig(alpha=cfg["alpha"], beta=cfg["beta"],
                                use_scales=(cfg["scales"] == "on"))
    sched = train_mod.AccumulationSchedule(mbs=cfg["mbs"], bs=cfg["bs"], epochs=cfg["epochs"])
    opt = train_mod.AdamState.for_params(net.parameters(), lr=cfg["lr"],
                                         weight_decay=cfg["weight-decay"])
    objective = mim_mod.make_mim_objective(mim_cfg, v1=args.v1)
    train_points, callback = _stopping_split(args, points, objective, seed)
    log = train_mod.train_objective(net, train_points, objective, sched, opt, seed=seed,
                                    epoch_callback=callback)

    ckpt_json, ckpt_bin = nn.save_checkpoint(net, out_dir / "checkpoint")
    log_path = out_dir / "train_log.jsonl"
    log.write_jsonl(log_path)
    metrics_path = out_dir / "metrics.csv"
    log.write_metrics_csv(metrics_path)
    cfg_path = _emit_config(out_dir, {**cfg, "seed": seed, "v1": bool(args.v1),
                                      "command": "train-mim", "data": str(args.data)})
    _write_manifest(out_dir, [ckpt_json, ckpt_bin, log_path, metrics_path, cfg_path])
    print(f"trained {len(log.records)} updates; final total {log.records[-1]['total']:.6f}")
    return 0


# --- probe ---

def cmd_probe(args) -> int:
    seed = _resolve_seed(args)
    net = nn.load_checkpoint(args.checkpoint)
    ds = _load_dataset(args)
    if not ds.meta.get("standardized"):
        ds = D.standardize(ds)
    features = train_mod.extract_features(net, ds.points, tap=args.layer,
                                          bn_train_mode=(args.bn_mode == "train"))
    accuracy = train_mod.linear_probe(features, ds.components, hidden_units=args.hidden,
                                      epochs=args.epochs, lr=args.lr, seed=seed)
    print(f"probe accuracy at tap {args.layer}: {accuracy:.4f}")
    return 0


# --- gradcheck ---

def cmd_gradcheck(args) -> int:
    seed = _resolve_seed(args)
    # negative-control mode blocks the live branch instead; the equality gate
    # must then fail, so the command exits 1 with every case id listed
    results = oracles.gradcheck_suite(seed=seed, cases=args.cases,
                                      wrong_branch=args.negative_control)
    ok = all(r["pass"] for r in results)
    payload = {"seed": seed, "cases": args.cases, "negative_control": args.negative_control,
               "results": results, "pass": ok}
    text = json.dumps(payload, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if not ok:
        failing = [r["case_id"] for r in results if not r["pass"]]
        print(f"FAILED cases: {failing}", file=sys.stderr)
        return 1
    return 0


# --- export-grid ---

def cmd_export_grid(args) -> int:
    net = nn.load_checkpoint(args.checkpoint)
    ds = _load_dataset(args)
    lift_meta = ds.meta.get("lift")
    if ds.dim != 2 and lift_meta is None:
        raise ConfigError("grid export needs 2-D data or stored lift metadata")
    base = ds.points if ds.dim == 2 else D.unlift_points(ds.points, lift_meta)
    lo, hi = base.min(axis=0), base.max(axis=0)
    r = args.resolution
    xs = np.linspace(lo[0], hi[0], r)
    ys = np.linspace(lo[1], hi[1], r)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    lifted = grid if lift_meta is None else D.lift_points(grid, lift_meta)
    if not ds.meta.get("standardized"):
        stats = D.standardize(ds)
        lifted = (lifted - stats.mean) / stats.std

    rows = ["x,y,argmax_label,max_prob"]
    for start in range(0, lifted.shape[0], 4096):
        out = net.forward(Tensor(lifted[start:start + 4096]), train=False).data
        labels = out.argmax(axis=1)
        probs = out.max(axis=1)
        for (x, y), lab, pr in zip(grid[start:start + 4096], labels, probs):
            rows.append(f"{x:.17g},{y:.17g},{lab},{pr:.17g}")
    Path(args.out).write_text("\n".join(rows) + "\n")
    print(f"wrote {r * r} grid predictions to {args.out}")
    return 0


def _run_sweep(args, runner) -> int:
    configs = json.loads(Path(args.sweep).read_text())
    if not isinstance(configs, list):
        raise ConfigError("--sweep expects a JSON list of config objects")
    base_out = Path(args.out_dir)
    code = 0
    for i, cfg in enumerate(configs):
        sub = argparse.Namespace(**vars(args))
        sub.sweep = None
        sub.out_dir = str(base_out / f"sweep{i:03d}")
        tmp = base_out / f"sweep{i:03d}.config.json"
        base_out.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(cfg))
        sub.config = str(tmp)
        code = max(code, runner(sub))
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neuralbayes",
        description="Discrete-latent objectives: data generation, training, probing, verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a labeled synthetic point cloud")
    g.add_argument("--kind", required=True, choices=["moons", "circles", "blobs"])
    g.add_argument("--n", type=int, default=1000, help="points per component")
    g.add_argument("--noise", type=float, default=0.06)
    g.add_argument("--gap", type=float, default=0.25, help="extra separation (moons)")
    g.add_argument("--k", type=int, default=3, help="number of blobs")
    g.add_argument("--dim", type=int, default=None, help="lift to this dimension and rotate")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-dml", help="train the manifold-labeling objective")
    t.add_argument("--data", required=True)
    t.add_argument("--labels", default=None, help="IDX label file (treats --data as IDX images)")
    t.add_argument("--k", type=int, default=None)
    t.add_argument("--beta", type=float, default=None)
    t.add_argument("--mbs", type=int, default=None)
    t.add_argument("--bs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--config", default=None, help="JSON config; flags override")
    t.add_argument("--preset", choices=["default", "mnist-cnn"], default="default")
    t.add_argument("--stop-split", type=float, default=0.0,
                   help="hold out this fraction as the early-stopping split (0 = off)")
    t.add_argument("--patience", type=int, default=10,
                   help="epochs without holdout improvement before stopping")
    t.add_argument("--sweep", default=None, help="JSON list of configs, run sequentially")
    t.set_defaults(func=cmd_train_dml)

    m = sub.add_parser("train-mim", help="train the information-maximization objective")
    m.add_argument("--data", required=True)
    m.add_argument("--labels", default=None, help="IDX label file (treats --data as IDX images)")
    m.add_argument("--alpha", type=float, default=None)
    m.add_argument("--beta", type=float, default=None)
    m.add_argument("--mbs", type=int, default=None)
    m.add_argument("--bs", type=int, default=None)
    m.add_argument("--scales", choices=["on", "off"], default=None)
    m.add_argument("--lr", type=float, default=None)
    m.add_argument("--epochs", type=int, default=None)
    m.add_argument("--seed", type=int, default=None)
    m.add_argument("--out-dir", required=True)
    m.add_argument("--config", default=None)
    m.add_argument("--v1", action="store_true",
                   help="use the negative-entropy prior penalty (side-by-side comparison mode)")
    m.add_argument("--stop-split", type=float, default=0.0,
                   help="hold out this fraction as the early-stopping split (0 = off)")
    m.add_argument("--patience", type=int, default=10,
                   help="epochs without holdout improvement before stopping")
    m.add_argument("--sweep", default=None)
    m.set_defaults(func=cmd_train_mim)

    p = sub.add_parser("probe", help="train a classifier on frozen checkpoint features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--layer", default="last", help="tap name: h0.., last, or out")
    p.add_argument("--hidden", type=int, default=200)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--bn-mode", choices=["train", "eval"], default="eval")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_probe)

    c = sub.add_parser("gradcheck", help="run the oracle verification suite")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--cases", type=int, default=50)
    c.add_argument("--negative-control", action="store_true",
                   help="block the live branch instead; the equality check must fail")
    c.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    c.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("export-grid", help="evaluate the head on a 2-D grid for plotting")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--labels", default=None)
    e.add_argument("--resolution", type=int, default=200)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "sweep", None):
            return _run_sweep(args, args.func)
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
