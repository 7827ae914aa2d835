"""Command-line front end: generate / train / diagnose / eval / sweep / ablate.

Configuration precedence: built-in defaults < JSON config file (flat
dotted keys, e.g. {"gen.n_nodes": 500}) < command-line flags. Every run
writes the fully resolved configuration next to its outputs, so a run
is reproducible from that file plus the seed. The `HYPERMUX_SEED`
environment variable supplies the default seed.

Exit codes: 0 success, 1 usage/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from statistics import median

from . import evaluate as ev
from . import geometry as geo
from . import model as mdl
from .graph import GraphFormatError, load_multiplex, save_multiplex
from .manifold import MANIFOLDS
from .synthetic import GenConfigError, GenParams, generate, sweep_specs
from .training import TrainConfig, derive_seed, train, write_history_csv


class ConfigError(ValueError):
    pass


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


DEFAULTS = {
    "seed": None,  # resolved from HYPERMUX_SEED, else 0
    "gen.n_nodes": 2000,
    "gen.n_clusters": 5,
    "gen.n_dims": 10,
    "gen.p_in": None,
    "gen.p_out": None,
    "gen.sf_min": None,
    "gen.sf_max": None,
    "gen.cluster_min": None,
    "gen.cluster_max": None,
    "model.manifold": "lorentz",
    "model.layers": 2,
    "model.embed": 96,
    "model.leaky_slope": 0.01,
    "model.dense_threshold": 0.25,
    "model.drop_tol": 1e-4,
    "train.lr": 0.001,
    "train.weight_decay": 1e-5,
    "train.epochs": 1000,
    "train.patience": 20,
    "train.min_delta": 1e-5,
    "train.telemetry": False,
    "eval.test_ratio": 0.15,
    "eval.r": 2.0,
    "eval.t": 1.0,
    "eval.class_repeats": 5,
    "eval.logreg_l2": 1e-4,
}


def resolve_config(config_file=None, overrides=None):
    """defaults < file < overrides, rejecting unknown keys by name."""
    resolved = dict(DEFAULTS)
    if config_file:
        try:
            loaded = json.loads(Path(config_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        resolved.update(loaded)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config keys: {key}")
        if value is not None:
            resolved[key] = value
    if resolved["seed"] is None:
        resolved["seed"] = int(os.environ.get("HYPERMUX_SEED", "0"))
    if resolved["model.manifold"] not in MANIFOLDS:
        raise ConfigError(f"model.manifold must be one of {MANIFOLDS}")
    return resolved


def config_hash(resolved):
    blob = json.dumps(resolved, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _write_resolved(resolved, out_path, stem="resolved_config"):
    out_path = Path(out_path)
    if out_path.suffix:  # file output: write alongside it
        target = out_path.with_name(out_path.name + ".config.json")
        target.parent.mkdir(parents=True, exist_ok=True)
    else:
        out_path.mkdir(parents=True, exist_ok=True)
        target = out_path / f"{stem}.json"
    target.write_text(json.dumps(resolved, sort_keys=True, indent=2) + "\n")
    return target


def _gen_params(resolved, seed=None):
    sf = None
    if resolved["gen.sf_min"] is not None or resolved["gen.sf_max"] is not None:
        if resolved["gen.sf_min"] is None or resolved["gen.sf_max"] is None:
            raise ConfigError("set both gen.sf_min and gen.sf_max or neither")
        sf = (int(resolved["gen.sf_min"]), int(resolved["gen.sf_max"]))
    cluster = None
    if resolved["gen.cluster_min"] is not None or resolved["gen.cluster_max"] is not None:
        if resolved["gen.cluster_min"] is None or resolved["gen.cluster_max"] is None:
            raise ConfigError("set both gen.cluster_min and gen.cluster_max or neither")
        cluster = (int(resolved["gen.cluster_min"]), int(resolved["gen.cluster_max"]))
    return GenParams(
        n_nodes=int(resolved["gen.n_nodes"]),
        n_clusters=int(resolved["gen.n_clusters"]),
        n_dims=int(resolved["gen.n_dims"]),
        p_in=resolved["gen.p_in"], p_out=resolved["gen.p_out"],
        sf_range=sf, cluster_size_range=cluster,
        seed=int(resolved["seed"] if seed is None else seed))


def _model_config(resolved):
    cfg = mdl.ModelConfig(
        n_layers=int(resolved["model.layers"]),
        embed_size=int(resolved["model.embed"]),
        manifold=resolved["model.manifold"],
        leaky_slope=float(resolved["model.leaky_slope"]),
        dense_threshold=float(resolved["model.dense_threshold"]),
        drop_tol=float(resolved["model.drop_tol"]))
    return cfg


def _train_config(resolved):
    return TrainConfig(
        learning_rate=float(resolved["train.lr"]),
        weight_decay=float(resolved["train.weight_decay"]),
        max_epochs=int(resolved["train.epochs"]),
        patience=int(resolved["train.patience"]),
        min_delta=float(resolved["train.min_delta"]),
        telemetry=bool(resolved["train.telemetry"]),
        seed=int(resolved["seed"]))


def _write_embeddings_csv(path, z_tangent):
    rows = [",".join(f"{v:.12g}" for v in row) for row in z_tangent]
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_generate(args):
    resolved = resolve_config(args.config, {
        "gen.n_nodes": args.n, "gen.n_clusters": args.k, "gen.n_dims": args.d,
        "gen.p_in": args.p_in, "gen.p_out": args.p_out, "seed": args.seed,
    })
    result = generate(_gen_params(resolved))
    out = Path(args.out)
    save_multiplex(result.graph, out)
    (out / "gen_params.json").write_text(
        json.dumps(result.resolved, sort_keys=True, indent=2) + "\n")
    _write_resolved(resolved, out)
    print(f"wrote {result.graph.n_nodes} nodes x {result.graph.n_dims} dims to {out}")
    return 0


def _run_training(resolved, graph_dir):
    graph = load_multiplex(graph_dir)
    model_config = _model_config(resolved)
    outcome = train(graph, model_config, _train_config(resolved))
    return graph, model_config, outcome


def _cmd_train(args):
    resolved = resolve_config(args.config, {
        "model.manifold": args.manifold, "model.layers": args.layers,
        "model.embed": args.embed, "train.lr": args.lr,
        "train.epochs": args.epochs, "train.patience": args.patience,
        "train.telemetry": True if args.telemetry else None, "seed": args.seed,
    })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, model_config, outcome = _run_training(resolved, args.graph)
    mdl.save_checkpoint(out / "checkpoint.npz", outcome.params,
                        outcome.discriminator, model_config,
                        meta={"seed": resolved["seed"],
                              "graph": str(args.graph),
                              "final_loss": outcome.final_loss,
                              "epochs": outcome.n_epochs})
    write_history_csv(outcome.history, out / "history.csv")
    _write_embeddings_csv(out / "embeddings.csv", outcome.z_tangent)
    _write_resolved(resolved, out)
    print(f"trained {outcome.n_epochs} epochs, final loss {outcome.final_loss:.6g}; "
          f"outputs in {out}")
    if outcome.aborted:
        print(f"warning: {outcome.aborted}; last good checkpoint kept",
              file=sys.stderr)
        return 2
    return 0


def _embeddings_for_checkpoint(checkpoint, graph_dir):
    params, q, model_config, _ = mdl.load_checkpoint(checkpoint)
    graph = load_multiplex(graph_dir)
    result = mdl.forward(graph, graph.features, params, model_config)
    from .autodiff import val
    from .manifold import to_euclidean
    return graph, model_config, val(result.z), val(to_euclidean(result.z, model_config.manifold))


def _cmd_diagnose(args):
    resolved = resolve_config(args.config, {"seed": args.seed})
    graph, model_config, _, z_tan = _embeddings_for_checkpoint(args.checkpoint, args.graph)
    report = geo.curvature_gap(z_tan, context={
        "checkpoint": str(args.checkpoint), "seed": resolved["seed"],
        "model": model_config.manifold})
    payload = {
        "id": report.id_estimate, "lid": report.lid_estimate, "gap": report.gap,
        "n_duplicates": report.n_duplicates, "trim": report.trim,
        "context": report.context, "config_hash": config_hash(resolved),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    _write_resolved(resolved, out)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_eval(args):
    resolved = resolve_config(args.config, {"seed": args.seed})
    graph = load_multiplex(args.graph)
    ratio = float(resolved["eval.test_ratio"])
    split = ev.split_edges(graph, (1.0 - ratio, ratio), seed=int(resolved["seed"]))
    if args.checkpoint:
        from .autodiff import val
        from .manifold import to_euclidean
        params, _, model_config, _ = mdl.load_checkpoint(args.checkpoint)
        result = mdl.forward(split.train_graph, split.train_graph.features,
                             params, model_config)
        z = val(result.z)
        z_tan = val(to_euclidean(result.z, model_config.manifold))
    else:
        model_config = _model_config(resolved)
        outcome = train(split.train_graph, model_config, _train_config(resolved))
        z, z_tan = outcome.z_final, outcome.z_tangent
    auc, ap = ev.link_prediction_eval(z, split, kind=model_config.manifold,
                                      r=float(resolved["eval.r"]),
                                      t=float(resolved["eval.t"]))
    payload = {"task": "link_prediction", "auc": auc, "ap": ap,
               "f1_macro": None, "f1_micro": None,
               "seed": int(resolved["seed"]), "config_hash": config_hash(resolved)}
    lines = [payload]
    if graph.labels is not None:
        cls = ev.classification_eval(z_tan, graph.labels, seed=int(resolved["seed"]),
                                     n_repeats=int(resolved["eval.class_repeats"]),
                                     l2=float(resolved["eval.logreg_l2"]))
        lines.append({"task": "classification", "auc": None, "ap": None,
                      "f1_macro": cls["f1_macro"], "f1_micro": cls["f1_micro"],
                      "seed": int(resolved["seed"]),
                      "config_hash": config_hash(resolved)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(json.dumps(l, sort_keys=True) for l in lines) + "\n")
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w") as fh:
        fh.write("task,auc,ap,f1_macro,f1_micro,seed,config_hash\n")
        for l in lines:
            fh.write(",".join("" if l[k] is None else
                              (f"{l[k]:.8g}" if isinstance(l[k], float) else str(l[k]))
                              for k in ["task", "auc", "ap", "f1_macro", "f1_micro",
                                        "seed", "config_hash"]) + "\n")
    _write_resolved(resolved, out)
    for l in lines:
        print(json.dumps(l, sort_keys=True))
    return 0


def _parse_d_range(text):
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) != 3:
            raise ConfigError(f"bad D range {text!r}; use start:stop:step")
        start, stop, step = parts
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",")]


def _cmd_sweep(args):
    resolved = resolve_config(args.config, {
        "gen.n_nodes": args.n, "gen.n_clusters": args.k,
        "train.epochs": args.epochs, "seed": args.seed,
    })
    d_values = _parse_d_range(args.d)
    base = _gen_params(resolved)
    specs = sweep_specs(base, d_values)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    for m in models:
        if m not in mdl.MODEL_VARIANTS:
            raise ConfigError(f"unknown model variant {m!r}; "
                              f"choose from {sorted(mdl.MODEL_VARIANTS)}")
    rows, failures = geo.sweep(
        specs, models, range(args.seeds), embed_size=int(resolved["model.embed"]),
        max_epochs=int(resolved["train.epochs"]), workers=args.workers)
    geo.write_sweep_csv(rows, args.out)
    _write_resolved(resolved, Path(args.out))
    for fail in failures:
        print(f"failed run {fail}", file=sys.stderr)
    by_key = {}
    for r in rows:
        by_key.setdefault((r.model, r.d), []).append(r.gap)
    for (name, d), gaps in sorted(by_key.items()):
        print(f"{name} D={d}: median gap {median(gaps):.3f} over {len(gaps)} seeds")
    return 0 if not failures else 2


ABLATION_VARIANTS = ("full", "euclidean", "weights-ablation", "layers-ablation")


def _cmd_ablate(args):
    resolved = resolve_config(args.config, {
        "train.epochs": args.epochs, "seed": args.seed,
    })
    graph = load_multiplex(args.graph)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ratio = float(resolved["eval.test_ratio"])
    rows = []
    for variant in ABLATION_VARIANTS:
        for s in range(args.seeds):
            run_seed = derive_seed(int(resolved["seed"]), 91, s)
            split = ev.split_edges(graph, (1.0 - ratio, ratio), seed=run_seed)
            config = mdl.ModelConfig.for_variant(
                variant, embed_size=int(resolved["model.embed"]))
            tc = replace(_train_config(resolved), seed=run_seed)
            outcome = train(split.train_graph, config, tc)
            auc, ap = ev.link_prediction_eval(
                outcome.z_final, split, kind=config.manifold,
                r=float(resolved["eval.r"]), t=float(resolved["eval.t"]))
            row = {"variant": variant, "seed": s, "auc": auc, "ap": ap,
                   "f1_macro": "", "f1_micro": "",
                   "loss_final": outcome.final_loss}
            if graph.labels is not None:
                cls = ev.classification_eval(
                    outcome.z_tangent, graph.labels, seed=run_seed,
                    n_repeats=int(resolved["eval.class_repeats"]))
                row["f1_macro"] = cls["f1_macro"]
                row["f1_micro"] = cls["f1_micro"]
            rows.append(row)
    with open(out / "ablation.csv", "w") as fh:
        fh.write("variant,seed,auc,ap,f1_macro,f1_micro,loss_final\n")
        for r in rows:
            fh.write(",".join(
                f"{r[k]:.8g}" if isinstance(r[k], float) else str(r[k])
                for k in ["variant", "seed", "auc", "ap", "f1_macro", "f1_micro",
                          "loss_final"]) + "\n")
    summary = {}
    for variant in ABLATION_VARIANTS:
        aucs = [r["auc"] for r in rows if r["variant"] == variant]
        summary[variant] = {"auc_median": median(aucs), "n_seeds": len(aucs)}
        print(f"{variant}: median AUC {median(aucs):.4f}")
    (out / "ablation_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _write_resolved(resolved, out)
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser():
    parser = _Parser(prog="hypermux",
                     description="hierarchical hyperbolic multiplex graph embedding")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("generate", help="write a synthetic multiplex graph")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--p-in", dest="p_in", type=float, default=None)
    p.add_argument("--p-out", dest="p_out", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train embeddings on a graph directory")
    p.add_argument("--graph", required=True)
    p.add_argument("--manifold", choices=MANIFOLDS, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--embed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--telemetry", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("diagnose", help="intrinsic-dimension report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("eval", help="link prediction / classification metrics")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="score a trained checkpoint instead of retraining on the split")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="gap-vs-D study on synthetic graphs")
    p.add_argument("--d", required=True, help="D values, '5:40:5' or '5,10,20'")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--models", default="full,euclidean-single")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ablate", help="compare full model against ablations")
    p.add_argument("--graph", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    return parser


def dispatch(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ConfigError, GenConfigError, GraphFormatError, ev.EvalError,
            mdl.ModelConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary, fail with code 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
