"""Command line entry point: one subcommand per pipeline stage plus ``full-run``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

from windfault.config import RunConfig, load_config
from windfault.errors import StageFailed

log = logging.getLogger("windfault")


def _cfg(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig().with_env()


def _pick(value, default):
    return default if value is None else value


def cmd_simulate(args):
    from windfault.turbsim.io import read_manifest, simulate_corpus, write_manifest
    from windfault.turbsim.params import FaultKind

    s = _cfg(args).simulator
    if args.scenario == "all":
        runs = s.runs_per_class()
        if args.runs is not None:
            runs = {k: args.runs for k in runs}
    else:
        runs = {int(FaultKind.parse(args.scenario)): _pick(args.runs, s.runs_per_fault)}
    out = Path(args.out)
    duration = _pick(args.duration, s.duration)
    previous = []
    if (out / "manifest.json").exists():
        previous = read_manifest(out)["runs"]
        if any(r["duration"] != duration for r in previous):
            raise ValueError("existing runs in the output directory have another duration")
    # new runs are appended after the ones already in the directory
    first = {}
    for r in previous:
        first[r["label"]] = max(first.get(r["label"], 0), int(r["run_id"].rsplit("-", 1)[1]) + 1)
    manifest = simulate_corpus(out, runs, duration, _pick(args.seed, s.seed),
                               _pick(args.mean_speed, s.mean_speed),
                               _pick(args.ti, s.turbulence_intensity), first_index=first)
    if previous:
        manifest["runs"] = sorted(previous + manifest["runs"], key=lambda r: r["run_id"])
        write_manifest(out / "manifest.json", manifest)
    print(f"{len(manifest['runs'])} runs in {out / 'manifest.json'}")


def cmd_build_dataset(args):
    from windfault.dataset import build_corpus, make_folds, save_windowset

    d = _cfg(args).dataset
    ws = build_corpus(args.manifest, _pick(args.window, d.window), _pick(args.stride, d.stride))
    plan = make_folds(ws, _pick(args.folds, d.folds), _pick(args.seed, d.seed))
    save_windowset(ws, args.out, plan)
    print(f"{len(ws)} windows from {len(ws.runs)} runs -> {args.out}")


def cmd_train(args):
    from windfault.dataset import load_windowset
    from windfault.evaluation.cv import checkpoint_path, train_fold
    from windfault.models.architectures import ModelSpec

    m = _cfg(args).model
    ws, plan, _ = load_windowset(args.dataset)
    if plan is None:
        raise ValueError(f"{args.dataset} has no fold plan")
    spec = ModelSpec(args.arch)
    ckpt = train_fold(spec, ws, plan, args.fold, _pick(args.epochs, m.epochs),
                      _pick(args.batch, m.batch), _pick(args.seed, m.seed), _pick(args.lr, m.lr),
                      args.out, m.threads)
    print(f"{checkpoint_path(args.out, spec.architecture, args.fold)}: final train loss "
          f"{ckpt.metadata['final_train_loss']:.4f}")


def cmd_predict(args):
    from windfault.dataset import load_windowset
    from windfault.evaluation.cv import predict_fold
    from windfault.models.training import load_checkpoint
    from windfault.uq import export_predictions

    u = _cfg(args).uq
    ckpt = load_checkpoint(args.checkpoint)
    ws, plan, _ = load_windowset(args.dataset)
    fold = _pick(args.fold, ckpt.metadata.get("fold"))
    mode = "uq" if args.uq == "on" else "plain"
    res = predict_fold(ckpt, ws, plan, fold, (mode,), args.k, _pick(args.seed, u.seed))[mode]
    export_predictions(args.out, res.test_index, res.group_ids, res.labels, res.probs, fold=fold)
    acc = float((res.probs.argmax(1) == res.labels).mean()) if len(res.labels) else float("nan")
    print(f"{len(res.labels)} windows, accuracy {acc:.4f} -> {args.out}")


def cmd_evaluate(args):
    from windfault.dataset import load_windowset
    from windfault.evaluation.baselines import baseline_classifiers
    from windfault.evaluation.cv import run_cv
    from windfault.evaluation.reports import render_reports

    cfg = _cfg(args)
    ws, plan, _ = load_windowset(args.dataset)
    seed = _pick(args.seeds, cfg.model.seed)
    if args.arch in ("decision-tree", "random-forest", "baselines"):
        reports = [r for r in baseline_classifiers(ws, plan, seed=seed)
                   if args.arch == "baselines" or r.model_id == args.arch]
    else:
        reports = [run_cv(args.arch, ws, plan, uq=args.uq == "on", seeds=seed,
                          epochs=_pick(args.epochs, cfg.model.epochs),
                          batch=_pick(args.batch, cfg.model.batch), k=args.k,
                          mc_seed=_pick(args.mc_seed, cfg.uq.seed),
                          ckpt_dir=args.checkpoints, threads=cfg.model.threads)]
    render_reports(reports, args.out, config_hash=cfg.hash, dataset_hash=ws.config_hash,
                   seeds={"model": seed})
    for r in reports:
        print(f"{r.name}: accuracy {r.accuracy:.4f}")


def cmd_visualize(args):
    from windfault.dataset import load_windowset
    from windfault.evaluation.reports import plot_embedding
    from windfault.evaluation.tsne import layer_features, tsne_embed
    from windfault.models.training import load_checkpoint

    import numpy as np

    ckpt = load_checkpoint(args.checkpoint)
    ws, plan, _ = load_windowset(args.dataset)
    fold = ckpt.metadata.get("fold", 0)
    _, _, x_te, y_te, _ = ws.fold_split(plan, fold)
    feats = layer_features(ckpt.model(), x_te, args.layer)
    emb = tsne_embed(feats, perplexity=args.perplexity, seed=args.seed)
    out = Path(args.out)
    stem = out / f"tsne-{ckpt.spec.architecture}-{args.layer}"
    out.mkdir(parents=True, exist_ok=True)
    np.savez(stem.with_suffix(".npz"), embedding=emb, labels=y_te)
    plot_embedding(emb, y_te, stem.with_suffix(".png"), title=f"{args.layer} fold {fold}")
    print(f"embedding of {len(emb)} windows -> {stem}.png")


def cmd_full_run(args):
    from windfault.pipeline import full_run

    cfg = _cfg(args)
    if args.profile:
        cfg = RunConfig.for_profile(args.profile).with_env()
    run_dir = full_run(cfg, args.out)
    metrics = json.loads((run_dir / "reports" / "metrics.json").read_text())
    for r in metrics["reports"]:
        tag = "+uq" if r["uq"] else ""
        print(f"{r['model_id']}{tag}: accuracy {r['aggregate']['accuracy']:.4f}")
    print(f"run directory: {run_dir}")


def build_parser():
    p = argparse.ArgumentParser(prog="windfault", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON or YAML run config supplying defaults")
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate sensor traces for one scenario or all")
    sp.add_argument("--scenario", default="all", help="fault kind (Healthy, F1..F7) or 'all'")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--duration", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mean-speed", type=float)
    sp.add_argument("--ti", type=float, help="turbulence intensity")
    sp.add_argument("--out", required=True)

    sp = add("build-dataset", cmd_build_dataset, "window traces and plan the folds")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--window", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train one architecture on one fold")
    sp.add_argument("--arch", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--fold", type=int, default=0)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, "score a checkpoint's held-out fold")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--fold", type=int)
    sp.add_argument("--k", type=int, default=200)
    sp.add_argument("--uq", choices=("on", "off"), default="on")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "cross-validate a model and write reports")
    sp.add_argument("--arch", required=True,
                    help="casu2net, simple-cnn, multi-headed, decision-tree, random-forest "
                         "or baselines")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--uq", choices=("on", "off"), default="off")
    sp.add_argument("--k", type=int, default=200)
    sp.add_argument("--seeds", type=int)
    sp.add_argument("--mc-seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--checkpoints", help="directory to save/reuse fold checkpoints")
    sp.add_argument("--out", required=True)

    sp = add("visualize", cmd_visualize, "T-SNE of a fusion layer on the held-out fold")
    sp.add_argument("--layer", choices=("fusion1", "fusion2"), default="fusion1")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--perplexity", type=float, default=30.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="figures")

    sp = add("full-run", cmd_full_run, "run every stage from one config")
    sp.add_argument("--profile", choices=("paper-scale", "desk-scale"),
                    help="use a built-in profile instead of --config")
    sp.add_argument("--out", help="run directory (default: config output_root)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    warnings.simplefilter("default")
    try:
        args.func(args)
    except StageFailed as exc:
        print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: stage {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
