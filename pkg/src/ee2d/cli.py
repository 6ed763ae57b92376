"""Single `ee2d` executable exposing every pipeline stage as a subcommand.

Exit codes: 0 success, 1 domain error (error class name on stderr),
2 usage error (argparse). Reports print human-readable by default and
as JSON with --json; CSV outputs get a PNG figure rendered next to them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import adapters as adapters_mod
from . import datamodel, metrics, synth, textseg, tuner
from .engine import EEConfig
from .errors import EE2DError, SchemaError


def _unit_float(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} not in [0, 1]")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"{text} must be >= 0")
    return value


def _pos_float(text: str) -> float:
    value = float(text)
    if value <= 0.0:
        raise argparse.ArgumentTypeError(f"{text} must be > 0")
    return value


def _pos_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{text} must be > 0")
    return value


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("EE2D_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _png_sibling(path) -> Path:
    return Path(path).with_suffix(".png")


def _load_probe(path):
    manifest, grids = datamodel.load_dataset(path)
    if manifest.kind != datamodel.KIND_PROBE:
        raise SchemaError(f"{path}: expected a probe dataset, found kind={manifest.kind!r}")
    return manifest, grids


def _load_embedding(path):
    manifest, grids = datamodel.load_dataset(path)
    if manifest.kind != datamodel.KIND_EMBEDDING:
        raise SchemaError(f"{path}: expected an embedding dataset, found kind={manifest.kind!r}")
    return manifest, grids


# ----------------------------------------------------------------------
# Subcommand handlers
# ----------------------------------------------------------------------

def cmd_split(args) -> int:
    with open(args.infile, encoding="utf-8") as fh:
        text = fh.read()
    abbrevs = textseg.load_abbreviations(args.abbrev) if args.abbrev else textseg.DEFAULT_ABBREVIATIONS
    result = textseg.split_sentences(text, abbreviations=abbrevs)
    if args.json:
        print(json.dumps({"sentences": result.sentences, "source_length": result.source_length}))
    else:
        for sentence in result:
            print(sentence)
    return 0


def cmd_validate(args) -> int:
    manifest, grids = datamodel.load_dataset(args.infile)
    ms = [g.num_sentences for g in grids]
    summary = {
        "kind": manifest.kind,
        "num_classes": manifest.num_classes,
        "num_layers": manifest.num_layers,
        "samples": manifest.samples,
        "embed_dim": manifest.embed_dim,
        "min_sentences": min(ms),
        "max_sentences": max(ms),
    }
    if args.json:
        print(json.dumps(summary))
    else:
        print(f"ok: kind={manifest.kind} classes={manifest.num_classes} "
              f"layers={manifest.num_layers} samples={manifest.samples} "
              f"sentences={min(ms)}..{max(ms)}")
    return 0


def cmd_apply_adapters(args) -> int:
    manifest, grids = _load_embedding(args.emb)
    heads = adapters_mod.load_adapters(args.adapters)
    probes = [datamodel.apply_adapters(g, heads) for g in grids]
    out_manifest = datamodel.DatasetManifest(
        kind=datamodel.KIND_PROBE,
        num_classes=heads[0].num_classes,
        num_layers=manifest.num_layers,
        samples=len(probes),
        class_names=manifest.class_names,
        provenance=f"{manifest.provenance} | adapters={args.adapters}",
    )
    datamodel.save_dataset(out_manifest, probes, args.out)
    print(f"wrote {len(probes)} probe grids to {args.out}")
    return 0


def cmd_train(args) -> int:
    manifest, grids = _load_embedding(args.emb)
    mode = adapters_mod.MODE_ADAPTER_ONLY if args.mode == "adapter-only" else adapters_mod.MODE_JOINT
    lam = None
    if args.layer_weights:
        lam = np.array([float(v) for v in args.layer_weights.split(",")])
    cfg = adapters_mod.TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        seed=args.seed,
        layer_weights=lam,
    )
    trained, trace = adapters_mod.train_adapters(
        grids, cfg, mode, num_classes=manifest.num_classes, hidden_dim=args.hidden,
        threads=_threads(args))
    adapters_mod.save_adapters(trained, args.out)
    final = trace[-1]
    if args.json:
        print(json.dumps({
            "mode": args.mode,
            "epochs": args.epochs,
            "final_loss": final.tolist() if isinstance(final, np.ndarray) else float(final),
            "out": str(args.out),
        }))
    else:
        if mode == adapters_mod.MODE_ADAPTER_ONLY:
            losses = " ".join(f"{v:.4f}" for v in final)
            print(f"trained {len(trained)} adapters ({args.epochs} epochs); final per-layer loss: {losses}")
        else:
            print(f"trained {len(trained)} adapters jointly ({args.epochs} epochs); final loss {float(final):.4f}")
        print(f"wrote {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    manifest, grids = _load_embedding(args.emb)
    emb = grids[0]
    rng = np.random.default_rng(args.seed)
    heads = [adapters_mod.init_adapter(manifest.embed_dim, manifest.num_classes, rng, hidden_dim=args.hidden)
             for _ in range(manifest.num_layers)]
    err_adapter = adapters_mod.grad_check(
        adapters_mod.MODE_ADAPTER_ONLY, heads, emb, eps=args.eps,
        layer=manifest.num_layers - 1, num_coords=args.coords, seed=args.seed)
    err_joint = adapters_mod.grad_check(
        adapters_mod.MODE_JOINT, heads, emb, eps=args.eps,
        num_coords=args.coords, seed=args.seed)
    if args.json:
        print(json.dumps({"adapter_loss_max_rel_err": err_adapter,
                          "joint_loss_max_rel_err": err_joint, "eps": args.eps}))
    else:
        print(f"adapter loss  max relative gradient error: {err_adapter:.3e}")
        print(f"joint loss    max relative gradient error: {err_joint:.3e}")
    return 0


def cmd_synth(args) -> int:
    spec = synth.load_spec(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    grids = synth.generate_dataset(spec)
    datamodel.save_dataset(synth.manifest_for(spec), grids, args.out)
    print(f"wrote {len(grids)} embedding grids to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    _, grids = _load_probe(args.infile)
    cfg = EEConfig(tau_ignore=args.tau_ignore, tau_acc=args.tau_acc)
    report = metrics.evaluate_2d(grids, cfg)
    if args.per_sample_out:
        metrics.write_samples_csv(report, args.per_sample_out)
    if args.json:
        print(json.dumps(report.to_json(include_samples=not args.per_sample_out)))
    else:
        exits = sum(s.exited_early for s in report.per_sample)
        print(f"samples: {len(report.per_sample)}  accuracy: {report.accuracy:.4f}")
        print(f"operations: {report.total_ops} of {report.total_full_ops} "
              f"({exits} early exits)")
        print(f"speed-up: total {report.speedup_total:.3f}  mean {report.speedup_mean:.3f}")
        if args.per_sample_out:
            print(f"per-sample rows written to {args.per_sample_out}")
    return 0


def cmd_profile(args) -> int:
    from . import plots

    _, grids = _load_probe(args.infile)
    profile = metrics.layer_accuracy_profile(grids)
    acc_thr = metrics.accuracy_threshold(profile, args.T)
    exit_layer = metrics.optimal_exit_layer(profile, acc_thr)
    speedup = metrics.speedup_layerwise(profile.shape[0], exit_layer)
    if args.json:
        print(json.dumps({
            "profile": profile.tolist(),
            "acc_thr": acc_thr,
            "exit_layer": exit_layer,
            "speedup_layerwise": speedup,
        }))
    else:
        for layer, acc in enumerate(profile.tolist()):
            print(f"layer {layer:3d}  accuracy {acc:.4f}")
        print(f"acc_thr (T={args.T}): {acc_thr:.4f}")
        print(f"optimal exit layer: {exit_layer}  layer-wise speed-up: {speedup:.2f}")
    if args.out:
        import csv

        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "accuracy"])
            for layer, acc in enumerate(profile.tolist()):
                writer.writerow([layer, repr(acc)])
        plots.save_layer_profile(profile, acc_thr, exit_layer, _png_sibling(args.out))
    return 0


def cmd_eval(args) -> int:
    _, grids = _load_probe(args.infile)
    cfg = EEConfig(tau_ignore=args.tau_ignore, tau_acc=args.tau_acc)
    report = metrics.evaluate_2d(grids, cfg)
    print(json.dumps(report.to_json()))
    return 0


def cmd_heatmap(args) -> int:
    from . import plots

    _, grids = _load_probe(args.infile)
    cells = metrics.cell_accuracy_heatmap(grids, args.m)
    metrics.write_heatmap_csv(cells, args.out)
    plots.save_cell_heatmap(cells, _png_sibling(args.out))
    written = [str(args.out), str(_png_sibling(args.out))]
    if args.blocks_out:
        blocks = metrics.block_accuracy_curve(grids, args.m)
        metrics.write_block_curve_csv(blocks, args.blocks_out)
        plots.save_block_curve(blocks, _png_sibling(args.blocks_out))
        written += [str(args.blocks_out), str(_png_sibling(args.blocks_out))]
    print("wrote " + ", ".join(written))
    return 0


def cmd_cost_model(args) -> int:
    inp = metrics.CostModelInput(tps=args.tps, embed_dim=args.dim,
                                 exp_f=args.expf, sentence_index=args.s)
    result = metrics.cost_model(inp)
    if args.json:
        print(json.dumps(result.to_json()))
    else:
        print(f"qkv:        {result.qkv_flops:.3e} flops")
        print(f"mlp:        {result.mlp_flops:.3e} flops")
        print(f"attention:  {result.attention_coefficient:.3e} * s flops "
              f"(= {result.attention_flops:.3e} at s={args.s})")
        print(f"attention term overtakes qkv+mlp at s ~ {result.crossover_s:.0f}")
    return 0


def cmd_tune(args) -> int:
    from . import plots

    _, grids = _load_probe(args.infile)
    profile = metrics.layer_accuracy_profile(grids)
    acc_thr = metrics.accuracy_threshold(profile, args.T)
    threads = _threads(args)

    if args.refine:
        bounds = ((args.ti_min, args.ti_max), (args.ta_min, args.ta_max))
        result = tuner.refine_search(grids, bounds, acc_thr, args.budget, threads=threads)
    else:
        if args.grid:
            with open(args.grid, encoding="utf-8") as fh:
                obj = json.load(fh)
            if "tau_ignore" not in obj or "tau_acc" not in obj:
                raise SchemaError(f"{args.grid}: grid file needs 'tau_ignore' and 'tau_acc' lists")
            grid = tuner.TuneGrid(tau_ignore_values=obj["tau_ignore"], tau_acc_values=obj["tau_acc"])
        else:
            grid = tuner.default_grid()
        result = tuner.grid_search(grids, grid, acc_thr, threads=threads)

    if args.heatmap_out:
        prefix = str(args.heatmap_out)
        if result.grid is not None:
            tuner.write_tune_heatmap_csv(result.grid, result.heatmap_accuracy, prefix + "_accuracy.csv")
            tuner.write_tune_heatmap_csv(result.grid, result.heatmap_speedup, prefix + "_speedup.csv")
            plots.save_tune_heatmaps(result.grid, result.heatmap_accuracy,
                                     result.heatmap_speedup, acc_thr, prefix + ".png")
        else:
            tuner.write_evaluations_csv(result.evaluated, prefix + "_evaluations.csv")
            plots.save_refine_path(result.evaluated, prefix + ".png")

    if args.json:
        print(json.dumps(result.to_json()))
    else:
        tag = "feasible" if result.feasible else "INFEASIBLE (best accuracy shown)"
        print(f"acc_thr (T={args.T}): {acc_thr:.4f}  [{tag}]")
        print(f"best: tau_ignore={result.best_cfg.tau_ignore:.4g} "
              f"tau_acc={result.best_cfg.tau_acc:.4g}")
        print(f"accuracy {result.best_accuracy:.4f}  speed-up {result.best_speedup:.3f} "
              f"({result.evaluations} evaluations)")
    return 0


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ee2d",
        description="Two-dimensional (layer x sentence) early-exit inference toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split text into sentences")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--abbrev", help="file with one abbreviation per line")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("validate", help="validate a grid dataset file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("apply-adapters", help="turn an embedding dataset into a probe dataset")
    p.add_argument("--emb", required=True)
    p.add_argument("--adapters", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply_adapters)

    p = sub.add_parser("train", help="train per-layer adapters on an embedding dataset")
    p.add_argument("--emb", required=True)
    p.add_argument("--mode", choices=["adapter-only", "joint"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=_pos_float, default=1e-5)
    p.add_argument("--batch", type=_pos_int, default=128)
    p.add_argument("--epochs", type=_pos_int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=_pos_int, default=adapters_mod.DEFAULT_HIDDEN_DIM)
    p.add_argument("--lambda", dest="layer_weights",
                   help="comma-separated per-layer loss weights (joint mode)")
    p.add_argument("--threads", type=_pos_int,
                   help="parallel per-layer training in adapter-only mode (EE2D_THREADS)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grad-check", help="verify analytic gradients against finite differences")
    p.add_argument("--emb", required=True)
    p.add_argument("--eps", type=_pos_float, default=1e-5)
    p.add_argument("--coords", type=_pos_int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=_pos_int, default=16)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    p.add_argument("--spec", required=True, help="JSON spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="run 2D early exit over a probe dataset")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--tau-ignore", dest="tau_ignore", type=_unit_float, required=True)
    p.add_argument("--tau-acc", dest="tau_acc", type=_nonneg_float, required=True)
    p.add_argument("--per-sample-out", dest="per_sample_out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("profile", help="layer-wise accuracy profile and optimal exit layer")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--T", type=_unit_float, default=0.02, help="allowed accuracy loss")
    p.add_argument("--out", help="write profile CSV (+ PNG)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("eval", help="2D evaluation report as JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--tau-ignore", dest="tau_ignore", type=_unit_float, required=True)
    p.add_argument("--tau-acc", dest="tau_acc", type=_nonneg_float, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="layer x sentence and block accuracy heatmaps")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--m", type=_pos_int, required=True, help="keep samples with exactly m sentences")
    p.add_argument("--out", required=True, help="cell heatmap CSV (+ PNG)")
    p.add_argument("--blocks-out", dest="blocks_out", help="block accuracy CSV (+ PNG)")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("cost-model", help="per-layer FLOP terms and attention crossover")
    p.add_argument("--tps", type=_pos_float, required=True, help="average tokens per sentence")
    p.add_argument("--dim", type=_pos_int, required=True, help="embedding dimension")
    p.add_argument("--expf", type=_pos_float, required=True, help="MLP expansion factor")
    p.add_argument("--s", type=int, default=0, help="sentence index for the attention term")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cost_model)

    p = sub.add_parser("tune", help="search (tau_ignore, tau_acc) for best feasible speed-up")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--T", type=_unit_float, default=0.02, help="allowed accuracy loss")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--grid", help="JSON file with tau_ignore and tau_acc lists")
    mode.add_argument("--refine", action="store_true", help="coarse-to-fine search")
    p.add_argument("--budget", type=_pos_int, default=30, help="evaluation budget for --refine")
    p.add_argument("--ti-min", type=_unit_float, default=0.0)
    p.add_argument("--ti-max", type=_unit_float, default=0.9)
    p.add_argument("--ta-min", type=_nonneg_float, default=0.1)
    p.add_argument("--ta-max", type=_nonneg_float, default=50.0)
    p.add_argument("--heatmap-out", dest="heatmap_out", help="prefix for heatmap CSVs (+ PNG)")
    p.add_argument("--threads", type=_pos_int, help="parallel cell evaluations (EE2D_THREADS)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_tune)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EE2DError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
