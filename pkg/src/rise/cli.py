"""Command-line surface: synth, train, eval, gradcheck, ablate.

Exit codes are a stable contract: 0 success, 1 check failure, 2 config
error, 3 I/O error, 4 training divergence. Every command writes a run
manifest; reports embed the manifest minus its timestamp, so re-running
with identical inputs reproduces report files bitwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .data import (SynthParams, generate_synthetic, read_dataset, write_dataset,
                   zero_shot_teacher_accuracy)
from .errors import ConfigError, IoError, RiseError, TrainingDiverged
from .figures import save_eval_figure, save_sweep_figure, save_training_figure
from .gradcheck import run_gradcheck
from .losses import LossConfig
from .report import align_table, sweep_text_table, write_report
from .student import load_student, save_student
from .teacher import derive_teacher_variant, load_teacher_table, save_teacher_table
from .training import (SUITES, TrainConfig, ablation_sweep, evaluate_ensemble,
                       leave_one_domain_out, mix_teacher_sweep, suite_variants,
                       summarize_rows)

GROUNDTRUTH_FORMAT = "rise-groundtruth-v1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, config: dict, inputs, seed: int | None) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
    }


def write_manifest_file(manifest: dict, path) -> None:
    full = dict(manifest, created_utc=datetime.now(timezone.utc).isoformat())
    Path(path).write_text(json.dumps(full, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# Config assembly
# ---------------------------------------------------------------------------

TRAIN_FIELDS = ("optimizer", "lr", "beta1", "beta2", "eps", "momentum", "batch_size",
                "epochs", "val_fraction", "seed", "supervision_source", "hidden_dim",
                "head_mode", "enforce_search_range", "held_out_domain")
LOSS_FIELDS = ("ce_weight", "hint_weight", "dist_weight", "temperature", "ad_metric",
               "rd_outer", "rd_inner", "hint_t_squared", "contrastive_tau",
               "use_ad", "use_rd")


def load_config_file(path) -> dict:
    if not os.path.exists(path):
        raise IoError(f"config file not found: {path}")
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})")
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def resolve_train_config(args) -> TrainConfig:
    """Merge defaults <- config file <- command-line flags."""
    doc = load_config_file(args.config) if getattr(args, "config", None) else {}
    loss_doc = dict(doc.get("loss", {}))
    train_doc = {k: v for k, v in doc.items() if k != "loss"}
    for key in train_doc:
        if key not in TRAIN_FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
    for key in loss_doc:
        if key not in LOSS_FIELDS:
            raise ConfigError(f"unknown loss config key {key!r}")
    for key in LOSS_FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            loss_doc[key] = v
    for key in TRAIN_FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            train_doc[key] = v
    if train_doc.get("hidden_dim", 1) in (0, -1):
        train_doc["hidden_dim"] = None  # 0 on the command line means "no trunk"
    try:
        return TrainConfig(loss=LossConfig(**loss_doc), **train_doc)
    except TypeError as exc:
        raise ConfigError(str(exc))


def config_as_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    return d


def add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--ce-weight", dest="ce_weight", type=float)
    p.add_argument("--hint-weight", dest="hint_weight", type=float)
    p.add_argument("--dist-weight", dest="dist_weight", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--ad-metric", dest="ad_metric",
                   choices=("cosine", "l1", "l2", "sup_contrastive"))
    p.add_argument("--rd-outer", dest="rd_outer", choices=("mse", "l1", "kl_on_softmax"))
    p.add_argument("--rd-inner", dest="rd_inner", choices=("cosine_sim", "l2"))
    p.add_argument("--hint-t-squared", dest="hint_t_squared", action="store_const", const=True)
    p.add_argument("--contrastive-tau", dest="contrastive_tau", type=float)
    p.add_argument("--no-ad", dest="use_ad", action="store_const", const=False)
    p.add_argument("--no-rd", dest="use_rd", action="store_const", const=False)
    p.add_argument("--optimizer", choices=("adam", "sgd_momentum"))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--supervision", dest="supervision_source",
                   choices=("text_ensemble", "text_single", "image_mean"))
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int,
                   help="trunk width; 0 disables the trunk")
    p.add_argument("--head-mode", dest="head_mode", choices=("fc", "text_cosine"))
    p.add_argument("--enforce-range", dest="enforce_search_range",
                   action="store_const", const=True,
                   help="reject weights/temperature outside the sweep search space")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    params_doc = load_config_file(args.params) if args.params else {}
    overrides = {k: getattr(args, k) for k in
                 ("num_classes", "num_domains", "text_dim", "feature_dim",
                  "samples_per_cell", "anchor_offset", "domain_shift", "noise_sigma",
                  "nonlinearity", "logit_scale", "seed")
                 if getattr(args, k, None) is not None}
    params_doc.update(overrides)
    try:
        params = SynthParams(**params_doc)
    except TypeError as exc:
        raise ConfigError(str(exc))

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ds, table, gt = generate_synthetic(params)

    data_path = outdir / "dataset.jsonl"
    teacher_path = outdir / "teacher.jsonl"
    write_dataset(ds, data_path)
    save_teacher_table(table, teacher_path)
    variant_paths = []
    for i in range(args.variant_teachers):
        variant = derive_teacher_variant(table, seed=params.seed + 1 + i)
        vp = outdir / f"teacher_{variant.teacher_id}.jsonl"
        save_teacher_table(variant, vp)
        variant_paths.append(vp)

    gt_path = outdir / "ground_truth.jsonl"
    gt_lines = [json.dumps({"format": GROUNDTRUTH_FORMAT, "dim": params.text_dim,
                            "classes": list(ds.classes)}, allow_nan=False)]
    for name in ds.classes:
        gt_lines.append(json.dumps({"class": name, "vec": gt[name].tolist()},
                                   allow_nan=False))
    gt_path.write_text("\n".join(gt_lines) + "\n", encoding="utf-8")

    # read-back validation: the generator's own files must load cleanly
    reread = read_dataset(data_path)
    reloaded = load_teacher_table(teacher_path)
    for vp in variant_paths:
        load_teacher_table(vp)
    zs = zero_shot_teacher_accuracy(reread, reloaded)

    manifest = build_manifest("synth", dataclasses.asdict(params), [], params.seed)
    manifest["outputs"] = [str(p) for p in
                           [data_path, teacher_path, *variant_paths, gt_path]]
    write_manifest_file(manifest, outdir / "manifest.json")
    print(f"wrote {len(ds.samples)} samples, teacher table"
          f"{' + %d variant(s)' % len(variant_paths) if variant_paths else ''}, "
          f"ground truth to {outdir}")
    print(f"zero-shot teacher accuracy: {zs:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    ds = read_dataset(args.data)
    tables = [load_teacher_table(p) for p in args.teacher]
    ids = [t.teacher_id for t in tables]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate teacher_id among {ids}")

    manifest = build_manifest("train", config_as_dict(cfg),
                              [args.data, *args.teacher], cfg.seed)
    manifest["target_domain"] = args.target_domain

    rows = []
    out_model = Path(args.out_model)
    model_paths = []
    last = None
    for table in tables:
        model, report = leave_one_domain_out(ds, table, cfg, args.target_domain)
        path = (out_model if len(tables) == 1 else
                out_model.with_name(f"{out_model.stem}_{table.teacher_id}{out_model.suffix}"))
        path.parent.mkdir(parents=True, exist_ok=True)
        save_student(model, path)
        model_paths.append(path)
        rows.append({"variant": f"teacher_{table.teacher_id}",
                     "target_domain": args.target_domain, "seed": cfg.seed,
                     "accuracy": report.held_out_accuracy,
                     "selected_epoch": report.selected_epoch,
                     "per_domain_accuracy": report.per_domain_accuracy,
                     "checkpoint": str(path)})
        last = report
        print(f"teacher {table.teacher_id}: held-out accuracy "
              f"{report.held_out_accuracy:.4f} (epoch {report.selected_epoch})")

    if args.report:
        summary = summarize_rows([{k: r[k] for k in
                                   ("variant", "target_domain", "seed", "accuracy")}
                                  for r in rows])
        table_txt = align_table(
            ["teacher", "held_out_accuracy", "selected_epoch", "checkpoint"],
            [[r["variant"], r["accuracy"], r["selected_epoch"], r["checkpoint"]]
             for r in rows])

        def fig(path):
            save_training_figure(last.val_accuracy_history, last.selected_epoch,
                                 last.per_domain_accuracy, path,
                                 title=f"train (target {args.target_domain})")

        write_report(args.report, manifest, rows, summary, table_txt, fig)
    write_manifest_file(manifest, str(out_model) + ".manifest.json")
    return 0


def cmd_eval(args) -> int:
    ds = read_dataset(args.data)
    table = load_teacher_table(args.teacher)
    if tuple(ds.classes) != tuple(table.classes):
        raise ConfigError("dataset and table class vocabularies differ")
    models = [load_student(p) for p in args.model]
    for p, m in zip(args.model, models):
        if m.num_classes != len(table.classes):
            raise ConfigError(f"{p}: checkpoint has {m.num_classes} classes, "
                              f"table has {len(table.classes)}")
    target_samples = ds.domain_samples(args.target_domain)

    named = []
    rows = []
    for p, m in zip(args.model, models):
        rep = evaluate_ensemble([m], target_samples, table)
        name = Path(p).stem
        named.append((name, rep.held_out_accuracy))
        rows.append({"variant": name, "target_domain": args.target_domain,
                     "seed": m.seed, "accuracy": rep.held_out_accuracy,
                     "selected_epoch": None})
    if len(models) > 1:
        rep = evaluate_ensemble(models, target_samples, table)
        named.append(("ensemble", rep.held_out_accuracy))
        rows.append({"variant": "ensemble", "target_domain": args.target_domain,
                     "seed": None, "accuracy": rep.held_out_accuracy,
                     "selected_epoch": None})

    for name, acc in named:
        print(f"{name}: accuracy {acc:.4f} on {args.target_domain}")
    manifest = build_manifest("eval", {"models": list(args.model)},
                              [args.data, args.teacher, *args.model], None)
    manifest["target_domain"] = args.target_domain
    if args.report:
        summary = summarize_rows(rows)
        txt = align_table(["model", "accuracy"], [[n, a] for n, a in named])
        paths = write_report(args.report, manifest, rows, summary, txt,
                             lambda p: save_eval_figure(named, p,
                                                        title=f"eval on {args.target_domain}"))
        write_manifest_file(manifest, str(paths["machine"]) + ".manifest.json")
    return 0


def cmd_gradcheck(args) -> int:
    manifest = build_manifest("gradcheck",
                              {"seed": args.seed, "trials": args.trials,
                               "tolerance": args.tolerance}, [], args.seed)
    print(json.dumps({"kind": "manifest", **manifest}, sort_keys=True))
    ok, results = run_gradcheck(seed=args.seed, trials=args.trials,
                                tolerance=args.tolerance)
    for r in results:
        status = "ok" if r["passed"] else "FAIL"
        print(f"{r['term']:28s} worst_rel_err={r['max_rel_err']:.3e}  [{status}]")
        if not r["passed"]:
            print(f"    at trial {r['trial']}, parameter {r['param']}[{r['index']}]: "
                  f"analytic={r['analytic']:.6e} numeric={r['numeric']:.6e}")
    print(f"gradient check {'passed' if ok else 'FAILED'} "
          f"(tolerance {args.tolerance:g}, {args.trials} trials per term)")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    cfg = resolve_train_config(args)
    ds = read_dataset(args.data)
    tables = [load_teacher_table(p) for p in args.teacher]
    seeds = [cfg.seed + i for i in range(args.seeds)]
    domains = args.target_domain if args.target_domain else None

    if args.suite == "mix":
        rows = mix_teacher_sweep(ds, tables, cfg, seeds, target_domains=domains)
        variants_used = []
    else:
        variants = suite_variants(args.suite, cfg)
        rows = ablation_sweep(ds, tables, variants, seeds,
                              target_domains=domains, jobs=args.jobs)
        variants_used = [n for n, _ in variants]

    summary = summarize_rows(rows)
    manifest = build_manifest("ablate", dict(config_as_dict(cfg), suite=args.suite,
                                             seeds=seeds, variants=variants_used),
                              [args.data, *args.teacher], cfg.seed)
    txt = sweep_text_table(rows, summary)
    paths = write_report(args.report, manifest, rows, summary, txt,
                         lambda p: save_sweep_figure(rows, p, title=f"suite: {args.suite}"))
    write_manifest_file(manifest, str(paths["machine"]) + ".manifest.json")
    print(txt)
    print(f"wrote report to {args.report}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rise",
        description="distillation engine with text-embedding distance regularizers")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic multi-domain benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--params", help="JSON file with generator parameters")
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--num-domains", dest="num_domains", type=int)
    p.add_argument("--text-dim", dest="text_dim", type=int)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--samples-per-cell", dest="samples_per_cell", type=int)
    p.add_argument("--anchor-offset", dest="anchor_offset", type=float)
    p.add_argument("--domain-shift", dest="domain_shift", type=float)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--nonlinearity", choices=("linear", "tanh_mix"))
    p.add_argument("--logit-scale", dest="logit_scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant-teachers", dest="variant_teachers", type=int, default=0,
                   help="additionally emit N perturbed teacher tables for mix runs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="leave-one-domain-out training run")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", action="append", required=True,
                   help="teacher table file; repeat to train one student per teacher")
    p.add_argument("--target-domain", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--report")
    add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints (ensembled when several)")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--target-domain", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="analytic-vs-numeric gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run an ablation suite")
    p.add_argument("--data", required=True)
    p.add_argument("--teacher", action="append", required=True)
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--seeds", type=int, default=3, help="number of seeds per cell")
    p.add_argument("--target-domain", action="append",
                   help="restrict to the given target domain(s); default all")
    p.add_argument("--report", required=True)
    p.add_argument("--jobs", type=int,
                   default=int(os.environ.get("RISE_JOBS", "1")))
    add_train_overrides(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except RiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
