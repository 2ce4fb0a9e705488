"""Command-line entry point.

Subcommands: simulate, train, crossval, compare, discriminate, export-cbt.
Exit status is 0 on success, 1 on runtime failure, 2 on usage errors.
Settings resolve as built-in defaults < ``REMI_SEED`` (seed only) < ``--config``
file < explicit flags.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, fmt
from .dataset import generate_synthetic, load_dataset, read_matrix, save_dataset, write_matrix
from .evaluation import (
    compare_variants,
    crossval,
    discriminability_ranking,
    population_from_model,
    topk_overlap,
)
from .model import VARIANTS, load_checkpoint, save_checkpoint
from .training import TrainingConfig, train

log = logging.getLogger("reminet")

RUN_KEYS = {"data", "eval_data", "variants", "folds", "out", "workers"}
CONFIG_KEYS = {f.name for f in fields(TrainingConfig)}


class UsageError(Exception):
    pass


def default_seed():
    raw = os.environ.get("REMI_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"REMI_SEED must be an integer, got {raw!r}")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _name_list(text):
    names = [x.strip() for x in text.split(",") if x.strip()]
    bad = [n for n in names if n not in VARIANTS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown variant(s) {bad}; choose from {sorted(VARIANTS)}")
    return names


def _add_training_flags(p, with_variant=True):
    p.add_argument("--config", type=Path, help="JSON run-config file; flags override its values")
    if with_variant:
        p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--hidden-dims", type=_int_list, dest="hidden_dims")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int, dest="k_samples")
    p.add_argument("--cycles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--grad-clip", type=float, dest="grad_clip")


def build_parser():
    parser = argparse.ArgumentParser(prog="reminet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic longitudinal dataset")
    p.add_argument("--subjects", type=int, default=40)
    p.add_argument("--rois", type=int, default=10)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--timepoints", type=int, default=2)
    p.add_argument("--seed", type=int)
    p.add_argument("--drift", type=float, default=0.05)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--label")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one model on a dataset")
    p.add_argument("--data", type=Path)
    p.add_argument("--eval-data", type=Path, dest="eval_data",
                   help="optional held-out dataset for best-model selection")
    p.add_argument("--out", type=Path)
    _add_training_flags(p)

    p = sub.add_parser("crossval", help="k-fold cross-validation of one variant")
    p.add_argument("--data", type=Path)
    p.add_argument("--folds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)
    _add_training_flags(p)

    p = sub.add_parser("compare", help="cross-validate several variants on shared folds")
    p.add_argument("--data", type=Path)
    p.add_argument("--variants", type=_name_list)
    p.add_argument("--folds", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path)
    _add_training_flags(p, with_variant=False)

    p = sub.add_parser("discriminate", help="rank ROIs by the residual between two templates")
    p.add_argument("--cbt-a", type=Path, required=True)
    p.add_argument("--cbt-b", type=Path, required=True)
    p.add_argument("--topk", type=int, default=15)
    p.add_argument("--reference", type=Path,
                   help="reference ROI ranking (comma/newline separated indices); default: the ranking itself")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("export-cbt", help="write population templates from a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--timepoints", type=int, help="forecast horizon (default: dataset n_timepoints)")
    p.add_argument("--out", type=Path, required=True)
    return parser


def resolve_settings(args):
    """Merge defaults, env seed, config file and flags into ``(TrainingConfig, run_settings)``."""
    merged = {"seed": default_seed()}
    run = {"folds": 5, "workers": 1, "variants": ["vanilla", "cyclic", "cyclic-minmax", "full"]}
    if getattr(args, "config", None) is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        unknown = set(doc) - CONFIG_KEYS - RUN_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for k, v in doc.items():
            (run if k in RUN_KEYS else merged)[k] = v
    for k in CONFIG_KEYS:
        val = getattr(args, k, None)
        if val is not None:
            merged[k] = val
    for k in RUN_KEYS:
        val = getattr(args, k, None)
        if val is not None:
            run[k] = val
    for k in ("data", "eval_data", "out"):
        if run.get(k) is not None:
            run[k] = Path(run[k])
    if run.get("workers", 1) < 1:
        raise UsageError("--workers must be >= 1")
    try:
        config = TrainingConfig(**merged)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc))
    return config, run


def _require(run, *keys):
    missing = [k for k in keys if run.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _echo(command, config=None, run=None, **extra):
    doc = {"command": command, **extra}
    if config is not None:
        doc["config"] = config.to_dict()
    if run is not None:
        doc["run"] = {k: (str(v) if isinstance(v, Path) else v) for k, v in run.items()}
    log.info("resolved settings: %s", json.dumps(doc, sort_keys=True))


def _write_report(report, out, prefix=""):
    atomic_write_text(out / f"{prefix}folds.csv", report.folds_csv())
    atomic_write_text(out / f"{prefix}summary.csv", report.summary_csv())
    atomic_write_text(out / f"{prefix}summary.json", report.summary_json())


def _write_fold_artifacts(out, variant, artifacts, report, config):
    for fold, models in enumerate(artifacts["models"]):
        for strategy, params in models.items():
            save_checkpoint(out / "checkpoints" / f"{variant}_fold{fold}_{strategy}.json", params, config.to_dict())
    for fold, hist in enumerate(artifacts["histories"]):
        hist.save(out / "histories" / f"{variant}_fold{fold}.csv")
    for row in report.select(variant):
        for t, P in enumerate(row.population, start=1):
            write_matrix(out / "population" / f"{variant}_fold{row.fold}_{row.strategy}_t{t}.csv", P)


def cmd_simulate(args):
    for name in ("subjects", "rois", "views", "timepoints"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be >= 1")
    if args.drift < 0 or args.noise < 0:
        raise UsageError("--drift and --noise must be >= 0")
    seed = args.seed if args.seed is not None else default_seed()
    _echo("simulate", seed=seed, subjects=args.subjects, rois=args.rois, views=args.views,
          timepoints=args.timepoints, drift=args.drift, noise=args.noise)
    ds = generate_synthetic(args.subjects, args.rois, args.views, args.timepoints, seed=seed,
                            drift_scale=args.drift, noise_scale=args.noise, label=args.label)
    path = save_dataset(ds, args.out)
    n_r, n_v, n_t = ds.dims
    print(f"wrote {path}: subjects={len(ds)} rois={n_r} views={n_v} timepoints={n_t} seed={seed}")
    return 0


def cmd_train(args):
    config, run = resolve_settings(args)
    _require(run, "data", "out")
    _echo("train", config, run)
    ds = load_dataset(run["data"])
    eval_set = load_dataset(run["eval_data"]) if run.get("eval_data") else None
    last, best, history = train(ds, config, eval_set=eval_set)
    out = run["out"]
    save_checkpoint(out / "last.json", last, config.to_dict())
    save_checkpoint(out / "best.json", best, config.to_dict())
    history.save(out / "history.csv")
    atomic_write_text(out / "config.json", json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"trained {config.variant} for {config.epochs} epochs; final loss {fmt(history.records[-1].total)}")
    return 0


def cmd_crossval(args):
    config, run = resolve_settings(args)
    _require(run, "data", "out")
    _echo("crossval", config, run)
    ds = load_dataset(run["data"])
    report = crossval(ds, config, run["folds"], workers=run["workers"])
    out = run["out"]
    _write_report(report, out)
    _write_fold_artifacts(out, config.variant, report.artifacts, report, config)
    for a in report.aggregate():
        print(f"{a['variant']:>14} {a['strategy']:>4}: centeredness {a['centeredness_overall']:.6g}"
              f" mae {a['mae_overall']:.6g} ({a['n_folds']} folds)")
    return 0


def cmd_compare(args):
    config, run = resolve_settings(args)
    _require(run, "data", "out")
    _echo("compare", config, run)
    ds = load_dataset(run["data"])
    report = compare_variants(ds, config, run["variants"], run["folds"], workers=run["workers"])
    out = run["out"]
    _write_report(report, out)
    for variant in run["variants"]:
        vcfg = TrainingConfig(**{**config.to_dict(), "variant": variant, "cycles": None})
        _write_fold_artifacts(out, variant, report.artifacts["per_variant"][variant], report, vcfg)
    for a in report.aggregate():
        print(f"{a['variant']:>14} {a['strategy']:>4}: centeredness {a['centeredness_overall']:.6g}"
              f" mae {a['mae_overall']:.6g}")
    for pv in report.pvalues:
        print(f"{pv['a']} vs {pv['b']} ({pv['strategy']}): t={pv['t']:.4g} p={pv['p']:.4g}")
    return 0


def _read_ranking(path):
    text = Path(path).read_text().replace("\n", ",")
    try:
        return np.array([int(x) for x in text.split(",") if x.strip()])
    except ValueError as exc:
        raise UsageError(f"{path}: reference ranking must be integer ROI indices ({exc})")


def cmd_discriminate(args):
    _echo("discriminate", cbt_a=str(args.cbt_a), cbt_b=str(args.cbt_b), topk=args.topk)
    a = read_matrix(args.cbt_a)
    b = read_matrix(args.cbt_b)
    if a.shape != b.shape:
        raise UsageError(f"template shapes differ: {a.shape} vs {b.shape}")
    if not 1 <= args.topk <= a.shape[0]:
        raise UsageError(f"--topk must be in [1, {a.shape[0]}]")
    ranking = discriminability_ranking(a, b)
    reference = _read_ranking(args.reference) if args.reference else ranking.ranking
    overlap = topk_overlap(ranking.ranking, reference, args.topk)
    result = {
        "topk": args.topk,
        "top_rois": ranking.top(args.topk).tolist(),
        "overlap": overlap,
        "reference": str(args.reference) if args.reference else "self",
        "scores": ranking.scores.tolist(),
        "ranking": ranking.ranking.tolist(),
    }
    if args.out is not None:
        lines = ["rank,roi,score"] + [f"{r},{roi},{fmt(ranking.scores[roi])}"
                                      for r, roi in enumerate(ranking.ranking)]
        atomic_write_text(args.out / "ranking.csv", "\n".join(lines) + "\n")
        atomic_write_text(args.out / "discriminability.json", json.dumps(result, indent=2) + "\n")
    print(f"top-{args.topk} ROIs: {result['top_rois']}; overlap with {result['reference']}: {overlap:.4g}")
    return 0


def cmd_export_cbt(args):
    params, cfg = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    n_t = args.timepoints or ds.dims[2]
    cycles = (cfg or {}).get("cycles")
    _echo("export-cbt", checkpoint=str(args.checkpoint), data=str(args.data), timepoints=n_t,
          seed=(cfg or {}).get("seed"))
    pop = population_from_model(params, ds, n_timepoints=n_t, cycles=cycles)
    for t, P in enumerate(pop.cbts, start=1):
        write_matrix(args.out / f"population_t{t}.csv", P)
    print(f"wrote {len(pop)} population templates to {args.out}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "compare": cmd_compare,
    "discriminate": cmd_discriminate,
    "export-cbt": cmd_export_cbt,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"reminet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        module = type(exc).__module__.split(".")[-1]
        print(f"reminet {args.command}: {module}.{type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
