"""Command-line interface.

Verbs: gen, fit-gmm, train, eval, ablate, km, gradcheck. Every run writes
a JSON echo of its arguments next to its primary output. Exit codes map
error categories (see EXIT_CODES); 0 means success.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .clustering import load_gmm, save_gmm
from .dataio import GeneratorConfig, generate_synthetic_cohort, load_cohort
from .errors import (
    BinningError,
    ConfigError,
    DataLoadError,
    DimensionError,
    LossError,
    MetricError,
    SelectionError,
    SlidesurvError,
    TrainingError,
)
from .metrics import kaplan_meier, logrank_test, stratify_by_median
from .pipeline import (
    TrainConfig,
    ablation_rows_machine,
    ablation_table,
    evaluate_fold,
    fit_cohort_gmm,
    load_checkpoint,
    loss_ablation_grid,
    module_ablation_grid,
    run_ablation,
    save_checkpoint,
    standard_ablation_grid,
    train_fold,
)

EXIT_CODES = {
    ConfigError: 2,
    DataLoadError: 3,
    DimensionError: 4,
    SelectionError: 5,
    BinningError: 6,
    MetricError: 7,
    TrainingError: 8,
    LossError: 9,
}


def _echo_config(out_path: Path, args: argparse.Namespace):
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    echo = Path(str(out_path) + ".config.json")
    echo.parent.mkdir(parents=True, exist_ok=True)
    echo.write_text(json.dumps(payload, sort_keys=True, default=str, indent=2) + "\n")


def _add_train_config_flags(p: argparse.ArgumentParser):
    defaults = TrainConfig()
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--weight-decay", type=float, default=defaults.weight_decay)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--lambda-kl", type=float, default=defaults.lambda_kl)
    p.add_argument("--n-prompts", type=int, default=defaults.n_prompts)
    p.add_argument("--n-tokens", type=int, default=defaults.n_tokens)
    p.add_argument("--n-clusters", type=int, default=defaults.n_clusters)
    p.add_argument("--em-iters", type=int, default=defaults.em_iters)
    p.add_argument("--corpus-cap", type=int, default=defaults.corpus_cap)
    p.add_argument("--strategy", default=defaults.strategy)
    p.add_argument("--loss-kind", default=defaults.loss_kind)
    p.add_argument("--no-vga", action="store_true",
                   help="drop the reconstruction branch (WSI-only baseline)")
    p.add_argument("--standardize-genomic", action="store_true")
    p.add_argument("--grad-accum", type=int, default=defaults.grad_accum)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--n-folds", type=int, default=defaults.n_folds)


def _config_from_args(args) -> TrainConfig:
    kwargs = {}
    for f in fields(TrainConfig):
        if f.name == "use_vga":
            kwargs[f.name] = not args.no_vga
        else:
            kwargs[f.name] = getattr(args, f.name)
    return TrainConfig(**kwargs)


def cmd_gen(args):
    cfg = GeneratorConfig(
        seed=args.seed, n_patients=args.n_patients, d=args.d,
        n_patch_range=(args.n_patch_min, args.n_patch_max),
        n_latent_clusters=args.n_latent_clusters,
        signal_separation=args.signal_separation,
        genomic_noise=args.genomic_noise, time_noise=args.time_noise)
    gen = generate_synthetic_cohort(args.out, cfg)
    _echo_config(gen.manifest_path, args)
    print(f"wrote {gen.manifest_path} ({len(gen.manifest.entries)} patients, "
          f"d={gen.manifest.d}, {gen.n_signal_clusters} signal clusters)")


def cmd_fit_gmm(args):
    cohort = load_cohort(args.manifest)
    config = _config_from_args(args)
    model = fit_cohort_gmm(cohort, cohort.sample_ids(), config)
    save_gmm(args.out, model)
    _echo_config(Path(args.out), args)
    print(f"wrote {args.out} ({model.n_components} components, d={model.d})")


def cmd_train(args):
    cohort = load_cohort(args.manifest)
    config = _config_from_args(args)
    ckpt, history = train_fold(cohort, args.fold, config)
    save_checkpoint(args.out, ckpt)
    _echo_config(Path(args.out), args)
    losses = ", ".join(f"{v:.4f}" for v in history.epoch_loss[-3:])
    print(f"wrote {args.out} (weights hash {ckpt.weights_hash()}, "
          f"final losses: {losses})")


def cmd_eval(args):
    cohort = load_cohort(args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    result = evaluate_fold(cohort, args.fold, ckpt)
    Path(args.out).write_text(result.to_text())
    _echo_config(Path(args.out), args)
    print(f"fold {args.fold} c-index: {result.c_index:.4f} "
          f"({len(result.rows)} patients) -> {args.out}")


def cmd_ablate(args):
    cohort = load_cohort(args.manifest)
    base = _config_from_args(args)
    grids = {"selection": standard_ablation_grid,
             "modules": module_ablation_grid,
             "loss": loss_ablation_grid}
    if args.grid not in grids:
        raise ConfigError(f"unknown grid {args.grid!r}; expected {sorted(grids)}")
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = run_ablation(cohort, grids[args.grid](base), seeds=seeds)
    Path(args.out).write_text(ablation_rows_machine(rows))
    _echo_config(Path(args.out), args)
    print(ablation_table(rows), end="")


def cmd_km(args):
    lines = Path(args.risks).read_text().splitlines()
    header = lines[0].split("\t")
    idx = {name: header.index(name) for name in ("sample_id", "risk", "time", "censor")}
    risks, times, censors = [], [], []
    for ln in lines[1:]:
        parts = ln.split("\t")
        risks.append(float(parts[idx["risk"]]))
        times.append(float(parts[idx["time"]]))
        censors.append(int(parts[idx["censor"]]))
    risks, times, censors = map(np.asarray, (risks, times, censors))
    strat = stratify_by_median(risks)
    lo, hi = strat.low, strat.high
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".low.tsv").write_text(
        kaplan_meier(times[lo], censors[lo]).to_text())
    out.with_suffix(".high.tsv").write_text(
        kaplan_meier(times[hi], censors[hi]).to_text())
    test = logrank_test(times[lo], censors[lo], times[hi], censors[hi])
    out.with_suffix(".logrank.tsv").write_text(test.to_text())
    _echo_config(out, args)
    print(f"median risk {strat.median:.4f}: low n={lo.size}, high n={hi.size}; "
          f"logrank chi2={test.chi2:.4f}, p={test.p_value:.4g}")


def cmd_gradcheck(args):
    from .gradcheck_suite import run_gradcheck_suite
    reports = run_gradcheck_suite(seed=args.seed)
    out = Path(args.out)
    lines = []
    ok = True
    for name, report in reports:
        status = "PASS" if report.passed else "FAIL"
        ok &= report.passed
        lines.append(f"{status} {name}: {report.n_checked} entries, "
                     f"max rel err {report.max_rel_err:.3e}")
        for fail in report.failures[:5]:
            lines.append(f"    {fail.parameter}{list(fail.index)}: "
                         f"analytic={fail.analytic:.6e} numeric={fail.numeric:.6e}")
    text = "\n".join(lines) + "\n"
    out.write_text(text)
    _echo_config(out, args)
    print(text, end="")
    if not ok:
        raise TrainingError("gradient check failed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slidesurv")
    sub = parser.add_subparsers(dest="command", required=True)

    gen_defaults = GeneratorConfig()
    p = sub.add_parser("gen", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=gen_defaults.seed)
    p.add_argument("--n-patients", type=int, default=gen_defaults.n_patients)
    p.add_argument("--d", type=int, default=gen_defaults.d)
    p.add_argument("--n-patch-min", type=int, default=gen_defaults.n_patch_range[0])
    p.add_argument("--n-patch-max", type=int, default=gen_defaults.n_patch_range[1])
    p.add_argument("--n-latent-clusters", type=int,
                   default=gen_defaults.n_latent_clusters)
    p.add_argument("--signal-separation", type=float,
                   default=gen_defaults.signal_separation)
    p.add_argument("--genomic-noise", type=float, default=gen_defaults.genomic_noise)
    p.add_argument("--time-noise", type=float, default=gen_defaults.time_noise)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit-gmm", help="fit a cohort-level mixture model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_fit_gmm)

    p = sub.add_parser("train", help="train one fold")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a fold (visual-only)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", default="modules",
                   help="selection | modules | loss")
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", required=True)
    _add_train_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("km", help="median stratification + KM curves + logrank")
    p.add_argument("--risks", required=True, help="risk table from eval")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_km)

    p = sub.add_parser("gradcheck", help="run analytic-vs-numeric gradient checks")
    p.add_argument("--out", default="gradcheck.txt")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except SlidesurvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in EXIT_CODES.items():
            if isinstance(exc, cls):
                return code
        return 10
    return 0


if __name__ == "__main__":
    sys.exit(main())
