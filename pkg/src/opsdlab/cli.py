"""Command-line interface.

Subcommands: pretrain, train, eval, analyze, report. Exit codes: 0 success,
2 config error, 3 missing dependency artifact, 4 numerical abort.

Environment: OPSDLAB_OUT_ROOT sets the output root (default ./runs);
OPSDLAB_THREADS caps BLAS/OpenMP threads and must be set before numpy is
first imported in the process.
"""

from __future__ import annotations

import os

_threads = os.environ.get("OPSDLAB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as A
from . import policy as P
from . import runio as io
from .distributions import DivergenceKind
from .errors import (
    ConfigError,
    MissingArtifactError,
    NumericalAbort,
    OpsdLabError,
)
from .presets import PRESETS, ExperimentManifest, get_preset
from .rollout import DISABLED_REINJECTION, ReinjectionSchedule
from .tasks import ContextVariant, build_pretraining_corpus, save_corpus
from .training import (
    FilterMode,
    TrainingConfig,
    config_to_dict,
    pretrain_supervised,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_NUMERICAL = 4


def _out_root(args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else io.output_root()


def _load_manifest(args) -> ExperimentManifest:
    if getattr(args, "manifest", None):
        manifest = ExperimentManifest.from_dict(io.read_json(args.manifest))
    else:
        manifest = get_preset(args.preset)
    cfg = manifest.config
    overrides = {}
    for flag, caster in (
        ("batch_size", int), ("learning_rate", float), ("grad_clip_norm", float),
        ("steps", int), ("train_temperature", float), ("max_gen_len", int),
        ("eval_every", int), ("weight_decay", float), ("objective", str),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = caster(value)
    if getattr(args, "filter_mode", None):
        overrides["filter_mode"] = FilterMode(args.filter_mode)
    if getattr(args, "divergence", None):
        overrides["divergence_kind"] = DivergenceKind(args.divergence)
    if getattr(args, "context_variant", None):
        overrides["context_variant"] = (
            None if args.context_variant == "none" else ContextVariant(args.context_variant)
        )
    if getattr(args, "reinjection_period", None) is not None:
        overrides["reinjection"] = (
            DISABLED_REINJECTION if args.reinjection_period == 0
            else ReinjectionSchedule(period=args.reinjection_period)
        )
    if overrides:
        cfg = replace(cfg, **overrides)
        manifest = replace(manifest, config=cfg)
    if getattr(args, "seeds", None):
        manifest = replace(manifest, seeds=tuple(args.seeds))
    return manifest


def _baseline_paths(root: Path) -> tuple[Path, Path]:
    return root / "baseline" / "baseline.ckpt", root / "baseline" / "baseline_report.json"


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    manifest = _load_manifest(args)
    spec = manifest.pretrain
    root = _out_root(args)
    base_dir = root / "baseline"
    base_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path, report_path = _baseline_paths(root)

    corpus = build_pretraining_corpus(
        spec.corpus_n, spec.redundancy_level, spec.answer_noise_rate,
        seed=spec.corpus_seed, context_fraction=spec.context_fraction,
    )
    save_corpus(base_dir / "corpus.txt", corpus, header={
        "n": spec.corpus_n, "redundancy_level": spec.redundancy_level,
        "answer_noise_rate": spec.answer_noise_rate,
        "context_fraction": spec.context_fraction, "seed": spec.corpus_seed,
    })

    student = P.init_policy(seed=spec.init_seed)
    train_cfg = TrainingConfig(
        batch_size=spec.batch_size, learning_rate=spec.learning_rate,
        grad_clip_norm=spec.grad_clip_norm, data_seed=spec.order_seed,
        init_seed=spec.init_seed,
    )
    print(f"pretraining: corpus={spec.corpus_n} epochs={spec.epochs}")
    student, history = pretrain_supervised(student, corpus, spec.epochs, train_cfg,
                                           log_every=max(1, spec.epochs // 5))
    stages = [{"stage": "pretrain", "epochs": spec.epochs}]
    if spec.extra_low_noise_epochs:
        strong_corpus = build_pretraining_corpus(
            spec.corpus_n, spec.redundancy_level, 0.0,
            seed=spec.corpus_seed + 1, context_fraction=spec.context_fraction,
        )
        reports_mid = A.evaluate_suite(student, manifest.eval_suite)
        stages[-1]["pooled_accuracy"] = A.pooled_accuracy(reports_mid)
        stages[-1]["reports"] = {k: v.to_dict() for k, v in reports_mid.items()}
        print(f"stronger-baseline stage: {spec.extra_low_noise_epochs} low-noise epochs")
        student, _ = pretrain_supervised(
            student, strong_corpus, spec.extra_low_noise_epochs, train_cfg,
            log_every=max(1, spec.extra_low_noise_epochs // 3),
        )
        stages.append({"stage": "stronger-baseline",
                       "epochs": spec.extra_low_noise_epochs})

    reports = A.evaluate_suite(student, manifest.eval_suite)
    pooled = A.pooled_accuracy(reports)
    stages[-1]["pooled_accuracy"] = pooled
    stages[-1]["reports"] = {k: v.to_dict() for k, v in reports.items()}
    lo, hi = spec.target_band
    in_band = lo <= pooled <= hi
    if not in_band:
        print(f"warning: baseline accuracy {pooled:.3f} outside target band "
              f"[{lo}, {hi}]", file=sys.stderr)
    digest = P.save_checkpoint(student, ckpt_path)
    io.write_json(report_path, {
        "pooled_accuracy": pooled,
        "target_band": [lo, hi],
        "in_band": in_band,
        "reports": {k: v.to_dict() for k, v in reports.items()},
        "stages": stages,
        "pretrain_spec": spec.to_dict(),
        "final_epoch_loss": history[-1]["mean_loss"] if history else None,
        "checkpoint_sha256": digest,
        "checkpoint": str(ckpt_path),
    })
    for name, rep in reports.items():
        print(f"  {name}: acc={rep.accuracy:.3f} len={rep.mean_length:.1f} "
              f"markers={rep.marker_density_value:.1f}")
    print(f"baseline accuracy {pooled:.3f} (band [{lo}, {hi}]) -> {ckpt_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    manifest = _load_manifest(args)
    root = _out_root(args)
    ckpt_path, report_path = _baseline_paths(root)
    if not ckpt_path.exists():
        raise MissingArtifactError(
            f"baseline checkpoint {ckpt_path} not found; run `opsdlab pretrain` first"
        )
    baseline = P.load_checkpoint(ckpt_path)
    base_report = io.read_json(report_path) if report_path.exists() else None

    records = []
    for seed in manifest.seeds:
        config = replace(manifest.config, data_seed=seed)
        run_dir = root / manifest.name / f"seed{seed}"
        print(f"run {manifest.name} seed={seed} steps={config.steps} -> {run_dir}")
        record = run_experiment(config, manifest.eval_suite, run_dir, baseline,
                                checkpoint_every=getattr(args, "checkpoint_every", None))
        delta = record.report["delta"]
        print(f"  dAcc={delta['delta_accuracy_pp']:+.2f} pp  "
              f"dLen={delta['delta_length_pct']:+.2f} %")
        records.append(record)

    summary = {
        "preset": manifest.name,
        "manifest": manifest.to_dict(),
        "baseline_report": base_report,
        "per_seed": {
            str(seed): {
                "run_dir": rec.run_dir,
                "delta_accuracy_pp": rec.report["delta"]["delta_accuracy_pp"],
                "delta_length_pct": rec.report["delta"]["delta_length_pct"],
                "post_marker_density": rec.report["post_marker_density"],
                "baseline_marker_density": rec.report["baseline_marker_density"],
            }
            for seed, rec in zip(manifest.seeds, records)
        },
    }
    if len(records) > 1:
        accs = [r.report["delta"]["delta_accuracy_pp"] for r in records]
        lens = [r.report["delta"]["delta_length_pct"] for r in records]
        summary["delta_accuracy_pp_mean"] = float(np.mean(accs))
        summary["delta_accuracy_pp_std"] = float(np.std(accs, ddof=1))
        summary["delta_length_pct_mean"] = float(np.mean(lens))
        summary["delta_length_pct_std"] = float(np.std(lens, ddof=1))
        print(f"{manifest.name}: dAcc {summary['delta_accuracy_pp_mean']:+.2f} "
              f"± {summary['delta_accuracy_pp_std']:.2f} pp; "
              f"dLen {summary['delta_length_pct_mean']:+.2f} "
              f"± {summary['delta_length_pct_std']:.2f} %  (n={len(records)})")
    io.write_json(root / manifest.name / "summary.json", summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise MissingArtifactError(f"checkpoint not found: {ckpt}")
    model = P.load_checkpoint(ckpt)
    suite = (A.EvalSuite.from_dict(io.read_json(args.suite))
             if args.suite else A.EvalSuite())
    reports = A.evaluate_suite(model, suite)
    for name, rep in reports.items():
        print(f"{name}: acc={rep.accuracy:.4f} len={rep.mean_length:.2f} "
              f"markers={rep.marker_density_value:.2f}")
    print(f"pooled accuracy: {A.pooled_accuracy(reports):.4f}")
    if args.out:
        io.write_json(args.out, {k: v.to_dict() for k, v in reports.items()})
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze / report
# ---------------------------------------------------------------------------


def _load_run(run_dir: Path) -> dict:
    report = run_dir / "report.json"
    config = run_dir / "config.json"
    if not report.exists() or not config.exists():
        raise MissingArtifactError(f"{run_dir} is not a completed run directory")
    out = {"dir": run_dir, "report": io.read_json(report), "config": io.read_json(config)}
    profile = run_dir / "kl_profile.json"
    if profile.exists():
        out["kl_profile"] = io.read_json(profile)
    evals = run_dir / "evals.jsonl"
    if evals.exists():
        out["evals"] = io.read_jsonl(evals)
    return out


def _post_vectors(run: dict):
    reports = {name: A.EvalReport.from_dict(d) for name, d in run["report"]["post"].items()}
    return A.pooled_per_problem(reports)


def cmd_analyze(args) -> int:
    runs = [_load_run(Path(d)) for d in args.run_dirs]
    suites = [io.stable_json(r["config"]["eval_suite"]) for r in runs]
    if len(set(suites)) > 1:
        raise ConfigError("runs use incompatible evaluation suites; cannot compare")
    out_dir = Path(args.out) if args.out else Path(args.run_dirs[0]) / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)

    band_names = sorted(runs[0]["report"]["post"].keys())
    summary_cols = (
        ["run"] + [f"acc:{b}" for b in band_names] + ["avg_d_acc_pp"]
        + [f"len:{b}" for b in band_names] + ["avg_d_len_pct"]
        + ["marker_density", "baseline_marker_density"]
    )
    summary_rows = []
    scatter_rows = []
    shift_rows = []
    for run in runs:
        rep = run["report"]
        name = f"{Path(run['dir']).parent.name}/{Path(run['dir']).name}"
        post = {b: A.EvalReport.from_dict(d) for b, d in rep["post"].items()}
        summary_rows.append(
            [name]
            + [post[b].accuracy for b in band_names]
            + [rep["delta"]["delta_accuracy_pp"]]
            + [post[b].mean_length for b in band_names]
            + [rep["delta"]["delta_length_pct"]]
            + [rep["post_marker_density"], rep["baseline_marker_density"]]
        )
        ca, cl = rep["bootstrap_accuracy_pp"], rep["bootstrap_length_pct"]
        scatter_rows.append([
            name, ca["point"], ca["lower"], ca["upper"],
            cl["point"], cl["lower"], cl["upper"],
        ])
        sm = rep["shift_matrix"]
        shift_rows.append([name, sm["cc"], sm["damaged"], sm["repaired"], sm["ii"],
                           sm["net"], sm["n_questions"]])

    io.write_plot_data(out_dir / "summary.tsv", "summary-table", summary_cols, summary_rows)
    io.write_plot_data(
        out_dir / "scatter.tsv", "accuracy-length-scatter",
        ["run", "d_acc_pp", "d_acc_lo", "d_acc_hi", "d_len_pct", "d_len_lo", "d_len_hi"],
        scatter_rows,
    )
    io.write_plot_data(
        out_dir / "shift_matrices.tsv", "shift-matrix",
        ["run", "cc", "damaged", "repaired", "ii", "net", "n_questions"],
        shift_rows,
    )

    for run in runs:
        if "kl_profile" not in run:
            continue
        prof = run["kl_profile"]
        rows = []
        for outcome, means in sorted(prof["mean_kl"].items()):
            for b, mean in enumerate(means):
                rows.append([
                    outcome, b * prof["bin_width"],
                    float("nan") if mean is None else mean,
                    prof["survival"][outcome][b],
                    prof["token_count"][outcome][b],
                ])
        stem = f"kl_profile_{Path(run['dir']).parent.name}_{Path(run['dir']).name}.tsv"
        io.write_plot_data(out_dir / stem, "kl-profile",
                           ["outcome", "bin_start", "mean_kl", "survival", "token_count"],
                           rows)

    for run in runs:
        if "evals" not in run or len(run["evals"]) < 3:
            continue
        rows = []
        for entry in run["evals"]:
            reports = {b: A.EvalReport.from_dict(d) for b, d in entry["reports"].items()}
            mean_len = float(np.mean([r.mean_length for r in reports.values()]))
            rows.append([entry["step"], entry["pooled_accuracy"], mean_len])
        stem = f"trajectory_{Path(run['dir']).parent.name}_{Path(run['dir']).name}.tsv"
        io.write_plot_data(out_dir / stem, "trajectory",
                           ["step", "pooled_accuracy", "mean_length"], rows)

    # Pairwise comparison of post-training evaluations against the first
    # run (the reference); the reference compared to itself gives zero
    # deltas with degenerate intervals.
    ref_acc, ref_len = _post_vectors(runs[0])
    comparisons = []
    for run in runs:
        acc, length = _post_vectors(run)
        ci_acc = A.paired_bootstrap(ref_acc, acc, seed=0, statistic="mean_diff", scale=100.0)
        ci_len = A.paired_bootstrap(ref_len, length, seed=0, statistic="ratio_of_means_pct")
        delta = ci_acc.point
        comparisons.append({
            "reference": str(runs[0]["dir"]),
            "run": str(run["dir"]),
            "accuracy_delta_pp": ci_acc.to_dict(),
            "length_delta_pct": ci_len.to_dict(),
            "accuracy_ordering": ("tie" if delta == 0 else
                                  "run_higher" if delta > 0 else "reference_higher"),
        })
    io.write_json(out_dir / "comparisons.json", {"comparisons": comparisons})
    print(f"analysis written to {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    runs = [_load_run(Path(d)) for d in args.run_dirs]
    band_names = sorted(runs[0]["report"]["post"].keys())
    header = (["run"] + [f"acc:{b}" for b in band_names] + ["avg_d_pp"]
              + [f"len:{b}" for b in band_names] + ["avg_d_pct"])
    print("\t".join(header))
    for run in runs:
        rep = run["report"]
        name = f"{Path(run['dir']).parent.name}/{Path(run['dir']).name}"
        post = {b: A.EvalReport.from_dict(d) for b, d in rep["post"].items()}
        cells = ([name]
                 + [f"{post[b].accuracy:.3f}" for b in band_names]
                 + [f"{rep['delta']['delta_accuracy_pp']:+.2f}"]
                 + [f"{post[b].mean_length:.1f}" for b in band_names]
                 + [f"{rep['delta']['delta_length_pct']:+.2f}"])
        print("\t".join(cells))
        sm = rep["shift_matrix"]
        print(f"  markers {rep['baseline_marker_density']:.2f} -> "
              f"{rep['post_marker_density']:.2f}; shift net {sm['net']:+.2f} "
              f"(repaired {sm['repaired']:.2f}, damaged {sm['damaged']:.2f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opsdlab",
        description="Desk-scale on-policy self-distillation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_manifest_flags(p):
        group = p.add_mutually_exclusive_group()
        group.add_argument("--preset", default="all-rollout",
                           help=f"preset name ({', '.join(sorted(PRESETS))})")
        group.add_argument("--manifest", help="path to a manifest JSON file")
        p.add_argument("--out", help="output root (default $OPSDLAB_OUT_ROOT or ./runs)")
        p.add_argument("--seeds", type=int, nargs="+", help="override data seeds")
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--grad-clip-norm", dest="grad_clip_norm", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--train-temperature", dest="train_temperature", type=float)
        p.add_argument("--max-gen-len", dest="max_gen_len", type=int)
        p.add_argument("--eval-every", dest="eval_every", type=int)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--objective", choices=["opsd", "rft"])
        p.add_argument("--filter-mode", dest="filter_mode",
                       choices=[m.value for m in FilterMode])
        p.add_argument("--divergence", choices=[k.value for k in DivergenceKind])
        p.add_argument("--context-variant", dest="context_variant",
                       choices=[v.value for v in ContextVariant] + ["none"])
        p.add_argument("--reinjection-period", dest="reinjection_period", type=int,
                       help="teacher payload reinjection period in tokens (0 disables)")

    p_pre = sub.add_parser("pretrain", help="build corpus and train the shared baseline")
    add_manifest_flags(p_pre)
    p_pre.set_defaults(func=cmd_pretrain)

    p_train = sub.add_parser("train", help="run a distillation preset against the baseline")
    add_manifest_flags(p_train)
    p_train.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a suite")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--suite", help="path to an eval-suite JSON file")
    p_eval.add_argument("--out", help="write the report JSON here")
    p_eval.set_defaults(func=cmd_eval)

    p_an = sub.add_parser("analyze", help="comparative report + plot-data files")
    p_an.add_argument("run_dirs", nargs="+")
    p_an.add_argument("--out", help="analysis output directory")
    p_an.set_defaults(func=cmd_analyze)

    p_rep = sub.add_parser("report", help="print summary tables for run directories")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        if exc.diagnostic:
            print(f"diagnostic: {exc.diagnostic}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (ConfigError, OpsdLabError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
