"""Command line interface: simulate, predict, rhythm, evaluate, compare.

Every subcommand resolves its settings in three layers (built-in defaults,
then a key=value config file, then explicit flags), echoes the effective
configuration into the output directory as run_config.txt, and writes
deterministic, byte-stable outputs for a fixed seed.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from ._kernels import BACKEND
from .cosinor import (
    RhythmThresholds,
    acrophase_histogram,
    align_acrophases,
    call_rhythms,
    read_rhythm_table,
    write_histogram,
    write_rhythm_table,
)
from .dataio import (
    DataError,
    MissingnessPolicy,
    apply_missingness,
    load_labels,
    load_matrix,
    select_features,
    write_matrix,
    zscore,
)
from .evalharness import align, emit_reports, roc
from .finetune import PipelineConfig, run_pipeline, write_phases
from .synthgen import SynthSpec, generate, write_labels, write_truth
from .tensornet import TrainingError


def _parse_range(text):
    """'0.5..1.5' -> (0.5, 1.5); a single number means a degenerate range."""
    text = str(text)
    if ".." in text:
        lo, hi = text.split("..", 1)
        return (float(lo), float(hi))
    v = float(text)
    return (v, v)


def _parse_period_mix(text):
    """'24:0.8,12:0.2' -> {24.0: 0.8, 12.0: 0.2}."""
    mix = {}
    for part in str(text).split(","):
        period, _, frac = part.partition(":")
        if not frac:
            raise ValueError(f"period mix entry {part!r} needs period:fraction")
        mix[float(period)] = float(frac)
    return mix


def _parse_bool(text):
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_seed(text):
    if text is None or str(text).strip().lower() in ("", "none", "random"):
        return None
    return int(text)


def _fmt_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return f"{value[0]:g}..{value[1]:g}"
    if isinstance(value, dict):
        return ",".join(f"{k:g}:{v:g}" for k, v in sorted(value.items()))
    if value is None:
        return "none"
    if isinstance(value, float):
        return format(value, "g")
    return str(value)


# per-subcommand tunables: key -> (converter, default)
OPTION_REGISTRY = {
    "simulate": {
        "m": (int, 24),
        "n": (int, 400),
        "rhythmic_fraction": (float, 0.4),
        "amplitude": (_parse_range, (0.5, 1.5)),
        "mesor": (_parse_range, (4.0, 8.0)),
        "noise_sd": (float, 0.4),
        "noise_kind": (str, "gaussian"),
        "phase_sampling": (str, "uniform"),
        "period_mix": (_parse_period_mix, {24.0: 1.0}),
        "missing_fraction": (float, 0.0),
        "seed": (_parse_seed, None),
    },
    "predict": {
        "epochs": (int, 20),
        "retrain_epochs": (int, 200),
        "optimizer": (str, "adam"),
        "learning_rate": (lambda v: None if v is None else float(v), None),
        "q_norm": (float, 1.0),
        "lambda": (float, 0.0),
        "regularizer": (str, "none"),
        "learn_omega": (_parse_bool, False),
        "outlier_stat": (str, "signed"),
        "retrain_from": (str, "scratch"),
        "max_missing": (float, 0.0),
        "impute": (_parse_bool, True),
        "feature_selection": (str, "none"),
        "target_n": (int, 2000),
        "proteins_as_rows": (_parse_bool, False),
        "emit_normalized": (_parse_bool, False),
        "emit_residuals": (_parse_bool, False),
        "seed": (_parse_seed, 0),
    },
    "rhythm": {
        "period": (float, 24.0),
        "q_threshold": (lambda v: None if v is None else float(v), None),
        "ramp_threshold": (lambda v: None if v is None else float(v), None),
        "r2_threshold": (lambda v: None if v is None else float(v), None),
        "ramp_scale": (str, "raw"),
        "reference": (lambda v: v, None),
        "proteins_as_rows": (_parse_bool, False),
        "seed": (_parse_seed, 0),
    },
    "evaluate": {
        "grid_step": (float, 0.1),
        "seed": (_parse_seed, 0),
    },
    "compare": {
        "reference": (lambda v: v, None),
        "seed": (_parse_seed, 0),
    },
}

# config keys whose argparse attribute differs from the key name
ARG_ALIASES = {"lambda": "lam"}


def _read_config_file(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"{path}: line {line_no} is not key=value")
            pairs.append((key.strip().replace("-", "_"), value.strip()))
    return pairs


def _effective_config(command, args):
    registry = OPTION_REGISTRY[command]
    cfg = {key: default for key, (_, default) in registry.items()}
    if args.config:
        for key, raw in _read_config_file(args.config):
            if key not in registry:
                raise DataError(f"{args.config}: unknown config key {key!r}")
            cfg[key] = registry[key][0](raw)
    for key in registry:
        flag = getattr(args, ARG_ALIASES.get(key, key), None)
        if flag is not None:
            cfg[key] = registry[key][0](flag)
    return cfg


def _write_run_config(cfg, out_dir, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    items = dict(cfg)
    items.update(extra or {})
    with open(os.path.join(out_dir, "run_config.txt"), "w", encoding="utf-8") as fh:
        for key in sorted(items):
            fh.write(f"{key}={_fmt_value(items[key])}\n")


def _read_phase_file(path, delimiter="\t"):
    ids, phases, outliers = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("sample_id"):
                continue
            fields = line.split(delimiter)
            if len(fields) < 2:
                raise DataError(f"{path}: line {line_no} needs sample_id and phase")
            ids.append(fields[0])
            phases.append(float(fields[1]))
            outliers.append(len(fields) > 3 and fields[3] == "1")
    if not ids:
        raise DataError(f"{path}: no phase rows found")
    return ids, np.array(phases), np.array(outliers, dtype=bool)


def _thresholds_from(cfg):
    if cfg["period"] == 12.0:
        thresholds = RhythmThresholds.ultradian()
    elif cfg["period"] == 24.0:
        thresholds = RhythmThresholds()
    else:
        thresholds = dataclasses.replace(
            RhythmThresholds(), period_hours=cfg["period"]
        )
    overrides = {}
    if cfg["q_threshold"] is not None:
        overrides["q_max"] = cfg["q_threshold"]
    if cfg["ramp_threshold"] is not None:
        overrides["ramp_min"] = cfg["ramp_threshold"]
    if cfg["r2_threshold"] is not None:
        overrides["r2_min"] = cfg["r2_threshold"]
    return dataclasses.replace(thresholds, **overrides) if overrides else thresholds


def _threshold_comment(t):
    return (
        f"thresholds: q<{t.q_max:g} rAmp>={t.ramp_min:g} "
        f"R2>={t.r2_min:g} period={t.period_hours:g}h"
    )


def cmd_simulate(args):
    cfg = _effective_config("simulate", args)
    seed = cfg["seed"]
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**31))
        print(f"seed: {seed}")
    spec = SynthSpec(
        m=cfg["m"],
        n=cfg["n"],
        rhythmic_fraction=cfg["rhythmic_fraction"],
        period_mix=cfg["period_mix"],
        amplitude_range=cfg["amplitude"],
        mesor_range=cfg["mesor"],
        noise_sd=cfg["noise_sd"],
        phase_sampling=cfg["phase_sampling"],
        noise_kind=cfg["noise_kind"],
        missing_fraction=cfg["missing_fraction"],
        seed=seed,
    )
    matrix, truth = generate(spec)
    out = args.out_dir
    _write_run_config(cfg, out, extra={"seed": seed})
    write_matrix(matrix, os.path.join(out, "matrix.tsv"), args.delimiter)
    write_labels(matrix, os.path.join(out, "labels.tsv"), args.delimiter)
    write_truth(matrix, truth, os.path.join(out, "truth.tsv"), args.delimiter)
    if args.verbose:
        print(f"wrote {matrix.n_samples} samples x {matrix.n_proteins} proteins to {out}")
    return 0


def cmd_predict(args):
    cfg = _effective_config("predict", args)
    matrix = load_matrix(args.matrix, args.delimiter,
                         proteins_as_rows=cfg["proteins_as_rows"])
    policy = MissingnessPolicy(cfg["max_missing"], cfg["impute"])
    matrix = apply_missingness(matrix, policy)
    data = zscore(matrix)
    if cfg["feature_selection"] != "none" and cfg["target_n"] < data.n_proteins:
        data = select_features(data, cfg["feature_selection"], cfg["target_n"],
                               seed=cfg["seed"])

    options = None
    if cfg["learning_rate"] is not None:
        options = {"learning_rate": cfg["learning_rate"]}
    pipeline_cfg = PipelineConfig(
        finetune_epochs=cfg["epochs"],
        retrain_epochs=cfg["retrain_epochs"],
        optimizer=cfg["optimizer"],
        optimizer_options=options,
        q_norm=cfg["q_norm"],
        lam=cfg["lambda"],
        regularizer=cfg["regularizer"],
        learn_omega=cfg["learn_omega"],
        outlier_stat=cfg["outlier_stat"],
        retrain_from=cfg["retrain_from"],
    )
    result = run_pipeline(data, pipeline_cfg, seed=cfg["seed"])

    out = args.out_dir
    _write_run_config(cfg, out)
    write_phases(result, data.sample_ids, os.path.join(out, "phases.tsv"),
                 args.delimiter)
    write_rhythm_table(result.calls, os.path.join(out, "rhythm.tsv"),
                       args.delimiter,
                       header_comments=[_threshold_comment(pipeline_cfg.thresholds)])
    _write_outlier_report(result.outliers, os.path.join(out, "outliers.tsv"),
                          args.delimiter)
    _write_diagnostics(result, os.path.join(out, "diagnostics.txt"))
    if cfg["emit_normalized"]:
        write_matrix(data, os.path.join(out, "normalized.tsv"), args.delimiter)
    if cfg["emit_residuals"]:
        _write_residuals(result.diagnostics["screen_residuals"], data,
                         os.path.join(out, "residuals.tsv"), args.delimiter)
    if args.verbose:
        flagged = int(result.sample_outlier_flags.sum())
        n_rhythmic = sum(1 for c in result.calls if c.rhythmic)
        print(f"phases for {len(data.sample_ids)} samples "
              f"({flagged} flagged); {n_rhythmic} rhythmic proteins")
    return 0


def _write_outlier_report(report, path, delimiter):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["kind", "id", "mean_residual"]) + "\n")
        for sid, value in report.sample_outliers:
            fh.write(delimiter.join(["sample", str(sid), format(value, ".10g")]) + "\n")
        for pid, value in report.protein_outliers:
            fh.write(delimiter.join(["protein", str(pid), format(value, ".10g")]) + "\n")


def _write_diagnostics(result, path):
    diag = result.diagnostics
    report = result.outliers
    lines = [
        f"kernel_backend: {BACKEND}",
        f"seed: {diag['seed']}",
        f"statistic: {report.statistic}",
        f"sample_mean: {report.sample_stats[0]:.10g}",
        f"sample_sd: {report.sample_stats[1]:.10g}",
        f"sample_floor: {report.sample_floor:.10g}",
        f"protein_mean: {report.protein_stats[0]:.10g}",
        f"protein_sd: {report.protein_stats[1]:.10g}",
        f"amplitude_75th_percentile: {report.amplitude_75th_percentile:.10g}",
        f"n_sample_outliers: {len(report.sample_outliers)}",
        f"n_protein_outliers: {len(report.protein_outliers)}",
    ]
    for stage, history in zip(("finetune", "retrain"), diag["finetune_losses"]):
        lines.append(f"{stage}_loss_first: {history[0]:.10g}")
        lines.append(f"{stage}_loss_last: {history[-1]:.10g}")
    if "dead_code_cells" in diag:
        lines.append(f"dead_code_cells: {diag['dead_code_cells']}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_residuals(residuals, data, path, delimiter):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["sample_id"] + list(data.protein_ids)) + "\n")
        for sid, row in zip(data.sample_ids, residuals):
            cells = [format(v, ".10g") for v in row]
            fh.write(delimiter.join([sid] + cells) + "\n")


def cmd_rhythm(args):
    cfg = _effective_config("rhythm", args)
    matrix = load_matrix(args.matrix, args.delimiter,
                         proteins_as_rows=cfg["proteins_as_rows"])
    ids, phases, _ = _read_phase_file(args.phases, args.delimiter)
    if set(ids) != set(matrix.sample_ids):
        missing = sorted(set(matrix.sample_ids) - set(ids))
        extra = sorted(set(ids) - set(matrix.sample_ids))
        raise DataError(
            f"phase file does not match matrix samples "
            f"(missing: {','.join(missing) or '-'}; extra: {','.join(extra) or '-'})"
        )
    order = {sid: k for k, sid in enumerate(ids)}
    phases = phases[[order[sid] for sid in matrix.sample_ids]]

    data = zscore(matrix)
    thresholds = _thresholds_from(cfg)
    calls = call_rhythms(data, phases, thresholds, cfg["ramp_scale"])
    if cfg["reference"]:
        calls = align_acrophases(calls, cfg["reference"])

    out = args.out_dir
    _write_run_config(cfg, out)
    write_rhythm_table(calls, os.path.join(out, "rhythm.tsv"), args.delimiter,
                       header_comments=[_threshold_comment(thresholds)])
    write_histogram(acrophase_histogram(calls),
                    os.path.join(out, "rose.tsv"), args.delimiter)
    if args.verbose:
        print(f"{sum(1 for c in calls if c.rhythmic)} of {len(calls)} proteins rhythmic")
    return 0


def cmd_evaluate(args):
    cfg = _effective_config("evaluate", args)
    ids, phases, _ = _read_phase_file(args.phases, args.delimiter)
    labels = load_labels(args.labels)
    unlabeled = [sid for sid in ids if sid not in labels]
    if unlabeled:
        raise DataError(f"unlabeled samples: {','.join(unlabeled)}")
    truth = np.array([labels[sid] for sid in ids])

    aligned = align(phases, truth)
    curve = roc(aligned, cfg["grid_step"])
    calls = None
    if args.rhythm_table:
        calls = read_rhythm_table(args.rhythm_table, args.delimiter)
    _write_run_config(cfg, args.out_dir)
    emit_reports(aligned, curve, calls, args.out_dir, plots=args.plots,
                 delimiter=args.delimiter)
    if args.verbose:
        print(f"nauc: {curve.nauc:.4f} over {len(ids)} samples")
    return 0


def cmd_compare(args):
    cfg = _effective_config("compare", args)
    calls_a = read_rhythm_table(args.table_a, args.delimiter)
    calls_b = read_rhythm_table(args.table_b, args.delimiter)
    common = {c.protein_id for c in calls_a} & {c.protein_id for c in calls_b}
    if not common:
        raise DataError("rhythm tables share no proteins")
    calls_a = [c for c in calls_a if c.protein_id in common]
    calls_b = [c for c in calls_b if c.protein_id in common]

    rhythmic_a = {c.protein_id for c in calls_a if c.rhythmic}
    rhythmic_b = {c.protein_id for c in calls_b if c.rhythmic}
    both = rhythmic_a & rhythmic_b
    only_a = rhythmic_a - rhythmic_b
    only_b = rhythmic_b - rhythmic_a

    q_a = {c.protein_id: c.q_value for c in calls_a}
    q_b = {c.protein_id: c.q_value for c in calls_b}
    ranked = sorted(only_a, key=lambda pid: (q_a[pid], -q_b[pid], pid))

    if cfg["reference"]:
        calls_a = align_acrophases(calls_a, cfg["reference"])
        calls_b = align_acrophases(calls_b, cfg["reference"])

    out = args.out_dir
    _write_run_config(cfg, out)
    with open(os.path.join(out, "overlap.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"shared_proteins: {len(common)}\n")
        fh.write(f"rhythmic_a_only: {len(only_a)}\n")
        fh.write(f"rhythmic_b_only: {len(only_b)}\n")
        fh.write(f"rhythmic_both: {len(both)}\n")
        fh.write("a_specific:\n")
        for pid in ranked:
            fh.write(f"{pid}\tq_a={q_a[pid]:.6g}\tq_b={q_b[pid]:.6g}\n")
    write_histogram(acrophase_histogram(calls_a),
                    os.path.join(out, "rose_a.tsv"), args.delimiter)
    write_histogram(acrophase_histogram(calls_b),
                    os.path.join(out, "rose_b.tsv"), args.delimiter)
    if args.verbose:
        print(f"A-only {len(only_a)}, B-only {len(only_b)}, both {len(both)}")
    return 0


def _add_common(sub):
    sub.add_argument("--seed", default=None, help="root random seed")
    sub.add_argument("--config", default=None, help="key=value settings file")
    sub.add_argument("--out-dir", default="chrononet_out")
    sub.add_argument("--delimiter", default="\t")
    sub.add_argument("--plots", action="store_true")
    sub.add_argument("--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chrononet",
        description="Unsupervised circadian phase prediction from proteomic matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic labeled matrix")
    _add_common(p)
    p.add_argument("--m", type=int, default=None, help="number of samples")
    p.add_argument("--n", type=int, default=None, help="number of proteins")
    p.add_argument("--rhythmic-fraction", type=float, default=None)
    p.add_argument("--amplitude", default=None, help="range, e.g. 0.5..1.5")
    p.add_argument("--mesor", default=None, help="range, e.g. 4..8")
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--noise-kind", choices=("gaussian", "student_t"), default=None)
    p.add_argument("--phase-sampling", choices=("uniform", "clustered"), default=None)
    p.add_argument("--period-mix", default=None, help="e.g. 24:0.8,12:0.2")
    p.add_argument("--missing-fraction", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="predict per-sample phases")
    _add_common(p)
    p.add_argument("matrix", help="expression matrix TSV")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--retrain-epochs", type=int, default=None)
    p.add_argument("--optimizer", choices=("sgd", "adam", "dadapt"), default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--q-norm", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--regularizer", choices=("none", "l1", "l2", "tv"), default=None)
    p.add_argument("--learn-omega", action="store_const", const=True, default=None)
    p.add_argument("--outlier-stat", choices=("signed", "absolute"), default=None)
    p.add_argument("--retrain-from", choices=("scratch", "checkpoint"), default=None)
    p.add_argument("--max-missing", type=float, default=None)
    p.add_argument("--no-impute", dest="impute", action="store_const",
                   const=False, default=None)
    p.add_argument("--feature-selection",
                   choices=("none", "top_variance", "kmeans_cluster"), default=None)
    p.add_argument("--target-n", type=int, default=None)
    p.add_argument("--proteins-as-rows", action="store_const", const=True,
                   default=None)
    p.add_argument("--emit-normalized", action="store_const", const=True,
                   default=None)
    p.add_argument("--emit-residuals", action="store_const", const=True,
                   default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rhythm", help="cosinor rhythmicity calls at given phases")
    _add_common(p)
    p.add_argument("matrix")
    p.add_argument("phases", help="phase TSV from predict")
    p.add_argument("--period", type=float, default=None,
                   help="rhythm period in hours; 12 enables the ultradian scan")
    p.add_argument("--q-threshold", type=float, default=None)
    p.add_argument("--ramp-threshold", type=float, default=None)
    p.add_argument("--r2-threshold", type=float, default=None)
    p.add_argument("--ramp-scale", choices=("raw", "normalized"), default=None)
    p.add_argument("--reference", default=None,
                   help="protein whose acrophase anchors 0")
    p.add_argument("--proteins-as-rows", action="store_const", const=True,
                   default=None)
    p.set_defaults(func=cmd_rhythm)

    p = sub.add_parser("evaluate", help="score predicted phases against labels")
    _add_common(p)
    p.add_argument("phases")
    p.add_argument("labels")
    p.add_argument("--rhythm-table", default=None,
                   help="optional rhythm table for the rose histogram")
    p.add_argument("--grid-step", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="overlap of two rhythm tables")
    _add_common(p)
    p.add_argument("table_a")
    p.add_argument("table_b")
    p.add_argument("--reference", default=None)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
