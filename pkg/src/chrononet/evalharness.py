"""Accuracy harness for phase predictions against known collection times.

Unsupervised phase estimates live on a circle with no preferred zero or
direction, so every comparison first aligns the predictions to the labels
over orientation {+1,-1} and a circular shift, then scores the aligned
errors with an error-tolerance curve and its normalized area (nAUC).
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from .cosinor import acrophase_histogram, write_histogram

TWO_PI = 2.0 * math.pi

HOURS = 24.0
HALF = 12.0

# coarse-to-fine shift search resolution, in hours
COARSE_STEP = 0.05
FINE_STEP = 0.001

# slack when counting "error <= tolerance" so exact recoveries land in the
# zero-tolerance bucket; a microhour covers both float dust and the ~1e-9 h
# quantization of phases that round-trip through ten-digit text files
ROC_EPS = 1e-6


@dataclass
class AlignedPrediction:
    predicted_hours: np.ndarray  # aligned into truth space, [0,24)
    truth_hours: np.ndarray
    orientation: int  # +1 or -1
    shift_hours: float  # [0,24): predicted ~ orientation*truth + shift
    per_sample_error_hours: np.ndarray  # [0,12]


@dataclass
class RocCurve:
    error_grid_hours: np.ndarray
    fraction_correct: np.ndarray
    nauc: float


def circular_error(a_hours, b_hours):
    """Wraparound distance on the 24 h circle, in [0,12]."""
    a = np.asarray(a_hours, dtype=float)
    b = np.asarray(b_hours, dtype=float)
    if np.any((a < 0) | (a >= HOURS)) or np.any((b < 0) | (b >= HOURS)):
        raise ValueError("hours must lie in [0,24)")
    d = np.abs(a - b)
    return np.minimum(d, HOURS - d)


def _wrap_hours(x):
    """x mod 24, folding the boundary: (-1e-17) % 24 rounds to exactly 24.0."""
    wrapped = np.mod(x, HOURS)
    return np.where(wrapped >= HOURS, 0.0, wrapped)


def _mean_error_for_shifts(pred, target, shifts):
    """Mean circular error of pred vs target+shift for every shift (vector)."""
    d = np.abs(pred[None, :] - _wrap_hours(target[None, :] + shifts[:, None]))
    return np.minimum(d, HOURS - d).mean(axis=1)


def align(predicted_phases, truth_hours):
    """Best rotation/reflection of the predictions onto the labels.

    The search minimizes mean circular error over orientation and a 0.05 h
    shift grid, then refines the winning shift to 0.001 h. The reported
    convention is predicted ~ orientation * truth + shift, and
    ``predicted_hours`` comes back mapped into truth space so a scatter
    against the labels clusters on the diagonal.
    """
    pred = HOURS * np.asarray(predicted_phases, dtype=float) / TWO_PI
    truth = np.asarray(truth_hours, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError("predictions and labels must be matching 1-d vectors")
    if pred.size < 3:
        raise ValueError(f"need at least 3 labeled samples, got {pred.size}")
    pred = pred % HOURS

    best = None
    coarse = np.arange(0.0, HOURS, COARSE_STEP)
    for orientation in (1, -1):
        target = _wrap_hours(orientation * truth)
        means = _mean_error_for_shifts(pred, target, coarse)
        k = int(np.argmin(means))
        fine = coarse[k] + np.arange(-COARSE_STEP, COARSE_STEP + FINE_STEP / 2,
                                     FINE_STEP)
        means = _mean_error_for_shifts(pred, target, fine)
        k = int(np.argmin(means))
        if best is None or means[k] < best[0]:
            best = (means[k], orientation, fine[k] % HOURS)

    _, orientation, shift = best
    aligned = _wrap_hours(orientation * (pred - shift))
    errors = circular_error(aligned, truth)
    return AlignedPrediction(aligned, truth, orientation, float(shift), errors)


def roc(aligned, grid_step_hours=0.1):
    """Fraction of samples within each error tolerance, and its nAUC."""
    if grid_step_hours <= 0 or grid_step_hours > HALF:
        raise ValueError(f"grid step must be in (0,12], got {grid_step_hours}")
    errors = aligned.per_sample_error_hours
    n_steps = int(round(HALF / grid_step_hours))
    grid = np.linspace(0.0, HALF, n_steps + 1)
    fraction = np.array([(errors <= e + ROC_EPS).mean() for e in grid])
    nauc = float(np.trapezoid(fraction, grid) / HALF)
    return RocCurve(grid, fraction, nauc)


def pca_angle_baseline(values):
    """Weak comparator: sample phases from the angle of the first two PCs."""
    x = np.asarray(values, dtype=float)
    x = x - x.mean(axis=0)
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    scores = u[:, :2] * s[:2]
    return np.arctan2(scores[:, 1], scores[:, 0]) % TWO_PI


def _fmt(v):
    return format(v, ".10g")


def emit_reports(aligned, curve, calls, out_dir, outliers=None, plots=False,
                 delimiter="\t"):
    """Write roc.tsv, scatter.tsv, rose.tsv and summary.txt under out_dir."""
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "roc.tsv"), "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["error_hours", "fraction"]) + "\n")
        for e, f in zip(curve.error_grid_hours, curve.fraction_correct):
            fh.write(delimiter.join([_fmt(e), _fmt(f)]) + "\n")

    with open(os.path.join(out_dir, "scatter.tsv"), "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["truth_hours", "predicted_hours_aligned"]) + "\n")
        for t, p in zip(aligned.truth_hours, aligned.predicted_hours):
            fh.write(delimiter.join([_fmt(t), _fmt(p)]) + "\n")

    counts = acrophase_histogram(calls) if calls else np.zeros(8, dtype=int)
    write_histogram(counts, os.path.join(out_dir, "rose.tsv"), delimiter)

    n_rhythmic = sum(1 for c in calls if c.rhythmic) if calls else 0
    lines = [
        f"nauc: {curve.nauc:.4f}",
        f"median_error_hours: {np.median(aligned.per_sample_error_hours):.4f}",
        f"mean_error_hours: {aligned.per_sample_error_hours.mean():.4f}",
        f"n_samples: {aligned.truth_hours.size}",
        f"orientation: {aligned.orientation:+d}",
        f"shift_hours: {aligned.shift_hours:.3f}",
        f"n_proteins_called: {len(calls) if calls else 0}",
        f"n_rhythmic: {n_rhythmic}",
    ]
    if outliers is not None:
        lines.append(f"sample_outliers: {len(outliers.sample_outliers)}")
        lines.append(f"protein_outliers: {len(outliers.protein_outliers)}")
    with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    if plots:
        _render_plots(aligned, curve, counts, out_dir)


def _render_plots(aligned, curve, rose_counts, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(curve.error_grid_hours, curve.fraction_correct, lw=1.5)
    ax.set_xlabel("error tolerance (h)")
    ax.set_ylabel("fraction correct")
    ax.set_title(f"nAUC = {curve.nauc:.4f}")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "roc.svg"), metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(3.5, 3.5))
    ax.scatter(aligned.truth_hours, aligned.predicted_hours, s=12)
    for offset in (-HOURS, 0.0, HOURS):  # wraparound diagonals
        ax.plot([0, HOURS], [offset, offset + HOURS], "k--", lw=0.6)
    ax.set_xlim(0, HOURS)
    ax.set_ylim(0, HOURS)
    ax.set_xlabel("collection time (h)")
    ax.set_ylabel("predicted phase (h)")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "scatter.svg"), metadata={"Date": None})
    plt.close(fig)

    n_bins = len(rose_counts)
    theta = np.linspace(0, TWO_PI, n_bins, endpoint=False)
    fig = plt.figure(figsize=(3.5, 3.5))
    ax = fig.add_subplot(projection="polar")
    ax.bar(theta, rose_counts, width=TWO_PI / n_bins, align="edge")
    ax.set_title("rhythmic acrophases")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "rose.svg"), metadata={"Date": None})
    plt.close(fig)
