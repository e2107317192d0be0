"""Single-component cosinor regression per protein.

The model is x = L + A*cos(omega*phase + phi). Linearizing against
(1, cos(omega*phase), sin(omega*phase)) makes the fit closed-form ordinary
least squares; significance comes from the F-test against the mesor-only
model, corrected across proteins with Benjamini-Hochberg.
"""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import stats

TWO_PI = 2.0 * math.pi

# rAmp divides amplitude by |mesor|; floor the divisor so z-scored proteins
# (mesor ~ 0) cannot blow up to inf
MESOR_FLOOR = 1e-6


@dataclass
class CosinorParams:
    """mesor L, amplitude A >= 0, acrophase phi in [0,2pi), omega in cycles/day."""

    mesor: float
    amplitude: float
    acrophase: float
    omega: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        if not 0.0 <= self.acrophase < TWO_PI:
            raise ValueError(f"acrophase must lie in [0, 2pi), got {self.acrophase}")
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")

    @property
    def period_hours(self):
        return 24.0 / self.omega

    @property
    def peak_time_hours(self):
        return 24.0 * ((-self.acrophase / self.omega) % TWO_PI) / TWO_PI


class CosinorFit(NamedTuple):
    params: CosinorParams
    r_squared: float
    p_value: float
    degenerate: bool = False


@dataclass
class RhythmThresholds:
    q_max: float = 0.05
    ramp_min: float = 0.1
    r2_min: float = 0.1
    period_hours: float = 24.0

    def __post_init__(self):
        if not (0 < self.q_max <= 1):
            raise ValueError(f"q_max must be in (0,1], got {self.q_max}")
        if self.ramp_min <= 0 or self.r2_min <= 0 or self.period_hours <= 0:
            raise ValueError("ramp_min, r2_min and period_hours must be positive")

    @classmethod
    def ultradian(cls):
        """Stringent 12 h scan settings."""
        return cls(q_max=5e-4, ramp_min=0.2, r2_min=0.6, period_hours=12.0)


@dataclass
class RhythmCall:
    protein_id: str
    params: CosinorParams
    p_value: float
    q_value: float
    r_squared: float
    r_amp: float
    rhythmic: bool


def _wrap(phi):
    phi = phi % TWO_PI
    return 0.0 if phi >= TWO_PI else phi


def fit_cosinor_batch(values, phases, omega=1.0):
    """Fit every column of an m x n matrix against shared phases.

    Returns (L, A, phi, r_squared, p_value, degenerate) as length-n arrays
    (degenerate is a bool array). A single rank-deficient design, e.g. all
    phases equal modulo the period, degenerates every column.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"expected an m x n matrix, got ndim={values.ndim}")
    phases = np.asarray(phases, dtype=float)
    m = phases.size
    if values.shape[0] != m:
        raise ValueError(f"values rows {values.shape[0]} != phases length {m}")
    if m < 4:
        raise ValueError(f"cosinor fit needs at least 4 samples, got {m}")
    if np.any((phases < 0) | (phases >= TWO_PI)):
        raise ValueError("phases must lie in [0, 2pi)")
    n = values.shape[1]
    theta = omega * phases
    design = np.column_stack([np.ones(m), np.cos(theta), np.sin(theta)])
    beta, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
    if rank < 3:
        return (
            values.mean(axis=0),
            np.zeros(n),
            np.zeros(n),
            np.zeros(n),
            np.ones(n),
            np.ones(n, dtype=bool),
        )
    fitted = design @ beta
    sse = ((values - fitted) ** 2).sum(axis=0)
    sst = ((values - values.mean(axis=0)) ** 2).sum(axis=0)
    L = beta[0].copy()
    A = np.hypot(beta[1], beta[2])
    phi = np.arctan2(-beta[2], beta[1]) % TWO_PI
    phi[phi >= TWO_PI] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(sst > 0, 1.0 - sse / sst, 0.0)
        f_stat = ((sst - sse) / 2.0) / (sse / (m - 3))
    f_stat = np.where(sse > 0, np.maximum(f_stat, 0.0), np.inf)
    p = stats.f.sf(f_stat, 2, m - 3)
    # exactly constant columns: the null model, stated as such
    flat = values.max(axis=0) == values.min(axis=0)
    if flat.any():
        L[flat] = values[0, flat]
        A[flat] = 0.0
        phi[flat] = 0.0
        r2[flat] = 0.0
        p[flat] = 1.0
    return L, A, phi, r2, p, np.zeros(n, dtype=bool)


def fit_cosinor(values, phases, omega=1.0):
    """Single-protein cosinor fit; see fit_cosinor_batch for conventions."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("fit_cosinor expects a 1-d value vector")
    L, A, phi, r2, p, degen = fit_cosinor_batch(values[:, None], phases, omega)
    params = CosinorParams(float(L[0]), float(A[0]), float(phi[0]), omega)
    return CosinorFit(params, float(r2[0]), float(p[0]), bool(degen[0]))


def benjamini_hochberg(p_values):
    """BH step-up q-values: q_(i) = min_{j>=i} p_(j)*N/j, clipped to 1."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    n = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * n / np.arange(1, n + 1)
    q_sorted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    q = np.empty(n)
    q[order] = q_sorted
    return q


def call_rhythms(data, phases, thresholds=None, ramp_scale="raw"):
    """Fit all proteins, BH-correct, and flag rhythmic ones.

    ``ramp_scale`` picks the scale for rAmp = A/|L|: "raw" back-transforms to
    the pre-normalization abundance scale through the matrix's stored
    per-protein mean/std (default, since mesors of z-scored data sit at 0),
    "normalized" uses the fitted values directly.
    """
    thresholds = thresholds or RhythmThresholds()
    omega = 24.0 / thresholds.period_hours
    L, A, phi, r2, p, degen = fit_cosinor_batch(data.values, phases, omega)
    q = benjamini_hochberg(p)
    if ramp_scale == "raw":
        amp_for_ramp = data.raw_std * A
        mesor_for_ramp = data.raw_std * L + data.raw_mean
    elif ramp_scale == "normalized":
        amp_for_ramp, mesor_for_ramp = A, L
    else:
        raise ValueError(f"ramp_scale must be 'raw' or 'normalized', got {ramp_scale!r}")
    r_amp = amp_for_ramp / np.maximum(np.abs(mesor_for_ramp), MESOR_FLOOR)
    rhythmic = (
        (q < thresholds.q_max)
        & (r_amp >= thresholds.ramp_min)
        & (r2 >= thresholds.r2_min)
        & ~degen
    )
    calls = []
    for j, pid in enumerate(data.protein_ids):
        params = CosinorParams(float(L[j]), float(A[j]), float(phi[j]), omega)
        calls.append(
            RhythmCall(
                pid, params, float(p[j]), float(q[j]), float(r2[j]),
                float(r_amp[j]), bool(rhythmic[j]),
            )
        )
    return calls


def align_acrophases(calls, reference_protein):
    """Shift every acrophase by -phi_ref (mod 2pi) so the reference sits at 0."""
    ref = next((c for c in calls if c.protein_id == reference_protein), None)
    if ref is None:
        raise ValueError(f"reference protein {reference_protein!r} not in rhythm calls")
    if not ref.rhythmic:
        raise ValueError(f"reference protein {reference_protein!r} is not rhythmic")
    shift = ref.params.acrophase
    out = []
    for c in calls:
        params = replace(c.params, acrophase=_wrap(c.params.acrophase - shift))
        out.append(replace(c, params=params))
    return out


def acrophase_histogram(calls, n_bins=8):
    """Counts of rhythmic proteins per equal angular bin over [0, 2pi)."""
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    phis = [c.params.acrophase for c in calls if c.rhythmic]
    counts, _ = np.histogram(phis, bins=np.linspace(0.0, TWO_PI, n_bins + 1))
    return counts


RHYTHM_COLUMNS = [
    "protein_id", "mesor", "amplitude", "acrophase_rad", "peak_time_hours",
    "period_hours", "p_value", "q_value", "r_squared", "r_amp", "rhythmic",
]


def _fmt(v):
    return format(v, ".10g")


def write_rhythm_table(calls, path, delimiter="\t", header_comments=None):
    with open(path, "w", encoding="utf-8") as fh:
        for comment in header_comments or []:
            fh.write(f"# {comment}\n")
        fh.write(delimiter.join(RHYTHM_COLUMNS) + "\n")
        for c in calls:
            row = [
                c.protein_id,
                _fmt(c.params.mesor),
                _fmt(c.params.amplitude),
                _fmt(c.params.acrophase),
                _fmt(c.params.peak_time_hours),
                _fmt(c.params.period_hours),
                _fmt(c.p_value),
                _fmt(c.q_value),
                _fmt(c.r_squared),
                _fmt(c.r_amp),
                "1" if c.rhythmic else "0",
            ]
            fh.write(delimiter.join(row) + "\n")


def read_rhythm_table(path, delimiter="\t"):
    """Parse a rhythm table written by write_rhythm_table back into calls."""
    calls = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split(delimiter)
            if fields[0] == "protein_id":
                if fields != RHYTHM_COLUMNS:
                    raise ValueError(f"{path}: unexpected columns {fields}")
                continue
            if len(fields) != len(RHYTHM_COLUMNS):
                raise ValueError(
                    f"{path}: line {line_no} has {len(fields)} fields, "
                    f"expected {len(RHYTHM_COLUMNS)}"
                )
            period = float(fields[5])
            params = CosinorParams(
                float(fields[1]), float(fields[2]), float(fields[3]),
                24.0 / period,
            )
            calls.append(
                RhythmCall(
                    fields[0], params, float(fields[6]), float(fields[7]),
                    float(fields[8]), float(fields[9]), fields[10] == "1",
                )
            )
    return calls


def write_histogram(counts, path, delimiter="\t"):
    n_bins = len(counts)
    width = 360.0 / n_bins
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["bin_start_deg", "bin_end_deg", "count"]) + "\n")
        for k, count in enumerate(counts):
            fh.write(
                delimiter.join([_fmt(k * width), _fmt((k + 1) * width), str(int(count))])
                + "\n"
            )
