"""Synthetic proteome generator with planted rhythms and known ground truth.

Rhythmic columns follow x = L + A*cos(2*pi*t/T + phi) plus noise; the rest
are mesor plus noise. Everything is a deterministic function of the seed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .cosinor import CosinorParams
from .dataio import ExpressionMatrix

TWO_PI = 2.0 * math.pi

# collection-time bumps for the clustered sampling mode (hours)
CLUSTER_CENTERS = (6.0, 18.0)
CLUSTER_KAPPA = 4.0


@dataclass
class SynthSpec:
    m: int = 24
    n: int = 400
    rhythmic_fraction: float = 0.4
    period_mix: dict = field(default_factory=lambda: {24.0: 1.0})
    amplitude_range: tuple = (0.5, 1.5)
    mesor_range: tuple = (4.0, 8.0)
    noise_sd: float = 0.4
    phase_sampling: str = "uniform"
    noise_kind: str = "gaussian"
    missing_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ValueError(f"need m >= 2 and n >= 2, got m={self.m}, n={self.n}")
        if not 0.0 <= self.rhythmic_fraction <= 1.0:
            raise ValueError(f"rhythmic_fraction out of [0,1]: {self.rhythmic_fraction}")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError(f"missing_fraction out of [0,1): {self.missing_fraction}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        for name, (lo, hi) in (
            ("amplitude_range", self.amplitude_range),
            ("mesor_range", self.mesor_range),
        ):
            if lo > hi:
                raise ValueError(f"{name} is not ordered: ({lo}, {hi})")
        if self.amplitude_range[0] < 0:
            raise ValueError("amplitudes must be >= 0")
        if self.phase_sampling not in ("uniform", "clustered"):
            raise ValueError(f"unknown phase_sampling {self.phase_sampling!r}")
        if self.noise_kind not in ("gaussian", "student_t"):
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")
        if not self.period_mix:
            raise ValueError("period_mix must not be empty")
        total = sum(self.period_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"period_mix fractions must sum to 1, got {total}")
        if any(t <= 0 for t in self.period_mix):
            raise ValueError("periods must be positive")


@dataclass
class SynthTruth:
    sample_hours: np.ndarray
    params: list
    rhythmic: np.ndarray


def _period_counts(period_mix, n_rhythmic):
    """Largest-remainder apportionment of rhythmic proteins across periods."""
    periods = sorted(period_mix)
    raw = [period_mix[t] * n_rhythmic for t in periods]
    counts = [int(math.floor(r)) for r in raw]
    short = n_rhythmic - sum(counts)
    by_remainder = sorted(range(len(periods)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in by_remainder[:short]:
        counts[i] += 1
    return list(zip(periods, counts))


def _draw_hours(spec, rng):
    if spec.phase_sampling == "uniform":
        return rng.uniform(0.0, 24.0, size=spec.m)
    which = rng.integers(0, len(CLUSTER_CENTERS), size=spec.m)
    jitter = rng.vonmises(0.0, CLUSTER_KAPPA, size=spec.m)
    centers = np.array(CLUSTER_CENTERS)[which] * TWO_PI / 24.0
    return ((centers + jitter) % TWO_PI) * 24.0 / TWO_PI


def generate(spec):
    """Build (ExpressionMatrix with hour_labels, SynthTruth) from a SynthSpec."""
    rng = np.random.default_rng(spec.seed)
    hours = _draw_hours(spec, rng)
    n_rhythmic = int(round(spec.rhythmic_fraction * spec.n))
    mesors = rng.uniform(*spec.mesor_range, size=spec.n)
    amplitudes = rng.uniform(*spec.amplitude_range, size=spec.n)
    acrophases = rng.uniform(0.0, TWO_PI, size=spec.n)
    if spec.noise_kind == "gaussian":
        noise = rng.normal(0.0, 1.0, size=(spec.m, spec.n))
    else:
        noise = rng.standard_t(3, size=(spec.m, spec.n))
    noise *= spec.noise_sd

    day_phase = TWO_PI * hours / 24.0
    omegas = np.ones(spec.n)
    pos = 0
    for period, count in _period_counts(spec.period_mix, n_rhythmic):
        omegas[pos : pos + count] = 24.0 / period
        pos += count

    values = np.empty((spec.m, spec.n))
    rhythmic = np.zeros(spec.n, dtype=bool)
    rhythmic[:n_rhythmic] = True
    values[:, :] = mesors + noise
    if n_rhythmic:
        r = slice(0, n_rhythmic)
        values[:, r] += amplitudes[r] * np.cos(
            np.outer(day_phase, omegas[r]) + acrophases[r]
        )

    if spec.missing_fraction > 0.0:
        mask = rng.random(size=(spec.m, spec.n)) < spec.missing_fraction
        values = np.where(mask, np.nan, values)

    width = max(4, len(str(spec.n)))
    protein_ids = [f"P{j + 1:0{width}d}" for j in range(spec.n)]
    sample_ids = [f"S{i + 1:03d}" for i in range(spec.m)]
    matrix = ExpressionMatrix(sample_ids, protein_ids, values, hours)

    params = []
    for j in range(spec.n):
        if rhythmic[j]:
            params.append(
                CosinorParams(
                    float(mesors[j]), float(amplitudes[j]), float(acrophases[j]),
                    float(omegas[j]),
                )
            )
        else:
            params.append(CosinorParams(float(mesors[j]), 0.0, 0.0, 1.0))
    return matrix, SynthTruth(hours, params, rhythmic)


def write_labels(matrix, path, delimiter="\t"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["sample_id", "hour"]) + "\n")
        for sid, hour in zip(matrix.sample_ids, matrix.hour_labels):
            fh.write(delimiter.join([sid, format(hour, ".10g")]) + "\n")


def write_truth(matrix, truth, path, delimiter="\t"):
    cols = ["protein_id", "rhythmic", "mesor", "amplitude", "acrophase_rad", "period_hours"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(cols) + "\n")
        for pid, params, flag in zip(matrix.protein_ids, truth.params, truth.rhythmic):
            fh.write(
                delimiter.join(
                    [
                        pid,
                        "1" if flag else "0",
                        format(params.mesor, ".10g"),
                        format(params.amplitude, ".10g"),
                        format(params.acrophase, ".10g"),
                        format(params.period_hours, ".10g"),
                    ]
                )
                + "\n"
            )
