"""Joint fine-tuning of the encoder and per-protein cosine models, the
two-level residual outlier screen, and the end-to-end pipeline.

The objective is mean |x - (L + A*cos(omega*phase + phi))|^q plus an optional
regularizer; sample phases come from the encoder's 2-unit code through
atan2, so gradients flow from every matrix cell back into the network.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._kernels import cosine_model_loss_grad, cosine_model_predict
from .cosinor import CosinorParams, RhythmThresholds, call_rhythms
from .dataio import DataError, ExpressionMatrix, zscore
from .pretrain import PretrainConfig, code_to_phases, initial_cosinor, pretrain_stack
from .tensornet import (
    TrainingError,
    backward,
    forward,
    grads_as_list,
    layer_params,
    make_optimizer,
)

TWO_PI = 2.0 * math.pi

REGULARIZERS = ("none", "l1", "l2", "tv")

# below this squared code norm the atan2 gradient is numerically unusable;
# such samples contribute zero phase gradient and bump a diagnostic counter
DEAD_CODE_SQ = 1e-12

OMEGA_BOUNDS = (0.5, 3.0)  # 8 h to 48 h periods when omega is learnable


@dataclass
class FineTuneModel:
    encoder: object  # EncoderStack
    mesor: np.ndarray
    amplitude: np.ndarray
    acrophase: np.ndarray
    omega: np.ndarray
    q_norm: float = 1.0
    lam: float = 0.0
    regularizer: str = "none"
    learn_omega: bool = False

    def __post_init__(self):
        for name in ("mesor", "amplitude", "acrophase", "omega"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.mesor.size
        if not (self.amplitude.size == self.acrophase.size == self.omega.size == n):
            raise ValueError("cosinor parameter vectors must share one length")
        if self.q_norm <= 0:
            raise ValueError(f"q_norm must be positive, got {self.q_norm}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")

    @classmethod
    def from_params(cls, encoder, params, **kwargs):
        """Build from a sequence of CosinorParams (the pretrain seeds)."""
        return cls(
            encoder,
            np.array([p.mesor for p in params]),
            np.array([p.amplitude for p in params]),
            np.array([p.acrophase for p in params]),
            np.array([p.omega for p in params]),
            **kwargs,
        )

    def cosinor_params(self):
        return [
            CosinorParams(
                float(self.mesor[j]), float(self.amplitude[j]),
                float(self.acrophase[j]), float(self.omega[j]),
            )
            for j in range(self.mesor.size)
        ]

    def trainable(self):
        params = layer_params(self.encoder.layers) + [
            self.mesor, self.amplitude, self.acrophase,
        ]
        if self.learn_omega:
            params.append(self.omega)
        return params


def predict_phases(model, data):
    """phi_i = atan2(s_i, c_i) mod 2pi from the encoder's 2-unit output."""
    return code_to_phases(model.encoder.encode(data.values))


def tv_regularizer(phases):
    """Total variation of the sorted phases: sum of consecutive gaps."""
    phases = np.asarray(phases, dtype=float)
    if phases.size < 2:
        raise ValueError("tv_regularizer needs at least 2 phases")
    return float(np.sum(np.abs(np.diff(np.sort(phases)))))


def _regularizer_value(model, phases):
    if model.lam == 0.0 or model.regularizer == "none":
        return 0.0
    if model.regularizer == "tv":
        return tv_regularizer(phases)
    total = 0.0
    for p in model.trainable():
        total += np.abs(p).sum() if model.regularizer == "l1" else (p * p).sum()
    return float(total)


def loss(model, data):
    """Objective value and the signed per-cell residual matrix (x - x_hat)."""
    acts = forward(model.encoder.layers, data.values)
    phases = code_to_phases(acts[-1])
    pred = cosine_model_predict(
        phases, model.mesor, model.amplitude, model.acrophase, model.omega
    )
    residuals = data.values - pred
    m, n = residuals.shape
    if model.q_norm == 1.0:
        data_term = float(np.abs(residuals).sum() / (m * n))
    else:
        data_term = float((np.abs(residuals) ** model.q_norm).sum() / (m * n))
    total = data_term + model.lam * _regularizer_value(model, phases)
    if not np.isfinite(total):
        raise TrainingError("fine-tune loss became non-finite")
    return total, residuals


def _loss_and_grads(model, data, diagnostics=None):
    """One full-batch evaluation: loss, parameter gradient list, phases."""
    acts = forward(model.encoder.layers, data.values)
    code = acts[-1]
    phases = code_to_phases(code)
    value, d_phases, d_mesor, d_amp, d_phi, d_omega = cosine_model_loss_grad(
        data.values, phases, model.mesor, model.amplitude, model.acrophase,
        model.omega, model.q_norm,
    )

    reg_grads = None
    if model.lam > 0.0 and model.regularizer != "none":
        if model.regularizer == "tv":
            value += model.lam * tv_regularizer(phases)
            # subgradient: sorted-gap sum telescopes to max - min
            d_phases = d_phases.copy()
            d_phases[int(np.argmax(phases))] += model.lam
            d_phases[int(np.argmin(phases))] -= model.lam
        else:
            reg_grads = []
            for p in model.trainable():
                if model.regularizer == "l1":
                    value += model.lam * float(np.abs(p).sum())
                    reg_grads.append(model.lam * np.sign(p))
                else:
                    value += model.lam * float((p * p).sum())
                    reg_grads.append(2.0 * model.lam * p)

    if not np.isfinite(value):
        raise TrainingError("fine-tune loss became non-finite")

    # atan2(s, c): d/ds = c/(s^2+c^2), d/dc = -s/(s^2+c^2)
    s, c = code[:, 0], code[:, 1]
    norm_sq = s * s + c * c
    dead = norm_sq < DEAD_CODE_SQ
    if dead.any() and diagnostics is not None:
        diagnostics["dead_code_cells"] = diagnostics.get("dead_code_cells", 0) + int(
            dead.sum()
        )
    safe = np.where(dead, 1.0, norm_sq)
    scale = np.where(dead, 0.0, d_phases / safe)
    d_code = np.column_stack([scale * c, -scale * s])

    net_grads = backward(model.encoder.layers, acts, d_code)
    grads = grads_as_list(net_grads) + [d_mesor, d_amp, d_phi]
    if model.learn_omega:
        grads.append(d_omega)
    if reg_grads is not None:
        grads = [g + r for g, r in zip(grads, reg_grads)]
    return value, grads, phases


def _reparameterize(model):
    """Keep A >= 0 and phi in [0,2pi); clamp omega when learnable."""
    neg = model.amplitude < 0.0
    if neg.any():
        model.amplitude[neg] = -model.amplitude[neg]
        model.acrophase[neg] += math.pi
    np.mod(model.acrophase, TWO_PI, out=model.acrophase)
    model.acrophase[model.acrophase >= TWO_PI] = 0.0
    if model.learn_omega:
        np.clip(model.omega, OMEGA_BOUNDS[0], OMEGA_BOUNDS[1], out=model.omega)


# Stage defaults for the joint fit. The objective carries a 1/(m*n) factor,
# so per-protein parameter gradients are at most ~1/n in magnitude; Adam's
# update size tracks the learning rate rather than the gradient scale, which
# lets 20 full-batch epochs actually reach the L1 geometry. The library-wide
# Adam default (0.001) would move each parameter by at most ~0.02 here.
FINETUNE_OPTIMIZER_DEFAULTS = {"adam": {"learning_rate": 0.05}}


def resolve_optimizer_options(optimizer, options):
    """None means "use the stage defaults for this optimizer"; {} means none."""
    if options is not None:
        return dict(options)
    return dict(FINETUNE_OPTIMIZER_DEFAULTS.get(optimizer, {}))


def finetune(model, data, epochs=20, optimizer="adam", optimizer_options=None,
             seed=0, diagnostics=None):
    """Joint full-batch descent on the objective for the given epochs.

    The recorded loss history holds the objective at each epoch's entry.
    Full-batch training is deterministic; ``seed`` is accepted for interface
    symmetry but draws nothing. On a non-finite loss the parameters are
    rolled back to the last finite-loss epoch before raising.
    """
    del seed
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    params = model.trainable()
    options = resolve_optimizer_options(optimizer, optimizer_options)
    opt = make_optimizer(optimizer, params, **options)
    history = []
    snapshot = [p.copy() for p in params]
    for _ in range(epochs):
        try:
            value, grads, _ = _loss_and_grads(model, data, diagnostics)
            history.append(value)
            opt.step(grads)
        except TrainingError:
            for p, saved in zip(params, snapshot):
                p[...] = saved
            raise
        _reparameterize(model)
        for p, saved in zip(params, snapshot):
            saved[...] = p
    return model, predict_phases(model, data), history


@dataclass
class OutlierReport:
    sample_outliers: list  # (sample_id, E_i)
    protein_outliers: list  # (protein_id, D_p)
    sample_stats: tuple  # (mean, sd) of E
    protein_stats: tuple  # (mean, sd) of D
    amplitude_75th_percentile: float
    sample_floor: float = 0.0
    statistic: str = "signed"

    @property
    def sample_ids(self):
        return [sid for sid, _ in self.sample_outliers]

    @property
    def protein_ids(self):
        return [pid for pid, _ in self.protein_outliers]


def screen_outliers(residuals, amplitudes, sample_ids=None, protein_ids=None,
                    statistic="signed", sample_floor_scale=4.0):
    """Two-level 2-sigma screen on residual means.

    E_i = per-sample mean residual, D_p = per-protein mean residual (signed
    by default; ``statistic="absolute"`` averages |residual| instead, which
    catches symmetric high-noise corruption the signed means wash out).
    Protein candidates are confirmed only when their fitted amplitude falls
    below the 75th percentile of all amplitudes, keeping genuinely rhythmic
    high-amplitude proteins out of the outlier set.

    Because each E_i averages n residuals, on clean data the E_i concentrate
    within ~sigma_r/sqrt(n) of zero, yet a spread-based cutoff alone always
    flags the extreme member of a small cohort eventually. Sample deviations
    must therefore also clear an absolute noise floor of
    ``sample_floor_scale * sigma_r / sqrt(n)`` (sigma_r = residual sd over the
    whole matrix), i.e. twice the 2-standard-error band of a mean of n
    residuals at the default scale. Any real corruption shifts E_i by orders
    of magnitude more than the floor; set ``sample_floor_scale=0`` for the
    bare spread-only rule. The protein side has no floor: its second
    amplitude screen plays that role.
    """
    residuals = np.asarray(residuals, dtype=float)
    amplitudes = np.asarray(amplitudes, dtype=float)
    m, n = residuals.shape
    if amplitudes.size != n:
        raise ValueError(f"{amplitudes.size} amplitudes for {n} proteins")
    if statistic == "signed":
        stat = residuals
    elif statistic == "absolute":
        stat = np.abs(residuals)
    else:
        raise ValueError(f"statistic must be 'signed' or 'absolute', got {statistic!r}")
    if sample_ids is None:
        sample_ids = list(range(m))
    if protein_ids is None:
        protein_ids = list(range(n))

    e = stat.mean(axis=1)
    d = stat.mean(axis=0)
    e_mean, e_sd = float(e.mean()), float(e.std())
    d_mean, d_sd = float(d.mean()), float(d.std())
    amp_cut = float(np.percentile(amplitudes, 75.0))
    floor = sample_floor_scale * float(stat.std()) / math.sqrt(n)
    sample_cut = max(2.0 * e_sd, floor)

    sample_out = [
        (sample_ids[i], float(e[i]))
        for i in range(m)
        if abs(e[i] - e_mean) > sample_cut
    ]
    protein_out = [
        (protein_ids[j], float(d[j]))
        for j in range(n)
        if abs(d[j] - d_mean) > 2.0 * d_sd and amplitudes[j] < amp_cut
    ]
    return OutlierReport(
        sample_out, protein_out, (e_mean, e_sd), (d_mean, d_sd), amp_cut,
        floor, statistic
    )


@dataclass
class PipelineConfig:
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune_epochs: int = 20
    retrain_epochs: int = 200
    optimizer: str = "adam"
    optimizer_options: dict = None  # None -> FINETUNE_OPTIMIZER_DEFAULTS
    q_norm: float = 1.0
    lam: float = 0.0
    regularizer: str = "none"
    learn_omega: bool = False
    outlier_stat: str = "signed"
    sample_floor_scale: float = 4.0
    retrain_from: str = "scratch"  # or "checkpoint"
    thresholds: RhythmThresholds = field(default_factory=RhythmThresholds)
    ramp_scale: str = "raw"

    def __post_init__(self):
        if self.retrain_from not in ("scratch", "checkpoint"):
            raise ValueError(f"retrain_from must be scratch|checkpoint, got {self.retrain_from!r}")


@dataclass
class PipelineResult:
    phases: np.ndarray  # one per input sample, [0,2pi)
    sample_outlier_flags: np.ndarray
    calls: list  # RhythmCall for retained proteins
    outliers: OutlierReport
    diagnostics: dict


MIN_SAMPLES = 4
MIN_PROTEINS = 8


def _rebuild_normalized(data, keep_samples, keep_proteins):
    """Subset on the raw scale and re-z-score (population stats change)."""
    raw = data.values * data.raw_std + data.raw_mean
    raw = raw[np.ix_(keep_samples, keep_proteins)]
    matrix = ExpressionMatrix(
        [data.sample_ids[i] for i in np.nonzero(keep_samples)[0]],
        [data.protein_ids[j] for j in np.nonzero(keep_proteins)[0]],
        raw,
        None if data.hour_labels is None else data.hour_labels[keep_samples],
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return zscore(matrix)


def _fit_once(data, cfg, seed_seq, epochs, diagnostics, transfer=None):
    """pretrain (or transfer) + finetune; returns (model, phases, histories)."""
    if transfer is None:
        stack, init, pre_hist = pretrain_stack(data, cfg.pretrain, seed_seq)
        diagnostics.setdefault("pretrain_losses", []).append(pre_hist)
        params = initial_cosinor(data, init.phi0)
        model = FineTuneModel.from_params(
            stack, params, q_norm=cfg.q_norm, lam=cfg.lam,
            regularizer=cfg.regularizer, learn_omega=cfg.learn_omega,
        )
    else:
        model = transfer
    model, phases, history = finetune(
        model, data, epochs=epochs, optimizer=cfg.optimizer,
        optimizer_options=cfg.optimizer_options, diagnostics=diagnostics,
    )
    diagnostics.setdefault("finetune_losses", []).append(history)
    return model, phases


def _transfer_model(model, data, keep_proteins):
    """Carry encoder weights and surviving cosinor rows onto a cleaned matrix.

    Dropped proteins delete the matching input columns of the first layer.
    """
    first = model.encoder.layers[0]
    first.weights = first.weights[:, keep_proteins]
    return FineTuneModel(
        model.encoder,
        model.mesor[keep_proteins],
        model.amplitude[keep_proteins],
        model.acrophase[keep_proteins],
        model.omega[keep_proteins],
        q_norm=model.q_norm,
        lam=model.lam,
        regularizer=model.regularizer,
        learn_omega=model.learn_omega,
    )


def run_pipeline(data, cfg=None, seed=0):
    """Full unsupervised phase-prediction pass over a NormalizedMatrix.

    pretrain -> cosinor init -> short fine-tune -> residual outlier screen ->
    drop flagged samples/proteins -> long retrain on the cleaned matrix ->
    rhythm calls. Samples dropped by the screen keep their pre-screen phase
    and are flagged in the result.
    """
    cfg = cfg or PipelineConfig()
    root = np.random.SeedSequence(seed)
    first_seed, retrain_seed = root.spawn(2)
    diagnostics = {"seed": seed}

    model, phases_first = _fit_once(
        data, cfg, first_seed, cfg.finetune_epochs, diagnostics
    )
    _, residuals = loss(model, data)
    report = screen_outliers(
        residuals, model.amplitude, data.sample_ids, data.protein_ids,
        statistic=cfg.outlier_stat, sample_floor_scale=cfg.sample_floor_scale,
    )
    bad_samples = set(report.sample_ids)
    bad_proteins = set(report.protein_ids)
    keep_s = np.array([sid not in bad_samples for sid in data.sample_ids])
    keep_p = np.array([pid not in bad_proteins for pid in data.protein_ids])
    if keep_s.sum() < MIN_SAMPLES or keep_p.sum() < MIN_PROTEINS:
        raise DataError(
            f"outlier screen left {int(keep_s.sum())} samples x "
            f"{int(keep_p.sum())} proteins; need >= {MIN_SAMPLES} x {MIN_PROTEINS}"
        )
    diagnostics["n_sample_outliers"] = len(report.sample_outliers)
    diagnostics["n_protein_outliers"] = len(report.protein_outliers)
    diagnostics["screen_residuals"] = residuals  # m x n, pre-screen model

    cleaned = _rebuild_normalized(data, keep_s, keep_p)
    transfer = None
    if cfg.retrain_from == "checkpoint":
        transfer = _transfer_model(model, cleaned, keep_p)
    model2, phases_clean = _fit_once(
        cleaned, cfg, retrain_seed, cfg.retrain_epochs, diagnostics, transfer=transfer
    )

    phases = np.empty(data.n_samples)
    phases[keep_s] = phases_clean
    phases[~keep_s] = phases_first[~keep_s]
    calls = call_rhythms(cleaned, phases_clean, cfg.thresholds, cfg.ramp_scale)
    return PipelineResult(phases, ~keep_s, calls, report, diagnostics)


def write_phases(result, sample_ids, path, delimiter="\t"):
    """Phase table: sample_id, phase_rad, phase_hours, outlier."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["sample_id", "phase_rad", "phase_hours", "outlier"]) + "\n")
        for i, sid in enumerate(sample_ids):
            fh.write(
                delimiter.join(
                    [
                        sid,
                        format(result.phases[i], ".10g"),
                        format(24.0 * result.phases[i] / TWO_PI, ".10g"),
                        "1" if result.sample_outlier_flags[i] else "0",
                    ]
                )
                + "\n"
            )
