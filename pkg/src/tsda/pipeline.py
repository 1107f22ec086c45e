"""Three-stage adaptation: align, correct, infer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import detection
from .alignment import mmd_loss, sinkhorn_loss
from .data import Dataset, parse_bool
from .evaluation import UNKNOWN_LABEL, evaluate
from .model import ModelConfig, TimeFrequencyModel, cross_entropy, reconstruction_loss, unit_rows
from .numerics import Adam, no_grad
from .numerics.optim import OptimizerState

log = logging.getLogger(__name__)

MODES = ("closed_set", "universal")
DIVERGENCE_CHOICES = ("sinkhorn", "mmd")


@dataclass
class TrainConfig:
    epochs_align: int = 20
    epochs_correct: int = 10
    batch: int = 32
    lr: float = 1e-3
    lr_correct: float | None = None
    # raw loss weights for classification, alignment, reconstruction; normalized to sum 1
    weight_cls: float = 1.0
    weight_align: float = 1.0
    weight_rec: float = 0.2
    eta: float = 1e-3
    sinkhorn_iter: int = 100
    cost_p: float = 2.0
    # measure the divergence between unit-normalized latents (what the classifier sees)
    align_normalized: bool = True
    mmd_sigma: float | None = None
    modes: int | None = None
    time_channels: tuple = (32, 64, 64)
    kernel: int = 5
    feature_len: int = 8
    amplitude_norm: str = "length"
    seed: int = 0
    mode: str = "closed_set"
    divergence: str = "sinkhorn"
    frequency_branch: bool = True
    correction: bool = True
    # BatchNorm running statistics stay frozen during correction unless set
    correction_updates_bn: bool = False
    # correction continues the alignment optimizer's moment estimates
    resume_optimizer: bool = True
    alpha: float = 0.05
    dip_bootstrap: int = 1000

    def __post_init__(self):
        self.time_channels = tuple(int(c) for c in self.time_channels)
        self.validate()

    def validate(self):
        if self.epochs_align < 1:
            raise ValueError("epochs_align must be >= 1")
        if self.epochs_correct < 0:
            raise ValueError("epochs_correct must be >= 0")
        if self.batch < 2:
            raise ValueError("batch size must be >= 2")
        if min(self.weight_cls, self.weight_align, self.weight_rec) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.weight_cls + self.weight_align + self.weight_rec <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.divergence not in DIVERGENCE_CHOICES:
            raise ValueError(f"divergence must be one of {DIVERGENCE_CHOICES}")
        if self.lr <= 0 or self.eta <= 0:
            raise ValueError("lr and eta must be positive")

    @property
    def weights(self):
        s = self.weight_cls + self.weight_align + self.weight_rec
        return self.weight_cls / s, self.weight_align / s, self.weight_rec / s

    def model_config(self, channels, length, n_classes):
        return ModelConfig(
            channels=channels,
            length=length,
            n_classes=n_classes,
            modes=self.modes,
            time_channels=self.time_channels,
            kernel=self.kernel,
            feature_len=self.feature_len,
            frequency_branch=self.frequency_branch,
            amplitude_norm=self.amplitude_norm,
        )

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(c) for c in v)
            elif v is None:
                v = ""
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, mapping):
        types = {f.name: f for f in fields(cls)}
        kw = {}
        for k, raw in mapping.items():
            if k not in types:
                raise KeyError(f"unknown training key {k!r}")
            raw = str(raw).strip()
            default = types[k].default
            if k == "time_channels":
                kw[k] = tuple(int(c) for c in raw.split(","))
            elif k in ("modes", "mmd_sigma", "lr_correct"):
                kw[k] = None if raw in ("", "none", "None") else (int(raw) if k == "modes" else float(raw))
            elif isinstance(default, bool):
                kw[k] = parse_bool(raw)
            elif isinstance(default, int):
                kw[k] = int(raw)
            elif isinstance(default, float):
                kw[k] = float(raw)
            else:
                kw[k] = raw
        return cls(**kw)


@dataclass
class LossTrace:
    """Per-epoch means of each loss term."""

    columns: tuple
    rows: list = field(default_factory=list)

    def add(self, epoch, values):
        self.rows.append((epoch,) + tuple(float(v) for v in values))

    def column(self, name):
        i = self.columns.index(name) + 1
        return np.array([r[i] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def to_text(self):
        out = ["epoch," + ",".join(self.columns)]
        out += [f"{r[0]}," + ",".join(f"{v:.10g}" for v in r[1:]) for r in self.rows]
        return "\n".join(out) + "\n"


@dataclass
class AdaptationResult:
    model_align: TimeFrequencyModel
    model_correct: TimeFrequencyModel | None
    align_trace: LossTrace
    correct_trace: LossTrace | None
    predictions: np.ndarray
    assigned: np.ndarray
    corrected_predictions: np.ndarray | None = None
    records: list | None = None
    decisions: dict | None = None
    metrics: object | None = None


def _batches(n, batch, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


def _paired_batches(ns, nt, batch, rng):
    """Source and target index batches for one epoch; the shorter stream cycles."""
    bs, bt = _batches(ns, batch, rng), _batches(nt, batch, rng)
    steps = max(len(bs), len(bt))
    return [(bs[i % len(bs)], bt[i % len(bt)]) for i in range(steps)]


def divergence_loss(zs, zt, cfg: TrainConfig):
    if cfg.align_normalized:
        zs, zt = unit_rows(zs), unit_rows(zt)
    if cfg.divergence == "sinkhorn":
        loss, _ = sinkhorn_loss(zs, zt, eta=cfg.eta, n_iter=cfg.sinkhorn_iter, p=cfg.cost_p)
        return loss
    return mmd_loss(zs, zt, sigma=cfg.mmd_sigma)


def _check_finite(value, stage, epoch, step):
    if not np.isfinite(value):
        raise FloatingPointError(f"{stage}: non-finite loss at epoch {epoch}, batch {step}")


def _update(loss, opt, stage, epoch, step):
    try:
        loss.backward()
        opt.step()
    except FloatingPointError as exc:
        raise FloatingPointError(f"{stage}: {exc} at epoch {epoch}, batch {step}") from exc


def build_model(source: Dataset, cfg: TrainConfig):
    n_classes = max(source.n_classes, int(source.labels.max()) + 1)
    return TimeFrequencyModel(cfg.model_config(source.channels, source.length, n_classes), seed=cfg.seed)


def stage1_align(source: Dataset, target: Dataset, cfg: TrainConfig, model=None):
    """Train encoder, decoder and prototypes on lam1*L_C + lam2*L_A + lam3*L_R.

    Returns ``(model, trace, optimizer_state)``; the trace columns are L_C, L_A,
    L_R and the total.
    """
    if not source.has_labels:
        raise ValueError("source domain must be labelled")
    if (source.channels, source.length) != (target.channels, target.length):
        raise ValueError("source and target series differ in shape")
    if min(len(source), len(target)) < 2:
        raise ValueError("each domain needs at least 2 samples")
    model = build_model(source, cfg) if model is None else model
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.params, lr=cfg.lr)
    l1, l2, l3 = cfg.weights
    trace = LossTrace(("L_C", "L_A", "L_R", "total"))
    for epoch in range(1, cfg.epochs_align + 1):
        sums = np.zeros(4)
        steps = _paired_batches(len(source), len(target), cfg.batch, rng)
        for step, (si, ti) in enumerate(steps, 1):
            xs, ys, xt = source.x[si], source.labels[si], target.x[ti]
            opt.zero_grad()
            zs = model.encode(xs, training=True)
            zt = model.encode(xt, training=True)
            lc = cross_entropy(model.logits(zs), ys)
            la = divergence_loss(zs, zt, cfg) if l2 > 0 else None
            lr_ = reconstruction_loss(xs, model.decode(zs)) if l3 > 0 else None
            total = lc * l1
            if la is not None:
                total = total + la * l2
            if lr_ is not None:
                total = total + lr_ * l3
            _check_finite(float(total.data), "align", epoch, step)
            _update(total, opt, "align", epoch, step)
            sums += [float(lc.data), 0.0 if la is None else float(la.data),
                     0.0 if lr_ is None else float(lr_.data), float(total.data)]
        trace.add(epoch, sums / len(steps))
        log.info("align epoch %d: L_C=%.4f L_A=%.4f L_R=%.4f", epoch, *trace.rows[-1][1:4])
    return model, trace, opt.state


def encode_all(model, x, batch=256):
    with no_grad():
        return np.concatenate([model.encode(x[i:i + batch], training=False).data for i in range(0, len(x), batch)])


def assign_classes(model, x):
    """Latents, nearest-prototype classes and the cosine distances to them."""
    z = encode_all(model, x)
    W = model.prototypes
    with no_grad():
        logits = model.logits(z).data
    cls = np.argmax(logits, axis=1)
    return z, cls, detection.prototype_distance(z, W[cls])


def _resume_state(state, names, lr):
    """Adam moments of ``names`` carried over from an earlier stage."""
    return OptimizerState(lr=lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps, step=state.step,
                          m={k: state.m[k].copy() for k in names if k in state.m},
                          v={k: state.v[k].copy() for k in names if k in state.v})


def stage2_correct(target: Dataset, model: TimeFrequencyModel, cfg: TrainConfig, opt_state=None):
    """Retrain encoder and decoder on target reconstruction with the prototypes frozen.

    Returns ``(corrected_model, assigned, d_align, d_correct, trace)``. Distances
    are measured to the prototype each sample was assigned before correction.
    """
    _, assigned, d_align = assign_classes(model, target.x)
    corrected = model.copy()
    trainable = corrected.params.subset(corrected.names("enc.", "dec."))
    lr = cfg.lr if cfg.lr_correct is None else cfg.lr_correct
    opt = Adam(trainable, lr=lr)
    if opt_state is not None:
        opt.state = _resume_state(opt_state, list(trainable), lr)
    rng = np.random.default_rng(cfg.seed + 2)
    trace = LossTrace(("L_R",))
    for epoch in range(1, cfg.epochs_correct + 1):
        total, batches = 0.0, _batches(len(target), cfg.batch, rng)
        for step, ti in enumerate(batches, 1):
            xt = target.x[ti]
            corrected.params.zero_grad()
            z = corrected.encode(xt, training=cfg.correction_updates_bn and len(ti) > 1)
            loss = reconstruction_loss(xt, corrected.decode(z))
            _check_finite(float(loss.data), "correct", epoch, step)
            _update(loss, opt, "correct", epoch, step)
            total += float(loss.data)
        trace.add(epoch, [total / len(batches)])
        log.info("correct epoch %d: L_R=%.4f", epoch, trace.rows[-1][1])
    z_c = encode_all(corrected, target.x)
    d_correct = detection.prototype_distance(z_c, corrected.prototypes[assigned])
    return corrected, assigned, d_align, d_correct, trace


def stage3_infer(target: Dataset, model_align, cfg: TrainConfig, assigned=None, d_align=None, d_correct=None):
    """Closed-set: nearest-prototype labels. Universal: the same labels with rejected
    samples set to ``UNKNOWN_LABEL``. Returns ``(predictions, records, decisions)``."""
    if assigned is None:
        _, assigned, d_align0 = assign_classes(model_align, target.x)
        d_align = d_align0 if d_align is None else d_align
    preds = np.asarray(assigned).copy()
    if cfg.mode == "closed_set":
        return preds, None, None
    if d_correct is None:
        raise ValueError("universal mode needs post-correction distances")
    records = [detection.DriftRecord(i, int(c), float(a), float(b))
               for i, (c, a, b) in enumerate(zip(assigned, d_align, d_correct))]
    decisions = detection.detect(records, alpha=cfg.alpha, B=cfg.dip_bootstrap, seed=cfg.seed)
    for r in records:
        if r.verdict == detection.UNKNOWN:
            preds[r.sample_id] = UNKNOWN_LABEL
    return preds, records, decisions


def adapt(source: Dataset, target: Dataset, cfg: TrainConfig):
    """Run all stages. Target labels, if present, are never used for training."""
    tgt = target.without_labels()
    model_a, trace_a, opt_state = stage1_align(source, tgt, cfg)
    model_c = trace_c = d_corr = None
    corrected_preds = None
    _, assigned, d_align = assign_classes(model_a, tgt.x)
    if cfg.correction:
        resume = opt_state if cfg.resume_optimizer else None
        model_c, assigned, d_align, d_corr, trace_c = stage2_correct(tgt, model_a, cfg, resume)
        corrected_preds = assign_classes(model_c, tgt.x)[1]
    elif cfg.mode == "universal":
        d_corr = d_align.copy()
    preds, records, decisions = stage3_infer(tgt, model_a, cfg, assigned, d_align, d_corr)
    metrics = None
    if target.has_labels:
        metrics = evaluate(preds, target.labels, known_classes=source.class_inventory(),
                           n_classes=max(target.n_classes, source.n_classes))
    return AdaptationResult(model_a, model_c, trace_a, trace_c, preds, assigned,
                            corrected_preds, records, decisions, metrics)


__all__ = [
    "AdaptationResult",
    "LossTrace",
    "TrainConfig",
    "UNKNOWN_LABEL",
    "adapt",
    "assign_classes",
    "build_model",
    "divergence_loss",
    "stage1_align",
    "stage2_correct",
    "stage3_infer",
]
