"""Time-frequency encoder, decoder, prototype classifier and the loss terms."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import spectral
from .numerics import (
    BlockSpec,
    ParameterSet,
    absolute,
    adaptive_avg_pool1d,
    as_tensor,
    concat,
    conv_transpose1d,
    init_block,
    logsumexp,
    nn_block,
    sqrt,
)


AMPLITUDE_NORMS = ("length", "unitary", "none")


@dataclass
class ModelConfig:
    channels: int = 3
    length: int = 128
    n_classes: int = 6
    modes: int | None = None
    time_channels: tuple = (64, 128, 128)
    kernel: int = 5
    pool: int = 2
    feature_len: int = 8
    frequency_branch: bool = True
    # amplitude in z: "length" keeps |v|/T, "unitary" uses |v|/sqrt(T), "none" |v|
    amplitude_norm: str = "length"

    def __post_init__(self):
        if self.modes is None:
            self.modes = spectral.default_modes(self.length)
        self.time_channels = tuple(int(c) for c in self.time_channels)
        if self.length < 4:
            raise ValueError("series length must be >= 4")
        if self.amplitude_norm not in AMPLITUDE_NORMS:
            raise ValueError(f"amplitude_norm must be one of {AMPLITUDE_NORMS}, got {self.amplitude_norm!r}")
        if self.modes > spectral.n_modes(self.length):
            raise ValueError(
                f"{self.modes} modes requested but a length-{self.length} series has {spectral.n_modes(self.length)}"
            )

    @property
    def freq_dim(self):
        return 2 * self.channels * self.modes if self.frequency_branch else 0

    @property
    def amplitude_gain(self):
        """Factor between the stored amplitude and |v|/T."""
        return {"length": 1.0, "unitary": float(np.sqrt(self.length)), "none": float(self.length)}[self.amplitude_norm]

    @property
    def time_dim(self):
        return self.time_channels[-1] * self.feature_len

    @property
    def latent_dim(self):
        return self.freq_dim + self.time_dim

    @property
    def decoder_stride(self):
        return -(-self.length // self.feature_len)

    def block_specs(self):
        specs, c_in = [], self.channels
        for c in self.time_channels:
            specs.append(BlockSpec(c_in, c, kernel=self.kernel, pool=self.pool))
            c_in = c
        return specs

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(c) for c in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in types:
                raise ValueError(f"unknown model setting {key!r}")
            if key == "time_channels":
                kw[key] = tuple(int(c) for c in val.split(","))
            elif key == "frequency_branch":
                kw[key] = val.lower() in ("1", "true", "yes")
            elif key == "amplitude_norm":
                kw[key] = val
            else:
                kw[key] = int(val)
        return cls(**kw)


@dataclass
class LatentFeature:
    """z = [e_F ; e_T]; ``boundary`` is the index where e_T starts."""

    z: np.ndarray
    boundary: int

    @property
    def e_freq(self):
        return self.z[..., : self.boundary]

    @property
    def e_time(self):
        return self.z[..., self.boundary :]


class TimeFrequencyModel:
    """Encoder (spectral + CNN branch), decoder and prototype classifier.

    Parameter names are prefixed ``enc.`` (encoder), ``dec.`` (decoder) and
    ``cls.`` (prototypes). Batch-norm running statistics live in ``buffers``.
    """

    def __init__(self, config: ModelConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        arrays, self.buffers = {}, {}
        d, M = config.channels, config.modes
        if config.frequency_branch:
            arrays["enc.spec.B_re"] = np.ones((d, M))
            arrays["enc.spec.B_im"] = np.zeros((d, M))
        for i, spec in enumerate(config.block_specs()):
            p, b = init_block(spec, rng, prefix=f"enc.time.{i}.")
            arrays.update(p)
            self.buffers.update(b)
        c_last, k = config.time_channels[-1], config.decoder_stride
        bound = 1.0 / np.sqrt(c_last * k)
        arrays["dec.time.weight"] = rng.uniform(-bound, bound, (c_last, d, k))
        arrays["dec.time.bias"] = np.zeros(d)
        bound = 1.0 / np.sqrt(config.latent_dim)
        arrays["cls.W"] = rng.uniform(-bound, bound, (config.n_classes, config.latent_dim))
        self.params = ParameterSet.from_arrays(arrays)

    # -- parameter groups --------------------------------------------------

    def names(self, *prefixes):
        return [k for k in self.params if k.startswith(prefixes)]

    @property
    def prototypes(self):
        return self.params["cls.W"].data

    def state_arrays(self):
        out = self.params.arrays()
        out.update((k, v.copy()) for k, v in self.buffers.items())
        return out

    def load_state_arrays(self, arrays):
        for k, v in arrays.items():
            if k in self.buffers:
                self.buffers[k][...] = v
            else:
                self.params.load_arrays({k: v})

    def copy(self):
        other = TimeFrequencyModel.__new__(TimeFrequencyModel)
        other.config = self.config
        other.params = ParameterSet.from_arrays(self.params.arrays())
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        return other

    # -- forward passes -------------------------------------------------------

    def encode_frequency(self, x):
        cfg, p = self.config, self.params
        n = x.shape[0]
        re, im = spectral.dft_forward_t(spectral.smooth_t(x), cfg.modes)
        re, im = spectral.spectral_convolution_t(re, im, p["enc.spec.B_re"], p["enc.spec.B_im"])
        a, ph = spectral.to_polar_t(re, im, cfg.length)
        if cfg.amplitude_gain != 1.0:
            a = a * cfg.amplitude_gain
        k = cfg.channels * cfg.modes
        return concat([a.reshape(n, k), ph.reshape(n, k)], axis=1)

    def encode_time(self, x, training=True):
        cfg = self.config
        h = as_tensor(x)
        for i, spec in enumerate(cfg.block_specs()):
            h = nn_block(h, self.params, spec, self.buffers, training=training, prefix=f"enc.time.{i}.")
        h = adaptive_avg_pool1d(h, cfg.feature_len)
        return h.reshape(h.shape[0], cfg.time_dim)

    def encode(self, x, training=True):
        """Latent tensor [N, D_z] for a batch x [N, d, T]."""
        x = as_tensor(x)
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.channels, cfg.length):
            raise ValueError(f"expected batch [N, {cfg.channels}, {cfg.length}], got {x.shape}")
        e_t = self.encode_time(x, training)
        if not cfg.frequency_branch:
            return e_t
        return concat([self.encode_frequency(x), e_t], axis=1)

    def decode(self, z):
        """Reconstruction [N, d, T]: inverse DFT of (a, p) plus a transposed conv of e_T."""
        cfg, p = self.config, self.params
        z = as_tensor(z)
        n = z.shape[0]
        if z.shape[1] != cfg.latent_dim:
            raise ValueError(f"latent width {z.shape[1]} does not match model ({cfg.latent_dim})")
        fd = cfg.freq_dim
        e_t = z[:, fd:].reshape(n, cfg.time_channels[-1], cfg.feature_len)
        x_t = conv_transpose1d(e_t, p["dec.time.weight"], p["dec.time.bias"], stride=cfg.decoder_stride)
        if x_t.shape[-1] != cfg.length:
            x_t = x_t[:, :, : cfg.length]
        if not cfg.frequency_branch:
            return x_t
        k = cfg.channels * cfg.modes
        a = z[:, :k].reshape(n, cfg.channels, cfg.modes)
        ph = z[:, k:fd].reshape(n, cfg.channels, cfg.modes)
        if cfg.amplitude_gain != 1.0:
            a = a * (1.0 / cfg.amplitude_gain)
        re, im = spectral.from_polar_t(a, ph, cfg.length)
        return spectral.dft_inverse_t(re, im, cfg.length) + x_t

    def logits(self, z):
        return classify(z, self.params["cls.W"])

    def latent(self, z):
        return LatentFeature(np.asarray(getattr(z, "data", z)), self.config.freq_dim)


# -- losses and classifier ----------------------------------------------------

def unit_rows(z):
    """Rows of z [N, D] scaled to unit Euclidean length."""
    z = as_tensor(z)
    norm2 = (z * z).sum(axis=1, keepdims=True)
    if np.any(norm2.data <= 0):
        raise ValueError("cannot normalize a zero-norm feature")
    return z / sqrt(norm2)


def classify(z, W):
    """Logits w_c . z/|z| for z [D] or [N, D] and prototypes W [C, D]."""
    z = as_tensor(z)
    single = z.ndim == 1
    if single:
        z = z.reshape(1, z.shape[0])
    out = unit_rows(z) @ as_tensor(W).T
    return out.reshape(out.shape[1]) if single else out


def cross_entropy(logits, labels):
    """Mean of -log softmax(logits)[label] over the batch."""
    logits = as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = logits.reshape(1, logits.shape[0])
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    C = logits.shape[1]
    if labels.shape[0] != logits.shape[0]:
        raise ValueError("one label per row of logits is required")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    onehot = np.eye(C)[labels]
    picked = (logits * onehot).sum(axis=1)
    return (logsumexp(logits, axis=1) - picked).mean()


def reconstruction_loss(x, x_hat):
    x, x_hat = as_tensor(x), as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return absolute(x - x_hat).mean()


# -- checkpoint files ------------------------------------------------------------

CKPT_MAGIC = b"TSDACKPT"
CKPT_VERSION = 1


def save_checkpoint(path, model: TimeFrequencyModel, extra_text=""):
    """Binary container: magic, version, config text, then named float64 tensors."""
    text = model.config.to_text() + extra_text
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    arrays = model.state_arrays()
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"checkpoint truncated while reading {what} at offset {fh.tell()}")
    return data


def load_checkpoint(path):
    """Returns (model, config_text)."""
    with open(path, "rb") as fh:
        if _read(fh, len(CKPT_MAGIC), "magic") != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read(fh, 4, "version"))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (tlen,) = struct.unpack("<I", _read(fh, 4, "config length"))
        text = _read(fh, tlen, "config").decode("utf-8")
        (count,) = struct.unpack("<I", _read(fh, 4, "tensor count"))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(fh, 4, "name length"))
            name = _read(fh, nlen, "name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read(fh, 4, "rank"))
            shape = struct.unpack(f"<{ndim}Q", _read(fh, 8 * ndim, "shape"))
            n = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(_read(fh, 8 * n, name), dtype="<f8").reshape(shape).astype(np.float64)
    model_lines = [ln for ln in text.splitlines() if ln.split("=", 1)[0].strip() in {f.name for f in fields(ModelConfig)}]
    model = TimeFrequencyModel(ModelConfig.from_text("\n".join(model_lines)))
    model.load_state_arrays(arrays)
    return model, text


__all__ = [
    "LatentFeature",
    "ModelConfig",
    "TimeFrequencyModel",
    "classify",
    "cross_entropy",
    "load_checkpoint",
    "reconstruction_loss",
    "save_checkpoint",
    "unit_rows",
]
