"""Synthetic shifted domains, windowing, dataset files and splits."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

MAGIC = b"TSDA"
VERSION = 1
_HEADER = struct.Struct("<4sBIIIBH")


@dataclass
class TimeSeriesSample:
    x: np.ndarray
    label: int | None = None
    domain: str = ""


class Dataset:
    """A batch of equally shaped series ``x [n, d, T]`` with optional labels."""

    def __init__(self, x, labels=None, domain="", n_classes=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, None, :]
        if x.ndim != 3:
            raise ValueError(f"expected samples shaped [n, d, T], got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("dataset contains non-finite values")
        self.x = x
        if labels is not None:
            labels = np.asarray(labels).astype(np.int64)
            if labels.shape != (x.shape[0],):
                raise ValueError("one label per sample required")
            if labels.size and labels.min() < 0:
                raise ValueError("labels must be non-negative")
        self.labels = labels
        self.domain = domain
        if n_classes is None:
            n_classes = int(labels.max()) + 1 if labels is not None and labels.size else 0
        if labels is not None and labels.size and labels.max() >= n_classes:
            raise ValueError(f"label {labels.max()} outside [0, {n_classes})")
        self.n_classes = int(n_classes)

    @property
    def has_labels(self):
        return self.labels is not None

    @property
    def channels(self):
        return self.x.shape[1]

    @property
    def length(self):
        return self.x.shape[2]

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i):
        return TimeSeriesSample(self.x[i], None if self.labels is None else int(self.labels[i]), self.domain)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], None if self.labels is None else self.labels[idx], self.domain, self.n_classes)

    def without_labels(self):
        return Dataset(self.x, None, self.domain, self.n_classes)

    def class_inventory(self):
        return set() if self.labels is None else set(np.unique(self.labels).tolist())

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels)
        )
        return self.x.shape == other.x.shape and np.array_equal(self.x, other.x) and same_labels \
            and self.n_classes == other.n_classes


# -- synthetic generation ----------------------------------------------------

def default_recipes(n_classes):
    """Class c carries mode 4 + 4c and a weaker second harmonic."""
    return [[(4 + 4 * c, 1.0, 0.0), (8 + 8 * c, 0.4, 0.0)] for c in range(n_classes)]


@dataclass
class SyntheticSpec:
    """Recipe for one synthetic domain.

    Each class is a sum of cosines given as (mode, amplitude, phase) triples.
    Channel ``k`` scales amplitudes by a fixed gain and adds ``k * pi / 4`` to the
    phases. With ``random_phase`` every sample draws its own global phase per
    component. ``envelope_width`` (fraction of T) multiplies the signal by a
    circular Gaussian bump centred at ``envelope_center``, making the series a
    localized burst.

    Domain transform, applied before noise:
      time_scale        t -> t * time_scale (dilation)
      time_offset       circular delay by time_offset * T steps
      phase_jitter      extra per-component phase ~ N(0, phase_jitter^2)
      frequency_detune  every mode moves by this many bins
      amplitude_scale, dc_offset   affine change of the whole trace
    """

    length: int = 128
    channels: int = 3
    n_classes: int = 6
    recipes: list | None = None
    noise: float = 0.1
    random_phase: bool = True
    envelope_width: float | None = None
    envelope_center: float = 0.5
    time_scale: float = 1.0
    time_offset: float = 0.0
    phase_jitter: float = 0.0
    frequency_detune: float = 0.0
    amplitude_scale: float = 1.0
    dc_offset: float = 0.0
    proportions: list | None = None
    exclude_classes: tuple = ()
    n_samples: int = 200
    seed: int = 0
    domain: str = "source"

    def __post_init__(self):
        if self.recipes is None:
            self.recipes = default_recipes(self.n_classes)
        self.recipes = [[tuple(float(v) for v in comp) for comp in r] for r in self.recipes]
        self.exclude_classes = tuple(int(c) for c in self.exclude_classes)

    def validate(self):
        if self.length < 4 or self.channels < 1 or self.n_samples < 1:
            raise ValueError("need length >= 4, channels >= 1, n_samples >= 1")
        if len(self.recipes) != self.n_classes:
            raise ValueError(f"{len(self.recipes)} recipes for {self.n_classes} classes")
        top = self.length // 2 + 1
        for c, r in enumerate(self.recipes):
            for mode, _, _ in r:
                if not 0 <= mode < top:
                    raise ValueError(f"class {c}: mode {mode} outside [0, {top})")
        if self.proportions is not None:
            p = np.asarray(self.proportions, dtype=float)
            if p.shape != (self.n_classes,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("class proportions must be n_classes non-negative values summing to 1")
        if any(not 0 <= c < self.n_classes for c in self.exclude_classes):
            raise ValueError("excluded class out of range")
        if len(set(self.exclude_classes)) >= self.n_classes:
            raise ValueError("every class excluded")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")

    def class_probabilities(self):
        p = np.full(self.n_classes, 1.0 / self.n_classes) if self.proportions is None \
            else np.asarray(self.proportions, dtype=float).copy()
        p[list(self.exclude_classes)] = 0.0
        if p.sum() <= 0:
            raise ValueError("no probability mass left after excluding classes")
        return p / p.sum()

    def to_text(self, prefix=""):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "recipes":
                v = ";".join("|".join(f"{m:g}:{a:g}:{ph:g}" for m, a, ph in r) for r in v)
            elif f.name in ("proportions", "exclude_classes"):
                v = "" if v is None else ",".join(f"{x:g}" for x in v)
            elif v is None:
                v = ""
            lines.append(f"{prefix}{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, mapping):
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, raw in mapping.items():
            if k not in types:
                raise KeyError(f"unknown synthetic-spec key {k!r}")
            raw = str(raw).strip()
            if k == "recipes":
                kw[k] = None if not raw else [
                    [tuple(float(v) for v in comp.split(":")) for comp in r.split("|") if comp]
                    for r in raw.split(";")
                ]
            elif k == "proportions":
                kw[k] = None if not raw else [float(v) for v in raw.split(",")]
            elif k == "exclude_classes":
                kw[k] = tuple(int(float(v)) for v in raw.split(",") if v.strip())
            elif k == "envelope_width":
                kw[k] = None if raw in ("", "none", "None") else float(raw)
            elif k == "random_phase":
                kw[k] = parse_bool(raw)
            elif k == "domain":
                kw[k] = raw
            elif k in ("length", "channels", "n_classes", "n_samples", "seed"):
                kw[k] = int(raw)
            else:
                kw[k] = float(raw)
        return cls(**kw)


def parse_bool(raw):
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw ``spec.n_samples`` labelled series. Values are rounded to float32 precision
    so that a saved file reloads bit-identically."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T, d = spec.length, spec.channels
    labels = rng.choice(spec.n_classes, size=spec.n_samples, p=spec.class_probabilities())
    t = np.arange(T, dtype=np.float64)
    tt = (t - spec.time_offset * T) * spec.time_scale
    gains = np.linspace(1.0, 0.5, d) if d > 1 else np.ones(1)
    chan_phase = np.arange(d) * np.pi / 4
    env = np.ones(T)
    if spec.envelope_width is not None:
        centre = spec.envelope_center * T
        delta = ((tt - centre + T / 2) % T) - T / 2
        env = np.exp(-0.5 * (delta / (spec.envelope_width * T)) ** 2)
    x = np.zeros((spec.n_samples, d, T))
    for i, c in enumerate(labels):
        for mode, amp, phase in spec.recipes[c]:
            ph = phase
            if spec.random_phase:
                ph += rng.uniform(-np.pi, np.pi)
            if spec.phase_jitter:
                ph += rng.normal(0.0, spec.phase_jitter)
            freq = mode + spec.frequency_detune
            wave = np.cos(2 * np.pi * freq * tt[None, :] / T + ph + chan_phase[:, None])
            x[i] += amp * gains[:, None] * wave
        x[i] *= env
    x = spec.amplitude_scale * x + spec.dc_offset
    if spec.noise > 0:
        x += rng.normal(0.0, spec.noise, x.shape)
    x = x.astype(np.float32).astype(np.float64)
    return Dataset(x, labels, spec.domain, spec.n_classes)


def target_spec(source: SyntheticSpec, private_classes=(), **transform):
    """Target counterpart of ``source``: same recipes, a new seed, the given transform.

    ``private_classes`` are excluded from the source and kept in the target.
    """
    src = replace(source, exclude_classes=tuple(sorted(set(source.exclude_classes) | set(private_classes))))
    tgt = replace(source, seed=source.seed + 1000, domain="target",
                  exclude_classes=tuple(c for c in source.exclude_classes if c not in private_classes),
                  **transform)
    return src, tgt


def window(x, length, stride=None):
    """Cut a long series ``[N]`` or ``[d, N]`` into segments ``[k, d, length]``; the tail is dropped."""
    if length <= 0:
        raise ValueError("window length must be positive")
    stride = length if stride is None else stride
    if stride <= 0:
        raise ValueError("stride must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    N = x.shape[-1]
    if length > N:
        raise ValueError(f"window length {length} exceeds series length {N}")
    starts = range(0, N - length + 1, stride)
    return np.stack([x[:, s:s + length] for s in starts])


# -- files ---------------------------------------------------------------------

def save(dataset: Dataset, path):
    path = Path(path)
    n, d, T = dataset.x.shape
    has = dataset.has_labels
    if has and dataset.n_classes > 65535:
        raise ValueError("too many classes for the file format")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d, T, int(has), dataset.n_classes))
        fh.write(dataset.x.astype("<f4").tobytes())
        if has:
            fh.write(dataset.labels.astype("<u2").tobytes())


def load(path, domain=None):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header at offset {len(raw)} (need {_HEADER.size} bytes)")
    magic, version, n, d, T, has, C = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off = _HEADER.size
    nbytes = n * d * T * 4
    if len(raw) < off + nbytes:
        raise ValueError(f"{path}: truncated sample data at offset {len(raw)} (expected {off + nbytes} bytes)")
    x = np.frombuffer(raw, dtype="<f4", count=n * d * T, offset=off).reshape(n, d, T).astype(np.float64)
    off += nbytes
    labels = None
    if has:
        if len(raw) < off + 2 * n:
            raise ValueError(f"{path}: truncated labels at offset {len(raw)} (expected {off + 2 * n} bytes)")
        labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off).astype(np.int64)
        off += 2 * n
    if len(raw) != off:
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes after offset {off}")
    return Dataset(x, labels, path.stem if domain is None else domain, C)


def load_text(path, channels=1, length=None, delimiter=",", labels="auto", domain=None):
    """One flattened sample ``d * T`` per row, optionally followed by an integer label."""
    rows = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    width = rows.shape[1]
    if labels == "auto":
        if length is not None:
            labels = width == channels * length + 1
        else:
            labels = width % channels == 1 and width > channels
    y = None
    if labels:
        y = rows[:, -1]
        if np.any(y != np.round(y)) or np.any(y < 0):
            raise ValueError("label column must hold non-negative integers")
        y = y.astype(np.int64)
        rows = rows[:, :-1]
    if rows.shape[1] % channels:
        raise ValueError(f"row width {rows.shape[1]} not divisible by {channels} channels")
    T = rows.shape[1] // channels
    if length is not None and T != length:
        raise ValueError(f"rows hold length-{T} series, expected {length}")
    return Dataset(rows.reshape(rows.shape[0], channels, T), y, Path(path).stem if domain is None else domain)


def split(dataset: Dataset, fraction, seed=0):
    """Random (stratified when labelled) split; ``fraction`` goes to the first part."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    if not dataset.has_labels:
        perm = rng.permutation(n)
        k = int(round(fraction * n))
        return dataset.subset(np.sort(perm[:k])), dataset.subset(np.sort(perm[k:]))
    first, second = [], []
    for c in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 1:
            warnings.warn(f"class {c} has a single sample; it goes to the training part", stacklevel=2)
            first.extend(idx)
            continue
        idx = rng.permutation(idx)
        k = int(round(fraction * idx.size))
        first.extend(idx[:k])
        second.extend(idx[k:])
    return dataset.subset(np.sort(first)), dataset.subset(np.sort(np.asarray(second, dtype=np.int64)))


__all__ = [
    "Dataset",
    "SyntheticSpec",
    "TimeSeriesSample",
    "default_recipes",
    "generate",
    "load",
    "load_text",
    "parse_bool",
    "save",
    "split",
    "target_spec",
    "window",
]
