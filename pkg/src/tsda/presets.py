"""Bundled toy problems as flat key=value text.

Each preset is a data spec (``SyntheticSpec`` keys, plus ``private_classes`` and
``target.<key>`` overrides for the target domain) and a training config.
"""
from __future__ import annotations

from .data import SyntheticSpec, generate, target_spec
from .pipeline import TrainConfig

TOY_SPEC = """\
# four classes that differ only in frequency; each is a short burst early in
# the window and the target moves the burst half a window later
n_classes = 4
n_samples = 200
noise = 0.1
envelope_width = 0.08
envelope_center = 0.25
target.time_offset = 0.5
"""

TOY_TRAIN = """\
lr = 0.01
amplitude_norm = none
epochs_align = 15
epochs_correct = 10
"""

UNIVERSAL_SPEC = """\
# four known single-tone classes and one louder target-only tone
n_classes = 5
recipes = 4:1:0;8:1:0;12:1:0;16:1:0;20:4:0
envelope_width = none
noise = 0.05
n_samples = 250
private_classes = 4
"""

UNIVERSAL_TRAIN = """\
mode = universal
lr = 0.01
lr_correct = 0.003
amplitude_norm = none
epochs_align = 40
epochs_correct = 10
time_channels = 4,8,8
modes = 24
"""

PRESETS = {
    "toy": (TOY_SPEC, TOY_TRAIN),
    "universal": (UNIVERSAL_SPEC, UNIVERSAL_TRAIN),
}


def parse_kv(text, source="<text>"):
    """Flat ``key = value`` lines; ``#`` starts a comment. Later keys win."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected key = value")
        k, v = line.split("=", 1)
        k = k.strip()
        if not k:
            raise ValueError(f"{source}:{n}: empty key")
        out[k] = v.strip()
    return out


def split_pair_spec(mapping):
    """Split a pair spec into ``(source_keys, private_classes, target_overrides)``."""
    base, target = {}, {}
    private = ()
    for k, v in mapping.items():
        if k == "private_classes":
            private = tuple(int(c) for c in v.split(",") if c.strip())
        elif k.startswith("target."):
            target[k[len("target."):]] = v
        else:
            base[k] = v
    return base, private, target


def pair_specs(mapping, seed=None, private=None):
    """Source and target ``SyntheticSpec`` from a pair-spec mapping.

    ``seed`` and ``private`` override the values in the mapping when given.
    """
    base, priv, overrides = split_pair_spec(mapping)
    if seed is not None:
        base["seed"] = str(seed)
    spec = SyntheticSpec.from_mapping(base)
    tgt_fields = SyntheticSpec.from_mapping({**base, **overrides})
    transform = {k: getattr(tgt_fields, k) for k in overrides}
    return target_spec(spec, private_classes=priv if private is None else private, **transform)


def load_pair(name, seed=0, private=None):
    """Generate the (source, target) datasets of a bundled preset."""
    src, tgt = pair_specs(parse_kv(PRESETS[name][0], name), seed=seed, private=private)
    return generate(src), generate(tgt)


def train_config(name, **overrides):
    return TrainConfig.from_mapping({**parse_kv(PRESETS[name][1], name), **overrides})


__all__ = ["PRESETS", "TOY_SPEC", "TOY_TRAIN", "UNIVERSAL_SPEC", "UNIVERSAL_TRAIN",
           "load_pair", "pair_specs", "parse_kv", "split_pair_spec", "train_config"]
