"""Command-line entry point: ``tsda <command> [flags]``.

Commands: generate, adapt, infer, eval, ablate, probe. Configuration files are
flat ``key = value`` text with ``#`` comments; explicit flags override them.
Exit status is 0 on success, 1 on a usage error and 2 when a run fails.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data, detection
from .alignment import format_probe_table, probe_table
from .evaluation import UNKNOWN_LABEL, evaluate, format_grid, format_raw, run_grid
from .model import load_checkpoint, save_checkpoint
from .pipeline import TrainConfig, assign_classes, encode_all, stage1_align, stage2_correct, stage3_infer
from .presets import PRESETS, pair_specs, parse_kv

log = logging.getLogger("tsda")

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

# flag dest -> TrainConfig key
TRAIN_FLAGS = {
    "mode": "mode",
    "epochs_align": "epochs_align",
    "epochs_correct": "epochs_correct",
    "batch": "batch",
    "lr": "lr",
    "eta": "eta",
    "modes": "modes",
    "divergence": "divergence",
    "seed": "seed",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _setup_logging():
    level = os.environ.get("TSDA_LOG", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"TSDA_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _read_config(ref, which):
    """``ref`` is a file path or the name of a bundled preset. ``which`` picks the
    preset part: 0 for the data spec, 1 for the training config."""
    if ref is None:
        return {}
    p = Path(ref)
    if p.is_file():
        return parse_kv(p.read_text(), str(p))
    if ref in PRESETS:
        return parse_kv(PRESETS[ref][which], ref)
    raise UsageError(f"no such config file or preset: {ref}")


def train_config_from_args(args):
    mapping = _read_config(args.config, 1)
    for dest, key in TRAIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            mapping[key] = v
    if getattr(args, "no_frequency", False):
        mapping["frequency_branch"] = "false"
    if getattr(args, "no_correction", False):
        mapping["correction"] = "false"
    try:
        return TrainConfig.from_mapping(mapping)
    except KeyError as exc:
        raise UsageError(f"bad training config: {exc.args[0]}") from None
    except ValueError as exc:
        raise UsageError(f"bad training config: {exc}") from None


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path, what):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return data.load(p)


def _write(path, text):
    Path(path).write_text(text)
    log.info("wrote %s", path)


# -- commands -------------------------------------------------------------------

def cmd_generate(args):
    mapping = _read_config(args.spec, 0)
    try:
        src, tgt = pair_specs(mapping, seed=args.seed)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad data spec: {exc}") from None
    out = _out_dir(args.out)
    S, T = data.generate(src), data.generate(tgt)
    data.save(S, out / "source.tsda")
    data.save(T, out / "target.tsda")
    _write(out / "spec.cfg", pair_echo(src, tgt))
    print(f"source: {len(S)} samples, classes {sorted(S.class_inventory())}")
    print(f"target: {len(T)} samples, classes {sorted(T.class_inventory())}")
    return 0


def pair_echo(src, tgt):
    """Pair spec text that regenerates exactly this source/target pair."""
    a, b = parse_kv(src.to_text()), parse_kv(tgt.to_text())
    private = [c for c in src.exclude_classes if c not in tgt.exclude_classes]
    lines = ["# tsda generate", src.to_text().rstrip("\n"),
             "private_classes = " + ",".join(str(c) for c in private)]
    for k, v in b.items():
        if k not in ("seed", "domain", "exclude_classes") and a[k] != v:
            lines.append(f"target.{k} = {v}")
    return "\n".join(lines) + "\n"


def _echo(cfg, args):
    head = f"# tsda {args.command}\nsource_path = {args.source}\ntarget_path = {args.target}\n"
    return head + cfg.to_text()


def cmd_adapt(args):
    cfg = train_config_from_args(args)
    S, T = _load(args.source, "source"), _load(args.target, "target")
    if not S.has_labels:
        raise UsageError("the source file carries no labels")
    out = _out_dir(args.out)
    _write(out / "config.cfg", _echo(cfg, args))
    T = T.without_labels()
    model, trace, opt_state = stage1_align(S, T, cfg)
    _write(out / "align_trace.csv", trace.to_text())
    save_checkpoint(out / "model_align.ckpt", model)
    if cfg.correction:
        corrected, *_, ctrace = stage2_correct(T, model, cfg, opt_state if cfg.resume_optimizer else None)
        _write(out / "correct_trace.csv", ctrace.to_text())
        save_checkpoint(out / "model_correct.ckpt", corrected)
    return 0


def _run_config(run):
    p = Path(run) / "config.cfg"
    if not p.is_file():
        raise UsageError(f"{run} is not a run directory (config.cfg missing)")
    mapping = parse_kv(p.read_text(), str(p))
    keep = {f.name for f in fields(TrainConfig)}
    return TrainConfig.from_mapping({k: v for k, v in mapping.items() if k in keep})


def cmd_infer(args):
    run = Path(args.run)
    cfg = _run_config(run)
    T = _load(args.target, "target").without_labels()
    model_a, _ = load_checkpoint(run / "model_align.ckpt")
    _, assigned, d_align = assign_classes(model_a, T.x)
    d_corr = None
    if cfg.mode == "universal":
        ck = run / "model_correct.ckpt"
        if ck.is_file():
            model_c, _ = load_checkpoint(ck)
            d_corr = detection.prototype_distance(encode_all(model_c, T.x), model_c.prototypes[assigned])
        else:
            d_corr = d_align.copy()
    preds, records, decisions = stage3_infer(T, model_a, cfg, assigned, d_align, d_corr)
    out = _out_dir(args.out or run)
    _write(out / "predictions.csv", format_predictions(preds))
    if records is not None:
        _write(out / "verdicts.csv", detection.format_verdicts(records))
        _write(out / "decisions.csv", format_decisions(decisions))
    n_unknown = int(np.sum(preds == UNKNOWN_LABEL))
    print(f"{len(preds)} predictions, {n_unknown} unknown")
    return 0


def format_predictions(preds):
    lines = ["sample_id,prediction"]
    for i, p in enumerate(preds):
        lines.append(f"{i},{'unknown' if p == UNKNOWN_LABEL else int(p)}")
    return "\n".join(lines) + "\n"


def parse_predictions(text):
    rows = text.strip().splitlines()
    if not rows or rows[0].strip() != "sample_id,prediction":
        raise ValueError("not a prediction table")
    out = []
    for n, line in enumerate(rows[1:], 2):
        sid, p = line.split(",")
        if int(sid) != n - 2:
            raise ValueError(f"line {n}: sample ids must run 0, 1, 2, ...")
        out.append(UNKNOWN_LABEL if p.strip() == "unknown" else int(p))
    return np.array(out, dtype=np.int64)


def format_decisions(decisions):
    lines = ["class,n,dip,p_value,bimodal,mu1,mu2,skipped"]
    for c, d in sorted(decisions.items()):
        mu1 = "" if d.mu1 is None else f"{d.mu1:.10g}"
        mu2 = "" if d.mu2 is None else f"{d.mu2:.10g}"
        lines.append(f"{c},{d.n},{d.dip:.10g},{d.p_value:.10g},{d.bimodal},{mu1},{mu2},{d.skipped}")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    p = Path(args.predictions)
    if not p.is_file():
        raise UsageError(f"predictions file not found: {p}")
    try:
        preds = parse_predictions(p.read_text())
    except ValueError as exc:
        raise UsageError(f"{p}: {exc}") from None
    T = _load(args.labels, "labels")
    if not T.has_labels:
        raise UsageError("the labels file carries no labels")
    known = _load(args.source, "source").class_inventory() if args.source else None
    report = evaluate(preds, T.labels, known_classes=known, n_classes=T.n_classes)
    out = _out_dir(args.out)
    _write(out / "metrics.txt", report.summary_text())
    _write(out / "confusion.csv", report.confusion_text())
    sys.stdout.write(report.summary_text())
    return 0


def cmd_ablate(args):
    cfg = train_config_from_args(args)
    S, T = _load(args.source, "source"), _load(args.target, "target")
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = _out_dir(args.out)
    _write(out / "config.cfg", _echo(cfg, args) + f"seeds = {args.seeds}\n")
    raw, table = run_grid(S, T, cfg, seeds=seeds, jobs=args.jobs)
    _write(out / "grid_raw.csv", format_raw(raw))
    _write(out / "grid.csv", format_grid(table))
    sys.stdout.write(format_grid(table))
    failed = sum(1 for c in raw if not c["ok"])
    return 2 if failed == len(raw) else 0


def cmd_probe(args):
    try:
        shifts = [float(s) for s in args.shifts.split(",")]
    except ValueError:
        raise UsageError(f"--shifts must be comma-separated numbers, got {args.shifts!r}") from None
    if any(s < 0 for s in shifts):
        raise UsageError("shifts must be >= 0")
    text = format_probe_table(probe_table(shifts=tuple(shifts), seed=args.seed or 0))
    if args.out:
        _write(_out_dir(args.out) / "probe.csv", text)
    sys.stdout.write(text)
    return 0


# -- parser ---------------------------------------------------------------------

def _train_flags(p):
    p.add_argument("--config", help="training config file or preset name")
    p.add_argument("--mode", choices=("closed_set", "universal"))
    p.add_argument("--epochs-align", type=int, dest="epochs_align")
    p.add_argument("--epochs-correct", type=int, dest="epochs_correct")
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--modes", type=int)
    p.add_argument("--divergence", choices=("sinkhorn", "mmd"))
    p.add_argument("--no-frequency", action="store_true", dest="no_frequency")
    p.add_argument("--no-correction", action="store_true", dest="no_correction")
    p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="tsda", description="Time-series domain adaptation runs.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic source/target pair")
    p.add_argument("--spec", required=True, help="pair spec file or preset name (%s)" % ", ".join(PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("adapt", help="align and correct; write traces and checkpoints")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    _train_flags(p)

    p = sub.add_parser("infer", help="predictions and verdicts from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", help="defaults to the run directory")

    p = sub.add_parser("eval", help="metrics from a prediction table and a labelled file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--source", help="labelled source file; its classes are the known ones")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="the six-row ablation grid")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--jobs", type=int, default=1)
    _train_flags(p)

    p = sub.add_parser("probe", help="divergence gradient norms against shift")
    p.add_argument("--shifts", default="0,2,5,10,20,50")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "adapt": cmd_adapt,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "probe": cmd_probe,
}


def main(argv=None):
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        print(f"tsda: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
