"""Classification metrics and the ablation grid."""
from __future__ import annotations

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

log = logging.getLogger(__name__)

UNKNOWN_LABEL = -1


def _check(preds, labels):
    preds = np.asarray(preds).astype(np.int64).ravel()
    labels = np.asarray(labels).astype(np.int64).ravel()
    if preds.size == 0:
        raise ValueError("no predictions")
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.size} predictions for {labels.size} labels")
    return preds, labels


def accuracy(preds, labels):
    preds, labels = _check(preds, labels)
    return float(np.mean(preds == labels))


def per_class_f1(preds, labels, classes):
    out = {}
    for c in classes:
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        denom = 2 * tp + fp + fn
        out[c] = 0.0 if denom == 0 else 2.0 * tp / denom
    return out


def macro_f1(preds, labels, n_classes=None):
    """Unweighted mean of per-class F1 over the classes that occur in ``labels``.

    A class that only shows up in the predictions has no support and is skipped.
    """
    preds, labels = _check(preds, labels)
    if n_classes is not None and (labels.min() < UNKNOWN_LABEL or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    classes = np.unique(labels)
    f1 = per_class_f1(preds, labels, classes)
    return float(np.mean([f1[c] for c in classes]))


def h_score(ca_c, ca_u):
    for v in (ca_c, ca_u):
        if not 0.0 <= v <= 1.0:
            raise ValueError("class accuracies must lie in [0, 1]")
    if ca_c + ca_u == 0:
        return 0.0
    return 2.0 * ca_c * ca_u / (ca_c + ca_u)


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    per_class_f1: dict
    confusion: np.ndarray
    labels_order: list
    ca_c: float
    ca_u: float
    h_score: float
    n: int

    def summary_text(self):
        keys = ("accuracy", "macro_f1", "ca_c", "ca_u", "h_score")
        lines = [f"{k}={getattr(self, k):.6f}" for k in keys]
        lines.append(f"n={self.n}")
        for c in self.labels_order:
            name = "unknown" if c == UNKNOWN_LABEL else str(c)
            lines.append(f"f1_{name}={self.per_class_f1.get(c, 0.0):.6f}")
        return "\n".join(lines) + "\n"

    def confusion_text(self):
        names = ["unknown" if c == UNKNOWN_LABEL else str(c) for c in self.labels_order]
        rows = ["true\\pred," + ",".join(names)]
        for name, r in zip(names, self.confusion):
            rows.append(name + "," + ",".join(str(int(v)) for v in r))
        return "\n".join(rows) + "\n"


def evaluate(preds, labels, known_classes=None, n_classes=None):
    """Metrics for predictions that may contain ``UNKNOWN_LABEL``.

    Labels outside ``known_classes`` (target-private classes) count as unknown.
    A common-class sample predicted unknown counts as wrong for CA_c. With no
    private samples CA_u is 0 and the H-score is 0 by convention.
    """
    preds, labels = _check(preds, labels)
    if known_classes is not None:
        known = np.isin(labels, list(known_classes))
        truth = np.where(known, labels, UNKNOWN_LABEL)
    else:
        known = np.ones(labels.size, dtype=bool)
        truth = labels
    top = n_classes if n_classes is not None else int(max(labels.max(), preds.max())) + 1
    order = list(range(top))
    if np.any(truth == UNKNOWN_LABEL) or np.any(preds == UNKNOWN_LABEL):
        order.append(UNKNOWN_LABEL)
    pos = {c: i for i, c in enumerate(order)}
    conf = np.zeros((len(order), len(order)), dtype=np.int64)
    for t, p in zip(truth, preds):
        conf[pos[int(t)], pos[int(p)]] += 1
    present = np.unique(truth)
    f1 = per_class_f1(preds, truth, order)
    ca_c = float(np.mean(preds[known] == truth[known])) if known.any() else 0.0
    ca_u = float(np.mean(preds[~known] == UNKNOWN_LABEL)) if (~known).any() else 0.0
    return MetricsReport(
        accuracy=float(np.mean(preds == truth)),
        macro_f1=float(np.mean([f1[c] for c in present])),
        per_class_f1=f1,
        confusion=conf,
        labels_order=order,
        ca_c=ca_c,
        ca_u=ca_u,
        h_score=h_score(ca_c, ca_u),
        n=int(labels.size),
    )


# -- ablation grid -----------------------------------------------------------------

# (frequency_branch, divergence, correction) for each row of the ablation table
ABLATION_ROWS = (
    (True, "sinkhorn", True),
    (True, "sinkhorn", False),
    (False, "sinkhorn", False),
    (True, "mmd", False),
    (False, "sinkhorn", True),
    (True, "mmd", True),
)

GRID_METRICS = ("accuracy", "macro_f1", "ca_c", "ca_u", "h_score")


def _run_cell(args):
    row, seed, source, target, cfg = args
    from .pipeline import adapt

    try:
        res = adapt(source, target, cfg)
        m = res.metrics
        return {"row": row, "seed": seed, "ok": True, **{k: getattr(m, k) for k in GRID_METRICS}}
    except Exception as exc:  # a failed cell is recorded, the grid goes on
        log.warning("grid row %d seed %d failed: %s", row, seed, exc)
        return {"row": row, "seed": seed, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc()}


def run_grid(source, target, base_cfg, rows=ABLATION_ROWS, seeds=(0,), jobs=1):
    """Run every (row, seed) cell and aggregate mean/std per row.

    Returns ``(raw, table)``: raw cell dicts in submission order and one dict per
    row with the toggles, ``n_ok`` and ``<metric>_mean`` / ``<metric>_std``.
    """
    if not target.has_labels:
        raise ValueError("the grid needs a labelled target for scoring")
    cells = []
    for r, (freq, div, corr) in enumerate(rows, 1):
        for s in seeds:
            cfg = replace(base_cfg, frequency_branch=freq, divergence=div, correction=corr, seed=int(s))
            cells.append((r, int(s), source, target, cfg))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            raw = list(ex.map(_run_cell, cells))
    else:
        raw = [_run_cell(c) for c in cells]
    table = []
    for r, (freq, div, corr) in enumerate(rows, 1):
        ok = [c for c in raw if c["row"] == r and c["ok"]]
        entry = {"row": r, "frequency_branch": freq, "divergence": div, "correction": corr,
                 "n_ok": len(ok), "n_failed": sum(1 for c in raw if c["row"] == r and not c["ok"])}
        for k in GRID_METRICS:
            vals = np.array([c[k] for c in ok])
            entry[f"{k}_mean"] = float(vals.mean()) if vals.size else float("nan")
            entry[f"{k}_std"] = float(vals.std()) if vals.size else float("nan")
        table.append(entry)
    return raw, table


def format_grid(table):
    cols = ["row", "frequency_branch", "divergence", "correction", "n_ok", "n_failed"]
    cols += [f"{k}_{s}" for k in GRID_METRICS for s in ("mean", "std")]
    out = [",".join(cols)]
    for e in table:
        cells = []
        for c in cols:
            v = e[c]
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def format_raw(raw):
    cols = ["row", "seed", "ok"] + list(GRID_METRICS) + ["error"]
    out = [",".join(cols)]
    for c in raw:
        vals = [str(c["row"]), str(c["seed"]), str(c["ok"])]
        vals += [f"{c[k]:.6f}" if c["ok"] else "" for k in GRID_METRICS]
        vals.append("" if c["ok"] else c["error"].replace(",", ";"))
        out.append(",".join(vals))
    return "\n".join(out) + "\n"


__all__ = [
    "ABLATION_ROWS",
    "MetricsReport",
    "accuracy",
    "evaluate",
    "format_grid",
    "format_raw",
    "h_score",
    "macro_f1",
    "run_grid",
]
