"""Unknown-sample detection from the drift of prototype distances.

Each target sample is assigned to a class by its nearest prototype before the
correction stage. The change of its cosine distance to that prototype across
correction is its drift. Classes whose drift distribution is bimodal (dip test)
are split by 2-means and the high-drift cluster is rejected as unknown.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

log = logging.getLogger(__name__)

MIN_DIP_SAMPLES = 4
KNOWN, UNKNOWN = "known", "unknown"


def prototype_distance(z, w):
    """Cosine distance 1 - cos(z, w), in [0, 2]. Works row-wise when ``z`` is 2-D."""
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    zn = np.linalg.norm(z, axis=-1)
    wn = np.linalg.norm(w, axis=-1)
    if np.any(zn == 0) or np.any(wn == 0):
        raise ValueError("cosine distance undefined for a zero vector")
    cos = np.sum(z * w, axis=-1) / (zn * wn)
    return 1.0 - np.clip(cos, -1.0, 1.0)


def drift(d_align, d_correct):
    return np.abs(np.asarray(d_align, dtype=np.float64) - np.asarray(d_correct, dtype=np.float64))


def dip_statistic(samples):
    """Hartigan's dip of a sample: sup distance from its ECDF to the nearest unimodal CDF.

    Greatest-convex-minorant / least-concave-majorant cycling over the modal
    interval, working in units of 1/(2n) until the end. The minimum value is 1/(2n).
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n < MIN_DIP_SAMPLES:
        raise ValueError(f"dip test needs at least {MIN_DIP_SAMPLES} samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample")
    if x[0] == x[-1]:
        return 1.0 / (2 * n)
    x = np.concatenate([[np.nan], x])  # 1-based indexing from here on
    xl = x.tolist()

    # mn: previous vertex of the convex minorant ending at j
    mn = [0] * (n + 1)
    mn[1] = 1
    for j in range(2, n + 1):
        mn[j] = j - 1
        while True:
            a = mn[j]
            b = mn[a]
            if a == 1 or (xl[j] - xl[a]) * (a - b) < (xl[a] - xl[b]) * (j - a):
                break
            mn[j] = b
    # mj: next vertex of the concave majorant starting at k
    mj = [0] * (n + 1)
    mj[n] = n
    for k in range(n - 1, 0, -1):
        mj[k] = k + 1
        while True:
            a = mj[k]
            b = mj[a]
            if a == n or (xl[k] - xl[a]) * (a - b) < (xl[a] - xl[b]) * (k - a):
                break
            mj[k] = b

    dip = 1.0
    low, high = 1, n
    while True:
        gcm = [0, high]
        while gcm[-1] > low:
            gcm.append(mn[gcm[-1]])
        l_gcm = len(gcm) - 1
        lcm = [0, low]
        while lcm[-1] < high:
            lcm.append(mj[lcm[-1]])
        l_lcm = len(lcm) - 1
        ig, ih = l_gcm, l_lcm
        ix, iv = l_gcm - 1, 2

        d = 0.0
        if l_gcm != 2 or l_lcm != 2:
            while True:
                gx, lv = gcm[ix], lcm[iv]
                if gx > lv:
                    g1 = gcm[ix + 1]
                    dx = (lv - g1 + 1) - (xl[lv] - xl[g1]) * (gx - g1) / (xl[gx] - xl[g1])
                    iv += 1
                    if dx >= d:
                        d, ig, ih = dx, ix + 1, iv - 1
                else:
                    l1 = lcm[iv - 1]
                    dx = (xl[gx] - xl[l1]) * (lv - l1) / (xl[lv] - xl[l1]) - (gx - l1 - 1)
                    ix -= 1
                    if dx >= d:
                        d, ig, ih = dx, ix + 1, iv
                ix = max(ix, 1)
                iv = min(iv, l_lcm)
                if gcm[ix] == lcm[iv]:
                    break
        else:
            d = 1.0
        if d < dip:
            break

        dip_l = 0.0
        for j in range(ig, l_gcm):
            hi_, lo_ = gcm[j], gcm[j + 1]
            best = 1.0
            if hi_ - lo_ > 1 and xl[hi_] != xl[lo_]:
                c = (hi_ - lo_) / (xl[hi_] - xl[lo_])
                for jj in range(lo_, hi_ + 1):
                    best = max(best, (jj - lo_ + 1) - (xl[jj] - xl[lo_]) * c)
            dip_l = max(dip_l, best)
        dip_u = 0.0
        for j in range(ih, l_lcm):
            lo_, hi_ = lcm[j], lcm[j + 1]
            best = 1.0
            if hi_ - lo_ > 1 and xl[hi_] != xl[lo_]:
                c = (hi_ - lo_) / (xl[hi_] - xl[lo_])
                for jj in range(lo_, hi_ + 1):
                    best = max(best, (xl[jj] - xl[lo_]) * c - (jj - lo_ - 1))
            dip_u = max(dip_u, best)
        dip = max(dip, dip_l, dip_u)

        if low == gcm[ig] and high == lcm[ih]:
            break
        low, high = gcm[ig], lcm[ih]
    return dip / (2 * n)


@lru_cache(maxsize=64)
def _null_dips(n, B, seed):
    rng = np.random.default_rng(seed)
    out = np.array([dip_statistic(rng.random(n)) for _ in range(B)])
    out.setflags(write=False)
    return out


def dip_pvalue(dip, n, B=1000, seed=0):
    """Fraction of ``B`` uniform samples of size ``n`` whose dip is >= ``dip``."""
    if n < MIN_DIP_SAMPLES:
        raise ValueError(f"dip test needs at least {MIN_DIP_SAMPLES} samples, got {n}")
    if B < 100:
        raise ValueError("use at least 100 bootstrap draws")
    if dip <= 0:
        return 1.0
    null = _null_dips(int(n), int(B), int(seed))
    # a tiny slack absorbs round-off when the observed dip is itself a null value
    return float(np.mean(null >= dip - 1e-12))


def kmeans2(values, seed=0, max_iter=100, tol=1e-9):
    """Two-centroid Lloyd iterations on scalars.

    Centroids start at the 10th and 90th percentiles, so ``seed`` only breaks
    an empty-cluster restart. If the exact best contiguous split has a lower
    within-cluster sum of squares than the Lloyd fixed point, it is returned instead. Returns ``(mu1, mu2, assignments)`` with
    ``mu1 <= mu2`` and assignments in {0, 1} indexing the sorted centroids.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if np.unique(v).size < 2:
        raise ValueError("2-means needs at least two distinct values")
    rng = np.random.default_rng(seed)
    c = np.percentile(v, [10.0, 90.0])
    if c[0] == c[1]:
        c = np.array([v.min(), v.max()])
    for _ in range(max_iter):
        assign = (np.abs(v - c[1]) < np.abs(v - c[0])).astype(int)
        new = c.copy()
        for k in (0, 1):
            members = v[assign == k]
            new[k] = members.mean() if members.size else v[rng.integers(v.size)]
        moved = np.max(np.abs(new - c))
        c = new
        if moved < tol:
            break
    c = np.sort(c)
    best = _best_split(v)
    if best is not None and _sse(v, best) < _sse(v, c) - 1e-12:
        # Lloyd stopped in a local optimum; on a line the best split is contiguous
        c = best
    assign = (np.abs(v - c[1]) < np.abs(v - c[0])).astype(int)
    return float(c[0]), float(c[1]), assign


def _sse(v, c):
    return float(np.sum(np.minimum((v - c[0]) ** 2, (v - c[1]) ** 2)))


def _best_split(v):
    """Centroids of the optimal 2-partition of scalars, via prefix sums over sorted values."""
    s = np.sort(v)
    n = s.size
    k = np.arange(1, n)
    cs, cs2 = np.cumsum(s), np.cumsum(s * s)
    left = cs2[:-1] - cs[:-1] ** 2 / k
    right = (cs2[-1] - cs2[:-1]) - (cs[-1] - cs[:-1]) ** 2 / (n - k)
    # only cut between distinct values so both clusters are separable by a midpoint
    ok = s[1:] > s[:-1]
    if not ok.any():
        return None
    cost = np.where(ok, left + right, np.inf)
    j = int(np.argmin(cost)) + 1
    return np.array([s[:j].mean(), s[j:].mean()])


@dataclass
class BimodalDecision:
    cls: int
    n: int
    dip: float = float("nan")
    p_value: float = 1.0
    bimodal: bool = False
    mu1: float | None = None
    mu2: float | None = None
    skipped: bool = False


@dataclass
class DriftRecord:
    sample_id: int
    assigned_class: int
    d_align: float
    d_correct: float
    drift: float = field(init=False)
    verdict: str | None = None

    def __post_init__(self):
        self.drift = float(abs(self.d_align - self.d_correct))


def bimodal_test(drifts, cls, alpha=0.05, B=1000, seed=0):
    drifts = np.asarray(drifts, dtype=np.float64)
    dec = BimodalDecision(cls=int(cls), n=int(drifts.size))
    if drifts.size < MIN_DIP_SAMPLES:
        dec.skipped = True
        log.info("class %d: %d samples, dip test skipped", cls, drifts.size)
        return dec
    dec.dip = dip_statistic(drifts)
    dec.p_value = dip_pvalue(dec.dip, drifts.size, B=B, seed=seed)
    if dec.p_value < alpha and np.unique(drifts).size >= 2:
        dec.bimodal = True
        dec.mu1, dec.mu2, _ = kmeans2(drifts, seed=seed)
    return dec


def reject(records, decisions, seed=0):
    """Set verdicts in place: high-drift 2-means cluster of each bimodal class -> unknown."""
    by_class = {}
    for r in records:
        by_class.setdefault(r.assigned_class, []).append(r)
    for c, rs in by_class.items():
        dec = decisions.get(c)
        if dec is None or not dec.bimodal:
            for r in rs:
                r.verdict = KNOWN
            continue
        _, _, assign = kmeans2([r.drift for r in rs], seed=seed)
        for r, a in zip(rs, assign):
            r.verdict = UNKNOWN if a == 1 else KNOWN
    return records


def detect(records, alpha=0.05, B=1000, seed=0):
    """Dip test per assigned class, then :func:`reject`. Returns the decisions by class."""
    by_class = {}
    for r in records:
        by_class.setdefault(r.assigned_class, []).append(r.drift)
    decisions = {c: bimodal_test(v, c, alpha=alpha, B=B, seed=seed) for c, v in sorted(by_class.items())}
    reject(records, decisions, seed=seed)
    return decisions


VERDICT_HEADER = "sample_id,assigned_class,d_align,d_correct,drift,verdict"


def format_verdicts(records):
    lines = [VERDICT_HEADER]
    for r in records:
        lines.append(
            f"{r.sample_id},{r.assigned_class},{r.d_align:.10g},{r.d_correct:.10g},{r.drift:.10g},{r.verdict}"
        )
    return "\n".join(lines) + "\n"


def parse_verdicts(text):
    rows = text.strip().splitlines()
    if not rows or rows[0].strip() != VERDICT_HEADER:
        raise ValueError("not a verdict table")
    out = []
    for line in rows[1:]:
        sid, c, da, dc, _, v = line.split(",")
        r = DriftRecord(int(sid), int(c), float(da), float(dc))
        r.verdict = v
        out.append(r)
    return out


__all__ = [
    "BimodalDecision",
    "DriftRecord",
    "KNOWN",
    "UNKNOWN",
    "bimodal_test",
    "detect",
    "dip_pvalue",
    "dip_statistic",
    "drift",
    "format_verdicts",
    "kmeans2",
    "parse_verdicts",
    "prototype_distance",
    "reject",
]
