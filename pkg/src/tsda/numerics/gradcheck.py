"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .autograd import no_grad


def _scalar(value):
    v = float(np.asarray(getattr(value, "data", value)).reshape(()))
    if not np.isfinite(v):
        raise FloatingPointError("objective is not finite")
    return v


def grad_check(f, params, h=1e-5, max_coords=None, rng=None):
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    ``f(params)`` must return a scalar Tensor built from the tensors in ``params``.
    When ``max_coords`` is set, at most that many coordinates per parameter are probed
    (chosen with ``rng``).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    params.zero_grad()
    out = f(params)
    _scalar(out)
    out.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for name, p in params.items():
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = rng.choice(flat.size, size=max_coords, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                fp = _scalar(f(params))
                flat[i] = orig - h
                fm = _scalar(f(params))
                flat[i] = orig
                numeric = (fp - fm) / (2 * h)
                err = abs(analytic[name].reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    params.zero_grad()
    return worst
