"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np


class NumericError(ArithmeticError):
    pass


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    for pos in np.ndindex(x.shape):
        orig = x[pos]
        x[pos] = orig + eps
        fp = f()
        x[pos] = orig - eps
        fm = f()
        x[pos] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite objective while perturbing entry {pos}")
        g[pos] = (fp - fm) / (2 * eps)
    return g


def grad_check(f, arrays: dict[str, np.ndarray], analytic: dict[str, np.ndarray], eps: float = 1e-5,
               max_entries: int | None = None, rng=None) -> float:
    """Largest ``|analytic - numeric| / max(1, |numeric|)`` over all checked entries.

    ``f`` must be deterministic and read the arrays in ``arrays`` each call.
    With ``max_entries`` set, a random subset of each array is probed
    (``rng`` picks it), which keeps large models tractable.
    """
    worst = 0.0
    for name, x in arrays.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite analytic gradient for {name}")
        if a.shape != x.shape:
            raise ValueError(f"{name}: gradient shape {a.shape} != parameter shape {x.shape}")
        if max_entries is None or x.size <= max_entries:
            idx = np.arange(x.size)
        else:
            idx = (rng or np.random.default_rng(0)).choice(x.size, max_entries, replace=False)
        for i in idx:
            # index through unravel_index so non-contiguous views are perturbed in place
            pos = np.unravel_index(i, x.shape)
            orig = x[pos]
            x[pos] = orig + eps
            fp = f()
            x[pos] = orig - eps
            fm = f()
            x[pos] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"non-finite objective while perturbing {name}[{i}]")
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(a.reshape(-1)[i] - num) / max(1.0, abs(num)))
    return worst
