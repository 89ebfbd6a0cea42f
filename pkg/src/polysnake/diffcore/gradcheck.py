from __future__ import annotations

from typing import Callable

import numpy as np

from .array import DiffArray, GradTape, precision


class GradCheckError(RuntimeError):
    pass


def grad_check(f: Callable[[DiffArray], DiffArray], x, eps: float = 1e-5) -> float:
    """Max relative error between tape gradient and central differences.

    ``f`` maps a DiffArray to a scalar DiffArray and must be deterministic.
    Runs in float64. The error per component is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    with precision(np.float64):
        x0 = np.array(x.value if isinstance(x, DiffArray) else x, dtype=np.float64)
        xa = DiffArray(x0, requires_grad=True)
        with GradTape() as tape:
            out = f(xa)
        if out.value.size != 1:
            raise GradCheckError(f"grad_check needs a scalar output, got shape {out.shape}")
        tape.backward(out)
        analytic = xa.grad
        if not np.all(np.isfinite(analytic)):
            raise GradCheckError("analytic gradient has non-finite entries")

        numeric = np.zeros_like(x0)
        flat = x0.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(f(DiffArray(x0)).value)
            flat[i] = old - eps
            fm = float(f(DiffArray(x0)).value)
            flat[i] = old
            nflat[i] = (fp - fm) / (2 * eps)
        if not np.all(np.isfinite(numeric)):
            raise GradCheckError("finite differences produced non-finite values")
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        return float(err.max()) if err.size else 0.0
