"""Finite-difference verification of backward rules.

The oracle is independent of the tape: it re-runs the forward function with
perturbed inputs and compares central differences against the analytic
gradients produced by :func:`sdl.tensor.backward`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


class GradCheckError(RuntimeError):
    """Raised when a forward pass produces NaN during checking."""


def gradcheck(
    fn: Callable[[], Tensor],
    wrt: Sequence[Tensor],
    seed: int = 0,
    h: float = 1e-3,
    max_coords: int = 64,
) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``fn`` must rebuild the scalar loss from the current values of the
    tensors in ``wrt`` on every call.  Per tensor, a random subsample of up
    to ``max_coords`` coordinates is probed with central differences.
    Tensors should be float64 for the tight (1e-4) tolerance.
    """
    rng = np.random.default_rng(seed)

    for t in wrt:
        t.zero_grad()
    with Tape() as tape:
        loss = fn()
    if not np.isfinite(loss.item()):
        raise GradCheckError("gradcheck: loss is non-finite")
    backward(loss, tape)

    worst = 0.0
    for t in wrt:
        analytic = t.grad
        if analytic is None:
            analytic = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"gradcheck: NaN forward while probing coordinate {i}")
            numeric = (fp - fm) / (2.0 * h)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
