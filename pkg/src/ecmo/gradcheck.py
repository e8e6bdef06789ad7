"""Central finite differences, independent of the tape.

The oracle only ever calls a forward function returning a float, perturbing
numpy buffers in place.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

STEP = 1e-6
# Below this magnitude the relative error is measured against the floor:
# round-off in a central difference is about eps*|f|/step, so smaller
# components cannot be resolved at step 1e-6.
REL_FLOOR = 1e-3


def numerical_grad(f: Callable[[], float], arrays: Sequence[np.ndarray], step: float = STEP):
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = f()
            flat[i] = old - step
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def max_rel_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray],
                  floor: float = REL_FLOOR) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            worst = max(worst, float(rel_error(a, n, floor).max()))
    return worst
