"""Central finite-difference gradients, the oracle for every backward pass."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..errors import NumericError


def finite_diff_grad(
    f: Callable[[], float], params: dict[str, np.ndarray], h: float = 1e-5
) -> dict[str, np.ndarray]:
    """Numeric gradient of ``f`` with respect to each array in ``params``.

    ``f`` takes no arguments and must read the arrays in ``params``; they are
    perturbed in place and restored bit-exactly afterwards.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    out = {}
    for name, p in params.items():
        grad = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = grad.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError(f"parameter {name!r} is not contiguous")
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            fp = f()
            flat[k] = old - h
            fm = f()
            flat[k] = old
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"objective is non-finite near {name}[{k}]")
            gflat[k] = (fp - fm) / (2.0 * h)
        out[name] = grad
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative error ``max|a - n| / max(max|a|, max|n|)`` of one tensor."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    diff = float(np.max(np.abs(analytic - numeric), initial=0.0))
    if scale == 0.0:
        return diff
    return diff / scale


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> tuple[float, str]:
    worst, worst_name = 0.0, ""
    for name, n in numeric.items():
        err = relative_error(analytic[name], n)
        if err > worst or not worst_name:
            worst, worst_name = err, name
    return worst, worst_name
