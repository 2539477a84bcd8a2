"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Tape, Tensor
from .params import ParamSet


def relative_errors(
    f: Callable[[ParamSet], Tensor], params: ParamSet, eps: float = 1e-5
) -> dict[str, float]:
    """Max elementwise relative error per parameter.

    The denominator is max(1, |analytic|, |numeric|), so tiny gradients are
    judged on absolute error.
    """
    params.zero_grad()
    with Tape() as tape:
        loss = f(params)
    tape.backward(loss)
    analytic = {k: g.copy() for k, g in params.grads().items()}
    params.zero_grad()

    errors = {}
    for name, p in params.items():
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(params).item()
            flat[i] = orig - eps
            f_minus = f(params).item()
            flat[i] = orig
            num_flat[i] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
        errors[name] = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
    return errors


def grad_check(f: Callable[[ParamSet], Tensor], params: ParamSet, eps: float = 1e-5) -> float:
    errs = relative_errors(f, params, eps)
    return max(errs.values(), default=0.0)
