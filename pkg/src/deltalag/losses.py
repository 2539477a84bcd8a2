"""Cross-sectional training objectives over one date's predictions.

Each loss takes the prediction tensor (shape (n,)) and the realized next-day
returns (plain array, shape (n,)) and returns a scalar tensor.  The ranking
losses sum over all ordered pairs (i, j), diagonal included.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, SkipDate
from .tensorcore import (
    Tensor,
    as_tensor,
    log1p_exp,
    mul,
    neg,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sqrt,
    square,
    sub,
    take,
    tanh,
)


def _check(pred, realized) -> tuple[Tensor, np.ndarray]:
    pred = as_tensor(pred)
    r = np.asarray(realized, dtype=np.float64)
    if pred.ndim != 1 or r.shape != pred.shape:
        raise DimensionError(f"predictions {pred.shape} and returns {r.shape} must be equal-length vectors")
    if pred.size == 0:
        raise DimensionError("empty cross-section")
    if not (np.all(np.isfinite(pred.data)) and np.all(np.isfinite(r))):
        raise DomainError("non-finite prediction or return")
    return pred, r


def _pair_differences(pred: Tensor, r: np.ndarray, pair_cap: int | None, rng):
    """(predicted diffs, realized diffs, scale) over all or a uniform sample of ordered pairs."""
    n = pred.size
    if pair_cap is None or n <= pair_cap:
        dp = sub(reshape(pred, (n, 1)), reshape(pred, (1, n)))
        return dp, r[:, None] - r[None, :], 1.0
    rng = rng if rng is not None else np.random.default_rng(0)
    m = pair_cap * pair_cap
    i = rng.integers(0, n, size=m)
    j = rng.integers(0, n, size=m)
    return sub(take(pred, i), take(pred, j)), r[i] - r[j], n * n / m


def pairwise_loss(pred, realized, pair_cap: int | None = None, rng=None) -> Tensor:
    """sum_ij max(0, -(p_i - p_j)(r_i - r_j))."""
    pred, r = _check(pred, realized)
    dp, dr, scale = _pair_differences(pred, r, pair_cap, rng)
    total = reduce_sum(relu(neg(mul(dp, dr))))
    return total if scale == 1.0 else mul(total, scale)


def monotonic_loss(pred, realized, pair_cap: int | None = None, rng=None) -> Tensor:
    """sum_ij log(1 + exp(-tanh(p_i - p_j) * tanh(r_i - r_j)))."""
    pred, r = _check(pred, realized)
    dp, dr, scale = _pair_differences(pred, r, pair_cap, rng)
    total = reduce_sum(log1p_exp(neg(mul(tanh(dp), np.tanh(dr)))))
    return total if scale == 1.0 else mul(total, scale)


def mse_loss(pred, realized, **_) -> Tensor:
    pred, r = _check(pred, realized)
    return reduce_mean(square(sub(pred, r)))


def ic_loss(pred, realized, **_) -> Tensor:
    """Negative Pearson correlation; raises SkipDate when either side is constant."""
    pred, r = _check(pred, realized)
    cp = sub(pred, reduce_mean(pred))
    cr = r - r.mean()
    ss_p = reduce_sum(square(cp))
    ss_r = float(np.sum(cr * cr))
    if ss_p.item() == 0 or ss_r == 0:
        raise SkipDate("IC loss undefined for a constant cross-section")
    cov = reduce_sum(mul(cp, cr))
    denom = mul(sqrt(ss_p), float(np.sqrt(ss_r)))
    return neg(cov / denom)


LOSSES = {
    "monotonic": monotonic_loss,
    "pairwise": pairwise_loss,
    "mse": mse_loss,
    "ic": ic_loss,
}


def get_loss(name: str):
    try:
        return LOSSES[name]
    except KeyError:
        raise ConfigError(f"unknown loss {name!r}; choose one of {sorted(LOSSES)}") from None
