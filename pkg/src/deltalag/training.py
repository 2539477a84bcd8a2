"""Date-batched training with validation-IC early stopping."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SkipDate, TrainingError
from .evaluation import mean_ic
from .losses import get_loss
from .marketdata import FeaturePanel, Splits
from .model import Model, ModelConfig, init_params
from .tensorcore import AdamState, ParamSet, Tape, adam_step, take
from .tensorcore.gradcheck import relative_errors

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    seed: int = 0
    loss: str = "monotonic"
    shuffle: bool = True
    pair_cap: int | None = None

    def check(self) -> None:
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        get_loss(self.loss)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ic: float
    is_best: bool = False


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    skipped_dates: int = 0

    @property
    def best_epoch(self) -> int | None:
        for r in self.records:
            if r.is_best:
                return r.epoch
        return None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_ic", "is_best"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_ic), int(r.is_best)])


def sub_seed(seed: int, name: str) -> np.random.Generator:
    """Independent named streams derived from one run seed."""
    tags = {"data": 0, "init": 1, "shuffle": 2, "pairs": 3}
    return np.random.default_rng([seed, tags[name]])


def date_loss(model: Model, params: ParamSet, t: int, loss_fn, *, selection=None, selector=None,
              pair_cap=None, rng=None):
    """Loss of one date's cross-section (a scalar tensor); raises SkipDate if unusable."""
    cs = model.forward(t, params, selection=selection, selector=selector, with_assignments=False)
    realized = model.panel.next_return[t, cs.stocks]
    ok = np.flatnonzero(np.isfinite(realized))
    if ok.size < 2:
        raise SkipDate(f"date {t}: fewer than 2 labelled predictions")
    pred = cs.predictions if ok.size == cs.stocks.size else take(cs.predictions, ok)
    kwargs = {"pair_cap": pair_cap, "rng": rng} if pair_cap else {}
    return loss_fn(pred, realized[ok], **kwargs), cs


def gradient_check(model: Model, params: ParamSet, t: int, loss: str = "monotonic",
                   eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error of the full date loss against central differences.

    The top-k cells are frozen at their selection under ``params`` so that the
    loss is a smooth function of every parameter.
    """
    loss_fn = get_loss(loss)
    selection = None
    if model.config.uses_attention:
        selection = model.forward(t, params, with_assignments=False).selection
    return relative_errors(lambda p: date_loss(model, p, t, loss_fn, selection=selection)[0], params, eps=eps)


def step_date(model: Model, params: ParamSet, t: int, loss_fn, state: AdamState, *,
              selector=None, pair_cap=None, rng=None) -> float:
    """One forward/backward/Adam update on date t; raises SkipDate if unusable."""
    with Tape() as tape:
        loss, _ = date_loss(model, params, t, loss_fn, selector=selector, pair_cap=pair_cap, rng=rng)
    tape.backward(loss)
    adam_step(params, state)
    return loss.item()


def train(model_config: ModelConfig, train_config: TrainConfig, panel: FeaturePanel, splits: Splits,
          *, selector=None, params: ParamSet | None = None) -> tuple[ParamSet, TrainHistory]:
    """Fit on the train range, early-stop on mean validation IC, return best params.

    Only rows up to the last validation label date are ever read.
    """
    train_config.check()
    model = Model(model_config, panel)
    loss_fn = get_loss(train_config.loss)
    if params is None:
        params = init_params(model_config, sub_seed(train_config.seed, "init"))
        if selector is not None:
            params = ParamSet({k: v.data for k, v in params.items() if k.startswith("mlp.")})
    state = AdamState.for_params(params, lr=train_config.lr, beta1=train_config.beta1,
                                 beta2=train_config.beta2, eps=train_config.eps)
    shuffle_rng = sub_seed(train_config.seed, "shuffle")
    pair_rng = sub_seed(train_config.seed, "pairs")
    train_dates = splits.decision_dates("train")
    val_dates = splits.decision_dates("val")

    history = TrainHistory()
    best_ic, best_params, best_idx, waited = -math.inf, params.copy(), None, 0
    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(train_dates) if train_config.shuffle else train_dates
        losses = []
        for t in order:
            try:
                losses.append(step_date(model, params, int(t), loss_fn, state, selector=selector,
                                        pair_cap=train_config.pair_cap, rng=pair_rng))
            except SkipDate:
                history.skipped_dates += 1
        if not losses:
            raise TrainingError(
                f"every one of {len(train_dates)} training dates was skipped; check window length "
                f"L={model_config.L} against the train range and label availability"
            )
        val_ic = validation_ic(model, params, val_dates, selector)
        history.records.append(EpochRecord(epoch, float(np.mean(losses)), val_ic))
        log.info("epoch %d loss %.6f val_ic %.4f", epoch, history.records[-1].train_loss, val_ic)
        score = -math.inf if math.isnan(val_ic) else val_ic
        if best_idx is None or score > best_ic:
            best_ic, best_params, best_idx, waited = score, params.copy(), len(history.records) - 1, 0
        else:
            waited += 1
            if waited >= train_config.patience:
                break
    history.records[best_idx].is_best = True
    return best_params, history


def validation_ic(model: Model, params: ParamSet, dates, selector=None) -> float:
    return mean_ic(model, params, dates, selector=selector)
