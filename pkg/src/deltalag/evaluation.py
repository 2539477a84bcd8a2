"""Trading metrics, long-short decile backtest and lead-lag analytics."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import SkipDate
from .marketdata import GroundTruth
from .model import LeadLagAssignment, Model
from .tensorcore import ParamSet

log = logging.getLogger(__name__)

TRADING_DAYS = 252


def daily_ic(predictions, realized) -> float:
    """Spearman rank correlation (average ranks for ties); NaN when undefined."""
    p = np.asarray(predictions, dtype=float)
    r = np.asarray(realized, dtype=float)
    if p.size < 2 or np.ptp(p) == 0 or np.ptp(r) == 0:
        return float("nan")
    rp, rr = rankdata(p), rankdata(r)
    rp -= rp.mean()
    rr -= rr.mean()
    return float(rp @ rr / math.sqrt((rp @ rp) * (rr @ rr)))


def decile_size(n: int, decile: float = 0.1) -> int:
    return math.ceil(Fraction(str(decile)) * n)


def long_short_return(predictions, realized, decile: float = 0.1, order: Sequence[int] | None = None):
    """Equal-weight top-decile minus bottom-decile realized return.

    Ties at a decile boundary go to the stock earlier in ``order`` (ticker
    order; defaults to position).  Returns (return, long indices, short indices).
    """
    p = np.asarray(predictions, dtype=float)
    r = np.asarray(realized, dtype=float)
    n = p.size
    q = decile_size(n, decile)
    if n < 2 or n < 2 * q:
        raise SkipDate(f"{n} stocks cannot fill disjoint deciles of size {q}")
    tie = np.arange(n) if order is None else np.asarray(order)
    long = np.lexsort((tie, -p))[:q]
    short = np.lexsort((tie, p))[:q]
    return float(r[long].mean() - r[short].mean()), long, short


def _mean(x: np.ndarray) -> float:
    # shifted mean: exact for constant series
    return float(x[0] + np.mean(x - x[0]))


def annualize(daily) -> tuple[float, float | None]:
    """AR = mean * 252 and SR = mean / std(ddof=1) * sqrt(252); SR is None for zero std."""
    r = np.asarray(daily, dtype=float)
    if r.size < 2:
        raise SkipDate("annualization needs at least 2 daily returns")
    mu = _mean(r)
    if np.all(r == r[0]):
        return TRADING_DAYS * mu, None
    return TRADING_DAYS * mu, mu / float(np.std(r, ddof=1)) * math.sqrt(TRADING_DAYS)


def cumulative_curve(daily) -> np.ndarray:
    return np.cumsum(np.asarray(daily, dtype=float))


# --- lead-lag analytics -------------------------------------------------------

def lag_histogram(assignments: Iterable[LeadLagAssignment]) -> dict[int, float]:
    counts = Counter(lag for a in assignments for lag in a.lags)
    total = sum(counts.values())
    if total == 0:
        return {}
    return {lag: counts[lag] / total for lag in sorted(counts)}


def concentration_by_date(assignments: Iterable[LeadLagAssignment]) -> list[tuple[dt.date, int, int]]:
    all_ranks: dict = defaultdict(set)
    rank1: dict = defaultdict(set)
    for a in assignments:
        if not a.leaders:
            continue
        all_ranks[a.date].update(a.leaders)
        rank1[a.date].add(a.leaders[0])
    return [(d, len(all_ranks[d]), len(rank1[d])) for d in sorted(all_ranks)]


def leader_concentration(assignments: Iterable[LeadLagAssignment]) -> tuple[float, float]:
    """Mean number of distinct leaders per date, over all ranks and over rank 1 only."""
    rows = concentration_by_date(assignments)
    if not rows:
        return float("nan"), float("nan")
    return float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows]))


def detection_accuracy(assignments: Iterable[LeadLagAssignment], truth: GroundTruth) -> tuple[float, float]:
    """(pair accuracy, leader-only accuracy) of rank-1 picks over planted laggers."""
    pair = lead = total = 0
    for a in assignments:
        if a.target not in truth.leader or not a.leaders:
            continue
        total += 1
        if a.leaders[0] == truth.leader[a.target]:
            lead += 1
            pair += a.lags[0] == truth.lag[a.target]
    if total == 0:
        return float("nan"), float("nan")
    return pair / total, lead / total


# --- backtest -----------------------------------------------------------------

@dataclass
class DailyResult:
    date: dt.date
    tickers: list[str]
    predictions: np.ndarray
    realized: np.ndarray
    long: list[str]
    short: list[str]
    ls_return: float
    ic: float


@dataclass
class BacktestReport:
    daily: list[DailyResult]
    ar: float
    sr: float | None
    ic_mean: float
    cumulative: np.ndarray
    lag_hist: dict[int, float]
    leaders_per_date: tuple[float, float]
    concentration: list[tuple[dt.date, int, int]]
    assignments: list[LeadLagAssignment] = field(default_factory=list)
    skips: dict[str, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "ic_mean": _json_float(self.ic_mean),
            "ar": _json_float(self.ar),
            "sr": _json_float(self.sr),
            "n_dates": len(self.daily),
            "leaders_per_date": _json_float(self.leaders_per_date[0]),
            "rank1_leaders_per_date": _json_float(self.leaders_per_date[1]),
            "skips": dict(sorted(self.skips.items())),
        }

    def write(self, outdir: str | Path) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        with open(out / "daily.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "ic", "ls_return", "cum_return"])
            for d, c in zip(self.daily, self.cumulative):
                w.writerow([d.date.isoformat(), "" if math.isnan(d.ic) else repr(d.ic),
                            repr(d.ls_return), repr(float(c))])
        with open(out / "lag_histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "share"])
            for lag, share in self.lag_hist.items():
                w.writerow([lag, repr(share)])
        with open(out / "concentration.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "unique_leaders", "unique_rank1_leaders"])
            for d, a, r1 in self.concentration:
                w.writerow([d.isoformat(), a, r1])
        write_assignments(self.assignments, out / "assignments.csv")


def _json_float(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return float(x)


def backtest(model: Model, params: ParamSet, dates: Iterable[int], selector=None,
             decile: float = 0.1) -> BacktestReport:
    """Daily long-short backtest over decision date indices ``dates``."""
    panel = model.panel
    daily: list[DailyResult] = []
    assignments: list[LeadLagAssignment] = []
    skips: Counter = Counter()
    for t in dates:
        cs = model.forward(int(t), params, selector=selector)
        skips["targets"] += len(cs.skipped)
        assignments.extend(cs.assignments)
        realized = panel.next_return[t, cs.stocks]
        ok = np.isfinite(realized)
        pred = cs.predictions.data[ok]
        r = realized[ok]
        names = [panel.tickers[u] for u in cs.stocks[ok]]
        try:
            ls, long, short = long_short_return(pred, r, decile)
        except SkipDate as exc:
            log.info("%s: long-short skipped (%s)", panel.dates[t], exc)
            skips["ls_dates"] += 1
            continue
        ic = daily_ic(pred, r)
        if math.isnan(ic):
            log.info("%s: IC undefined", panel.dates[t])
            skips["ic_dates"] += 1
        daily.append(DailyResult(panel.dates[t], names, pred, r,
                                 [names[i] for i in long], [names[i] for i in short], ls, ic))
    rets = np.array([d.ls_return for d in daily])
    ics = np.array([d.ic for d in daily])
    if rets.size >= 2:
        ar, sr = annualize(rets)
    else:
        ar, sr = float("nan"), None
    finite_ic = ics[np.isfinite(ics)]
    return BacktestReport(
        daily=daily,
        ar=ar,
        sr=sr,
        ic_mean=float(finite_ic.mean()) if finite_ic.size else float("nan"),
        cumulative=cumulative_curve(rets),
        lag_hist=lag_histogram(assignments),
        leaders_per_date=leader_concentration(assignments),
        concentration=concentration_by_date(assignments),
        assignments=assignments,
        skips=dict(skips),
    )


def mean_ic(model: Model, params: ParamSet, dates: Iterable[int], selector=None) -> float:
    """Mean daily Spearman IC without portfolio bookkeeping (used for validation)."""
    ics = []
    panel = model.panel
    for t in dates:
        cs = model.forward(int(t), params, selector=selector, with_assignments=False)
        realized = panel.next_return[t, cs.stocks]
        ok = np.isfinite(realized)
        ic = daily_ic(cs.predictions.data[ok], realized[ok])
        if not math.isnan(ic):
            ics.append(ic)
    return float(np.mean(ics)) if ics else float("nan")


# --- assignment dump ------------------------------------------------------------

ASSIGNMENT_COLUMNS = ("date", "target", "rank", "leader", "lag", "score", "weight")


def write_assignments(assignments: Iterable[LeadLagAssignment], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ASSIGNMENT_COLUMNS)
        for a in assignments:
            for rank, (v, lag, s, wt) in enumerate(zip(a.leaders, a.lags, a.scores, a.weights), start=1):
                w.writerow([a.date.isoformat(), a.target, rank, v, lag, repr(s), repr(wt)])


def read_assignments(path: str | Path) -> list[LeadLagAssignment]:
    grouped: dict[tuple[str, str], list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            grouped.setdefault((row["date"], row["target"]), []).append(row)
    out = []
    for (d, target), rows in grouped.items():
        rows.sort(key=lambda r: int(r["rank"]))
        out.append(LeadLagAssignment(
            target=target,
            date=dt.date.fromisoformat(d),
            leaders=tuple(r["leader"] for r in rows),
            lags=tuple(int(r["lag"]) for r in rows),
            scores=tuple(float(r["score"]) for r in rows),
            weights=tuple(float(r["weight"]) for r in rows),
        ))
    return out
