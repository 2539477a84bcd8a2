"""Offline lagged-correlation graph baselines (Lag1 / LagAll CorrGraph).

Correlations use raw daily returns.  Entry (v, u) of the lag-tau matrix is the
Pearson correlation of r_{v, s-tau+1} with r_{u, s+1} over the trailing window,
which is the same lag convention as the learned model: tau = 1 pairs the
leader's same-day return with the lagger's next-day return.

A graph "as of" decision date t only reads returns realized on or before day
t-1, so editing any bar dated t or later leaves it unchanged.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .marketdata import FeaturePanel
from .model import LeadLagAssignment, aggregate_signal, lagged_features, predict, topk_indices
from .tensorcore import ParamSet, Tensor

DEFAULT_LAGS = tuple(range(1, 11))
DEFAULT_WINDOW = 250
DEFAULT_REFRESH = 20


@dataclass
class LaggedCorrGraph:
    """Per-lag |S| x |S| correlation matrices; NaN marks a missing entry."""

    lags: tuple[int, ...]
    corr: np.ndarray            # (len(lags), S, S), [i, v, u]
    window: int
    as_of: int                  # decision date index
    as_of_date: dt.date | None = None
    tickers: list[str] = field(default_factory=list)

    def matrix(self, tau: int) -> np.ndarray:
        return self.corr[self.lags.index(tau)]


def lagged_corr(panel: FeaturePanel, tau: int, window: int = DEFAULT_WINDOW, as_of: int | None = None) -> np.ndarray:
    """|S| x |S| matrix of corr(r_{v, s-tau+1}, r_{u, s+1}) over the ``window`` latest s with s+1 <= as_of-1."""
    if tau < 1:
        raise ConfigError(f"lag must be >= 1, got {tau}")
    if window < 3:
        raise ConfigError(f"correlation window must be >= 3, got {window}")
    t = panel.n_dates if as_of is None else as_of
    S = panel.n_stocks
    out = np.full((S, S), np.nan)
    hi = t - 2                      # last s, so that s + 1 = t - 1
    lo = hi - window + 1
    if lo - tau < 0:
        return out
    rets = panel.next_return        # row s holds r_{s+1}
    y = rets[lo:hi + 1]             # r_{u, s+1}
    x = rets[lo - tau:hi + 1 - tau]  # r_{v, s-tau+1} = next_return[s - tau]
    ok_x = np.all(np.isfinite(x), axis=0)
    ok_y = np.all(np.isfinite(y), axis=0)
    xc = np.where(ok_x, x, 0.0) - np.where(ok_x, x, 0.0).mean(axis=0)
    yc = np.where(ok_y, y, 0.0) - np.where(ok_y, y, 0.0).mean(axis=0)
    sx = np.sqrt((xc * xc).sum(axis=0))
    sy = np.sqrt((yc * yc).sum(axis=0))
    ok_x &= np.ptp(x, axis=0) > 0   # exact constancy; centred sums carry rounding residue
    ok_y &= np.ptp(y, axis=0) > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (xc.T @ yc) / np.outer(sx, sy)
    good = np.outer(ok_x, ok_y)
    out[good] = np.clip(c[good], -1.0, 1.0)
    return out


def corr_graph(panel: FeaturePanel, as_of: int, lags: Sequence[int] = DEFAULT_LAGS,
               window: int = DEFAULT_WINDOW) -> LaggedCorrGraph:
    lags = tuple(int(x) for x in lags)
    mats = np.stack([lagged_corr(panel, tau, window, as_of) for tau in lags])
    date = panel.dates[as_of] if as_of < panel.n_dates else None
    return LaggedCorrGraph(lags, mats, window, as_of, date, list(panel.tickers))


def select_leaders_offline(graph: LaggedCorrGraph, u: int, k: int, mode: str = "lagall",
                           allowed: np.ndarray | None = None) -> LeadLagAssignment:
    """Top-k (leader, lag) cells for lagger index ``u`` by correlation value.

    Cells are laid out like the attention matrix (rows = other stocks in ticker
    order, column j = lag l_max - j) so ties resolve exactly as in top-k
    attention.  ``allowed`` optionally masks cells, shape (S, len(lags)).
    """
    if mode == "lag1":
        if 1 not in graph.lags:
            raise ConfigError("lag1 mode needs lag 1 in the graph")
        lags = (1,)
        corr = graph.matrix(1)[None]
        mask = None if allowed is None else allowed[:, [graph.lags.index(1)]]
    elif mode == "lagall":
        lags, corr, mask = graph.lags, graph.corr, allowed
    else:
        raise ConfigError(f"unknown CorrGraph mode {mode!r}; choose 'lag1' or 'lagall'")
    if k < 1:
        raise ConfigError("k must be >= 1")
    S = corr.shape[1]
    rows = [v for v in range(S) if v != u]
    # column j <-> descending lag, mirroring the attention layout
    col_order = np.argsort(lags)[::-1]
    cells = corr[col_order][:, rows, u].T                       # (S-1, n_lags)
    if mask is not None:
        cells = np.where(mask[rows][:, col_order], cells, np.nan)
    scores = np.where(np.isfinite(cells), cells, -np.inf)
    n_ok = int(np.isfinite(cells).sum())
    tickers = graph.tickers or [str(i) for i in range(S)]
    target = tickers[u]
    take_k = min(k, n_ok)
    if take_k < k:
        warnings.warn(f"{target}: only {n_ok} correlation entries available, wanted k={k}", stacklevel=2)
    if take_k == 0:
        return LeadLagAssignment(target, graph.as_of_date, (), (), (), ())
    width = cells.shape[1]
    flat = topk_indices(scores.reshape(-1), take_k)
    pos = [(int(f // width), int(f % width)) for f in flat]
    vals = np.array([cells[i, j] for i, j in pos])
    w = np.exp(vals - vals.max())
    w /= w.sum()
    return LeadLagAssignment(
        target=target,
        date=graph.as_of_date,
        leaders=tuple(tickers[rows[i]] for i, _ in pos),
        lags=tuple(int(lags[col_order[j]]) for _, j in pos),
        scores=tuple(float(v) for v in vals),
        weights=tuple(float(x) for x in w),
        positions=tuple(pos),
    )


class CorrGraphSelector:
    """Detection frozen to precomputed graphs, pluggable into the model forward pass.

    Graphs are rebuilt every ``refresh`` decision dates (anchored at multiples
    of ``refresh``).  With ``frozen_as_of`` set, no graph later than that date
    is ever built.
    """

    def __init__(self, panel: FeaturePanel, k: int = 2, mode: str = "lagall",
                 lags: Sequence[int] = DEFAULT_LAGS, window: int = DEFAULT_WINDOW,
                 refresh: int = DEFAULT_REFRESH, frozen_as_of: int | None = None):
        if refresh < 1:
            raise ConfigError("refresh must be >= 1")
        self.panel = panel
        self.k = k
        self.mode = mode
        self.lags = tuple(lags) if mode == "lagall" else (1,)
        self.window = window
        self.refresh = refresh
        self.frozen_as_of = frozen_as_of
        self.graphs: dict[int, LaggedCorrGraph] = {}

    def anchor(self, t: int) -> int:
        a = (t // self.refresh) * self.refresh
        if self.frozen_as_of is not None:
            a = min(a, self.frozen_as_of)
        return a

    def graph(self, t: int) -> LaggedCorrGraph:
        a = self.anchor(t)
        if a not in self.graphs:
            self.graphs[a] = corr_graph(self.panel, a, self.lags, self.window)
        return self.graphs[a]

    def assignment(self, t: int, u: int) -> LeadLagAssignment:
        g = self.graph(t)
        src = t - np.asarray(g.lags) + 1
        allowed = np.zeros((self.panel.n_stocks, len(g.lags)), dtype=bool)
        inside = src >= 0
        allowed[:, inside] = self.panel.valid[src[inside]].T
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return select_leaders_offline(g, u, self.k, self.mode, allowed=allowed)

    def __call__(self, t: int, stocks: np.ndarray) -> list[list[tuple[int, int, float]]]:
        out = []
        for u in stocks:
            a = self.assignment(t, int(u))
            out.append([(self.panel.ticker_index(v), lag, s) for v, lag, s in a.triples()])
        return out

    def write_cache(self, path: str | Path) -> None:
        write_graph_cache(list(self.graphs.values()), path)

    def load_cache(self, path: str | Path) -> None:
        for g in read_graph_cache(path, self.panel, self.window):
            self.graphs[g.as_of] = g


def predict_from_graph(assignments: Sequence[LeadLagAssignment], panel: FeaturePanel, t: int,
                       params: ParamSet) -> tuple[list[str], Tensor]:
    """Predictions for date index ``t`` through the shared aggregation and MLP.

    Targets with an empty assignment are skipped; returns (targets, predictions).
    """
    targets, z = [], []
    for a in assignments:
        if not a.leaders:
            continue
        z.append(aggregate_signal(np.array(a.scores), lagged_features(panel, t, a)).data)
        targets.append(a.target)
    if not targets:
        return [], Tensor(np.zeros(0))
    return targets, predict(np.stack(z), params)


# --- graph cache ------------------------------------------------------------------

CACHE_COLUMNS = ("as_of", "leader", "lagger", "lag", "corr")


def write_graph_cache(graphs: Sequence[LaggedCorrGraph], path: str | Path) -> None:
    """One row per finite entry, graphs in as-of order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CACHE_COLUMNS)
        for g in sorted(graphs, key=lambda g: g.as_of):
            if g.as_of_date is None:
                raise ConfigError("graph cache needs dated graphs")
            for i, tau in enumerate(g.lags):
                m = g.corr[i]
                for v, u in zip(*np.nonzero(np.isfinite(m))):
                    w.writerow([g.as_of_date.isoformat(), g.tickers[v], g.tickers[u], tau, repr(float(m[v, u]))])


def read_graph_cache(path: str | Path, panel: FeaturePanel, window: int = DEFAULT_WINDOW) -> list[LaggedCorrGraph]:
    rows: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CACHE_COLUMNS:
            raise DimensionError(f"graph cache header must be {','.join(CACHE_COLUMNS)}")
        for row in reader:
            rows.setdefault(row["as_of"], []).append(row)
    out = []
    S = panel.n_stocks
    for day, entries in rows.items():
        lags = tuple(sorted({int(r["lag"]) for r in entries}))
        corr = np.full((len(lags), S, S), np.nan)
        for r in entries:
            val = float(r["corr"])
            if math.isfinite(val):
                corr[lags.index(int(r["lag"])), panel.ticker_index(r["leader"]), panel.ticker_index(r["lagger"])] = val
        date = dt.date.fromisoformat(day)
        out.append(LaggedCorrGraph(lags, corr, window, panel.date_index(date), date, list(panel.tickers)))
    return out
