"""OHLCV ingestion, price-volume features, rolling windows, splits and synthetic markets.

CSV schema (header required)::

    ticker,date,open,high,low,close,volume,shares_outstanding

Dates are ISO-8601; ``shares_outstanding`` may be empty.
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError, WindowUnavailable

CSV_COLUMNS = ("ticker", "date", "open", "high", "low", "close", "volume", "shares_outstanding")
FULL_FEATURES = ("open_ratio", "high_ratio", "low_ratio", "return", "log_volume", "turnover")
RETURN_FEATURES = ("return",)
TURNOVER_WINDOW = 20
CLIP = 5.0
LEADER_RETURN_SD = 0.02
INTRADAY_JITTER_SD = 0.005


@dataclass(frozen=True)
class Bar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float
    shares_outstanding: float | None = None

    def check(self) -> None:
        if not self.low > 0:
            raise DataError(f"{self.date}: low must be positive, got {self.low}")
        if self.low > min(self.open, self.close):
            raise DataError(f"{self.date}: low {self.low} above min(open, close)")
        if self.high < max(self.open, self.close):
            raise DataError(f"{self.date}: high {self.high} below max(open, close)")
        if self.volume < 0:
            raise DataError(f"{self.date}: negative volume {self.volume}")


# --- CSV ----------------------------------------------------------------------

def _read_one(path: Path) -> dict[str, list[Bar]]:
    bars: dict[str, list[Bar]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise ParseError(f"{path}: header must be {','.join(CSV_COLUMNS)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", line=lineno)
            ticker = row[0].strip()
            try:
                date = dt.date.fromisoformat(row[1].strip())
                o, h, lo, c, v = (float(x) for x in row[2:7])
                so = float(row[7]) if row[7].strip() else None
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if not ticker:
                raise ParseError("empty ticker", line=lineno)
            bar = Bar(date, o, h, lo, c, v, so)
            try:
                bar.check()
            except DataError as exc:
                raise ParseError(f"{ticker} {exc}", line=lineno) from None
            series = bars.setdefault(ticker, [])
            if series and series[-1].date >= date:
                kind = "duplicate" if series[-1].date == date else "non-monotone"
                raise DataError(f"{path} line {lineno}: {kind} date {date} for {ticker}")
            series.append(bar)
    return bars


def load_ohlcv(paths: str | Path | Iterable[str | Path]) -> dict[str, list[Bar]]:
    """Read one or more universe files into ticker -> date-ordered bars.

    A ticker may appear in only one file.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    out: dict[str, list[Bar]] = {}
    for p in paths:
        for ticker, series in _read_one(Path(p)).items():
            if ticker in out:
                raise DataError(f"duplicate ticker {ticker!r} across input files ({p})")
            out[ticker] = series
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_ohlcv(bars: Mapping[str, Sequence[Bar]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for ticker in sorted(bars):
            for b in bars[ticker]:
                so = "" if b.shares_outstanding is None else _fmt(b.shares_outstanding)
                vol = str(int(b.volume)) if float(b.volume).is_integer() else _fmt(b.volume)
                w.writerow([ticker, b.date.isoformat(), _fmt(b.open), _fmt(b.high), _fmt(b.low),
                            _fmt(b.close), vol, so])


# --- feature panel ------------------------------------------------------------

@dataclass
class FeaturePanel:
    """Dates x stocks x features, aligned so row t holds day-t features and r_{t+1}."""

    dates: list[dt.date]
    tickers: list[str]
    features: np.ndarray       # (T, S, F)
    valid: np.ndarray          # (T, S) bool
    next_return: np.ndarray    # (T, S); NaN where close_{t+1} or close_t is missing
    feature_names: tuple[str, ...] = FULL_FEATURES

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_stocks(self) -> int:
        return len(self.tickers)

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    def ticker_index(self, u: str | int) -> int:
        if isinstance(u, (int, np.integer)):
            return int(u)
        try:
            return self.tickers.index(u)
        except ValueError:
            raise KeyError(f"unknown ticker {u!r}") from None

    def date_index(self, d: dt.date | str | int) -> int:
        if isinstance(d, (int, np.integer)):
            return int(d)
        if isinstance(d, str):
            d = dt.date.fromisoformat(d)
        i = int(np.searchsorted(np.array(self.dates, dtype="datetime64[D]"), np.datetime64(d, "D")))
        if i >= len(self.dates) or self.dates[i] != d:
            raise KeyError(f"date {d} not in panel")
        return i


def _aligned(bars: Mapping[str, Sequence[Bar]]):
    tickers = sorted(bars)
    dates = sorted({b.date for s in bars.values() for b in s})
    pos = {d: i for i, d in enumerate(dates)}
    T, S = len(dates), len(tickers)
    cols = {k: np.full((T, S), np.nan) for k in ("open", "high", "low", "close", "volume", "shares", "mean_vol")}
    for j, tk in enumerate(tickers):
        series = bars[tk]
        if len(series) < 2:
            raise DataError(f"{tk}: need at least 2 bars, got {len(series)}")
        vols = np.array([b.volume for b in series], dtype=float)
        csum = np.concatenate([[0.0], np.cumsum(vols)])
        for k, b in enumerate(series):
            i = pos[b.date]
            cols["open"][i, j], cols["high"][i, j] = b.open, b.high
            cols["low"][i, j], cols["close"][i, j] = b.low, b.close
            cols["volume"][i, j] = b.volume
            if b.shares_outstanding is not None:
                cols["shares"][i, j] = b.shares_outstanding
            lo = max(0, k + 1 - TURNOVER_WINDOW)
            cols["mean_vol"][i, j] = (csum[k + 1] - csum[lo]) / (k + 1 - lo)
    return dates, tickers, cols


def compute_features(bars: Mapping[str, Sequence[Bar]], mode: str = "full") -> FeaturePanel:
    """Raw (unnormalized) price-volume features for every (day, stock).

    full mode, per (t, u): open/close - 1, high/close - 1, low/close - 1,
    close_t/close_{t-1} - 1, ln(1 + volume), and turnover = volume / shares
    outstanding (volume / trailing 20-bar mean volume when shares are absent).
    return_only keeps the daily return alone.  The return needs the previous
    panel date's close, so each ticker's first date is invalid.
    """
    if mode not in ("full", "return_only"):
        raise ConfigError(f"unknown feature mode {mode!r}")
    dates, tickers, c = _aligned(bars)
    close = c["close"]
    prev = np.vstack([np.full((1, close.shape[1]), np.nan), close[:-1]])
    if np.any(prev == 0):
        raise DataError("zero close price preceding a return")
    with np.errstate(invalid="ignore"):
        ret = close / prev - 1.0
        nxt = np.vstack([ret[1:], np.full((1, close.shape[1]), np.nan)])
    if mode == "full":
        vol = c["volume"]
        with np.errstate(invalid="ignore", divide="ignore"):
            fallback = np.where(c["mean_vol"] > 0, vol / c["mean_vol"], 0.0)
            turnover = np.where(np.isnan(c["shares"]), fallback, vol / c["shares"])
            feats = np.stack([
                c["open"] / close - 1.0,
                c["high"] / close - 1.0,
                c["low"] / close - 1.0,
                ret,
                np.log1p(vol),
                turnover,
            ], axis=-1)
        names = FULL_FEATURES
    else:
        feats = ret[..., None]
        names = RETURN_FEATURES
    valid = np.all(np.isfinite(feats), axis=-1)
    feats = np.where(valid[..., None], feats, np.nan)
    return FeaturePanel(dates, tickers, feats, valid, nxt, names)


@dataclass
class NormStats:
    """Clip bound plus the per-day cross-sectional location/scale last applied."""

    clip: float = CLIP
    location: np.ndarray | None = None  # (T, F), NaN on invalid days
    scale: np.ndarray | None = None


def normalize(panel: FeaturePanel, stats: NormStats | None = None) -> tuple[FeaturePanel, NormStats]:
    """Cross-sectional z-score per day and feature (population std), then clip.

    Days with fewer than two valid stocks, or with a feature that is constant
    across the valid stocks, become invalid for every stock.
    """
    clip = CLIP if stats is None else stats.clip
    T, S, F = panel.features.shape
    out = np.full_like(panel.features, np.nan)
    valid = panel.valid.copy()
    loc = np.full((T, F), np.nan)
    scl = np.full((T, F), np.nan)
    for t in range(T):
        m = panel.valid[t]
        if m.sum() < 2:
            valid[t] = False
            continue
        x = panel.features[t, m]
        if np.any(np.ptp(x, axis=0) == 0):
            valid[t] = False
            continue
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        loc[t], scl[t] = mu, sd
        out[t, m] = np.clip((x - mu) / sd, -clip, clip)
    return (replace(panel, features=out, valid=valid),
            NormStats(clip=clip, location=loc, scale=scl))


def window_mask(panel: FeaturePanel, L: int) -> np.ndarray:
    """(T, S) mask: True where rows t-L+1..t are all valid for the stock."""
    if L < 1:
        raise ConfigError("window length must be >= 1")
    cs = np.cumsum(np.vstack([np.zeros((1, panel.n_stocks), int), panel.valid.astype(int)]), axis=0)
    T = panel.n_dates
    out = np.zeros((T, panel.n_stocks), bool)
    if T >= L:
        out[L - 1:] = (cs[L:] - cs[:T - L + 1]) == L
    return out


def make_window(panel: FeaturePanel, u: str | int, t: int, L: int) -> np.ndarray:
    """L x F block for stock ``u`` whose row i is day t-L+1+i."""
    j = panel.ticker_index(u)
    if t - L + 1 < 0 or t >= panel.n_dates:
        raise WindowUnavailable(f"window of length {L} ending at {t} leaves the panel")
    rows = slice(t - L + 1, t + 1)
    if not panel.valid[rows, j].all():
        raise WindowUnavailable(f"{panel.tickers[j]}: invalid day inside window ending at {t}")
    return panel.features[rows, j].copy()


# --- chronological splits -----------------------------------------------------

@dataclass(frozen=True)
class Splits:
    """Ranges of *label* date indices.  A sample (u, t) belongs where t+1 falls."""

    train: range
    val: range
    test: range

    def decision_dates(self, which: str) -> np.ndarray:
        labels = getattr(self, which)
        return np.array([l - 1 for l in labels if l >= 1], dtype=int)


def split(panel: FeaturePanel, train_end, val_end) -> Splits:
    """Split at dates ``train_end`` and ``val_end`` (inclusive upper bounds)."""
    dates = np.array(panel.dates, dtype="datetime64[D]")

    def as_day(d):
        return np.datetime64(dt.date.fromisoformat(d) if isinstance(d, str) else d, "D")

    a, b = as_day(train_end), as_day(val_end)
    if not a < b:
        raise ConfigError(f"train_end {a} must precede val_end {b}")
    if not b < dates[-1]:
        raise ConfigError(f"val_end {b} must precede the last date {dates[-1]}")
    i = int(np.searchsorted(dates, a, side="right"))
    j = int(np.searchsorted(dates, b, side="right"))
    out = Splits(range(0, i), range(i, j), range(j, len(dates)))
    for name in ("train", "val", "test"):
        if len(getattr(out, name)) == 0:
            raise ConfigError(f"{name} range is empty")
    return out


def split_fractions(panel: FeaturePanel, train_frac: float, val_frac: float) -> Splits:
    T = panel.n_dates
    i = int(round(train_frac * T))
    j = int(round((train_frac + val_frac) * T))
    if not 0 < i < j < T:
        raise ConfigError(f"fractions {train_frac}, {val_frac} give empty ranges for {T} dates")
    return split(panel, panel.dates[i - 1], panel.dates[j - 1])


# --- synthetic markets --------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    n_stocks: int = 30
    n_days: int = 1000
    n_leaders: int = 5
    lag_range: tuple[int, int] = (1, 8)
    signal_coef: float = 1.0
    noise_sd: float = 0.02
    seed: int = 0
    start: str = "2010-01-04"

    def check(self) -> None:
        lo, hi = self.lag_range
        if not 1 <= self.n_leaders < self.n_stocks:
            raise ConfigError(f"need 1 <= n_leaders < n_stocks, got {self.n_leaders}, {self.n_stocks}")
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad lag_range {self.lag_range}")
        if self.n_days < 2 or self.noise_sd < 0:
            raise ConfigError("n_days must be >= 2 and noise_sd >= 0")


@dataclass
class GroundTruth:
    leader: dict[str, str]
    lag: dict[str, int]

    def laggers(self) -> list[str]:
        return sorted(self.leader)


def write_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lagger", "leader", "lag"])
        for u in truth.laggers():
            w.writerow([u, truth.leader[u], truth.lag[u]])


def read_ground_truth(path: str | Path) -> GroundTruth:
    leader, lag = {}, {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            leader[row["lagger"]] = row["leader"]
            lag[row["lagger"]] = int(row["lag"])
    return GroundTruth(leader, lag)


@dataclass
class SyntheticReturns:
    tickers: list[str]
    returns: np.ndarray                 # (n_days, S); row 0 is unused (zeros)
    regimes: list[tuple[int, GroundTruth]] = field(default_factory=list)


def _draw_map(rng, tickers, leaders, lag_range) -> GroundTruth:
    # balanced: leader loads differ by at most one, so with as many leaders as
    # laggers every leader drives exactly one lagger
    laggers = [t for t in tickers if t not in set(leaders)]
    slots = np.resize(np.arange(len(leaders)), len(laggers))
    lead = rng.permutation(slots)
    lags = rng.integers(lag_range[0], lag_range[1] + 1, size=len(laggers))
    return GroundTruth({u: leaders[i] for u, i in zip(laggers, lead)},
                       {u: int(l) for u, l in zip(laggers, lags)})


def simulate_returns(spec: SyntheticSpec, shift_days: Sequence[int] = ()) -> SyntheticReturns:
    """Daily returns with planted lead-lag wiring, one map per regime.

    Leaders: i.i.d. Normal(0, 0.02^2).  Lagger u on day d:
    r_u(d) = beta * r_{leader(u)}(d - lag(u)) + Normal(0, noise_sd^2).
    A new lagger -> (leader, lag) map is drawn at each day in ``shift_days``.
    """
    spec.check()
    rng = np.random.default_rng(spec.seed)
    tickers = [f"S{i:03d}" for i in range(spec.n_stocks)]
    leader_idx = np.sort(rng.choice(spec.n_stocks, size=spec.n_leaders, replace=False))
    leaders = [tickers[i] for i in leader_idx]
    starts = [0, *sorted(shift_days)]
    regimes = [(s, _draw_map(rng, tickers, leaders, spec.lag_range)) for s in starts]

    burn = spec.lag_range[1]
    D = spec.n_days
    lead_r = rng.normal(0.0, LEADER_RETURN_SD, size=(D + burn, spec.n_leaders))
    noise = rng.normal(0.0, spec.noise_sd, size=(D, spec.n_stocks)) if spec.noise_sd > 0 else np.zeros((D, spec.n_stocks))
    R = np.zeros((D, spec.n_stocks))
    col = {tk: k for k, tk in enumerate(leaders)}
    for k, i in enumerate(leader_idx):
        R[1:, i] = lead_r[burn + 1:, k]
    days = np.arange(1, D)
    bounds = [*starts[1:], D]
    for (start, gt), stop in zip(regimes, bounds):
        seg = days[(days >= max(start, 1)) & (days < stop)]
        for u, v in gt.leader.items():
            j = tickers.index(u)
            R[seg, j] = spec.signal_coef * lead_r[burn + seg - gt.lag[u], col[v]] + noise[seg, j]
    return SyntheticReturns(tickers, R, regimes)


def _bars_from_returns(spec: SyntheticSpec, sim: SyntheticReturns) -> dict[str, list[Bar]]:
    rng = np.random.default_rng([spec.seed, 1])
    D, S = sim.returns.shape
    if np.any(sim.returns <= -1):
        raise DataError("simulated return <= -100%; lower noise_sd or signal_coef")
    close = 100.0 * np.cumprod(1.0 + sim.returns, axis=0)
    opens = np.vstack([close[:1], close[:-1]])
    eta = np.abs(rng.normal(0.0, INTRADAY_JITTER_SD, size=(2, D, S)))
    high = np.maximum(opens, close) * (1.0 + eta[0])
    low = np.minimum(opens, close) * (1.0 - eta[1])
    volume = np.round(np.exp(rng.normal(np.log(1e6), 0.5, size=(D, S))))
    days = np.busday_offset(np.datetime64(spec.start, "D"), np.arange(D), roll="forward")
    dates = [d.item() for d in days]
    return {
        tk: [Bar(dates[d], float(opens[d, j]), float(high[d, j]), float(low[d, j]),
                 float(close[d, j]), float(volume[d, j])) for d in range(D)]
        for j, tk in enumerate(sim.tickers)
    }


def generate_synthetic(spec: SyntheticSpec) -> tuple[dict[str, list[Bar]], GroundTruth]:
    sim = simulate_returns(spec)
    return _bars_from_returns(spec, sim), sim.regimes[0][1]


def generate_regime_shift(spec: SyntheticSpec, shift_day: int) -> tuple[dict[str, list[Bar]], list[GroundTruth]]:
    """Like :func:`generate_synthetic`, with the lagger map redrawn at ``shift_day``."""
    if not 0 < shift_day < spec.n_days:
        raise ConfigError(f"shift_day {shift_day} outside (0, {spec.n_days})")
    sim = simulate_returns(spec, [shift_day])
    return _bars_from_returns(spec, sim), [gt for _, gt in sim.regimes]


def build_panel(bars: Mapping[str, Sequence[Bar]], mode: str = "full") -> FeaturePanel:
    """compute_features followed by cross-sectional normalization."""
    return normalize(compute_features(bars, mode))[0]
