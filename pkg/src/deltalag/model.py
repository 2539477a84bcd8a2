"""Lead-lag attention network and its fixed-lag / self-only ablations.

Lag convention: key row j of a candidate's key matrix comes from encoder
step L - l_max + j, i.e. the candidate's day t - (l_max - j) + 1.  Lag
tau = l_max - j, so tau = 1 is the candidate's most recent day t and the
raw feature used for a (leader, tau) pair is x_{leader, t - tau + 1}.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .marketdata import FeaturePanel, window_mask
from .tensorcore import (
    ParamSet,
    Tensor,
    add,
    as_tensor,
    concat,
    encoder_forward,
    init_encoder,
    matmul,
    mul,
    reduce_sum,
    relu,
    reshape,
    row_softmax,
    slice_,
    take,
    transpose,
    xavier_uniform,
)

VARIANTS = ("deltalag", "lag1net", "selflagnet", "selflag1")
FEATURE_MODES = ("raw", "embedding")


@dataclass(frozen=True)
class ModelConfig:
    L: int = 30
    l_max: int = 10
    N: int = 64
    F: int = 6
    k: int = 2
    variant: str = "deltalag"
    feature_mode: str = "raw"
    mlp_hidden: tuple[int, ...] = (32,)

    def check(self, n_stocks: int | None = None) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"unknown feature_mode {self.feature_mode!r}")
        if not 1 <= self.l_max <= self.L:
            raise ConfigError(f"need 1 <= l_max <= L, got l_max={self.l_max}, L={self.L}")
        if self.k < 1 or self.N < 1 or self.F < 1:
            raise ConfigError("k, N and F must be positive")
        if self.variant == "selflag1" and self.feature_mode == "embedding":
            raise ConfigError("selflag1 has no encoder; feature_mode must be 'raw'")
        if self.variant == "selflagnet" and self.k > self.l_max:
            raise ConfigError(f"selflagnet needs k <= l_max, got k={self.k}")
        if n_stocks is not None and self.variant in ("deltalag", "lag1net"):
            cells = (n_stocks - 1) * self.lags_scored
            if self.k > cells:
                raise ConfigError(f"k={self.k} exceeds the {cells} attention cells")

    @property
    def uses_attention(self) -> bool:
        return self.variant != "selflag1"

    @property
    def lags_scored(self) -> int:
        return 1 if self.variant == "lag1net" else self.l_max

    @property
    def mlp_in(self) -> int:
        return self.N if self.feature_mode == "embedding" else self.F

    @property
    def window(self) -> int:
        """Days of history a stock needs on date t."""
        return self.L if self.uses_attention else 1


def init_params(config: ModelConfig, seed: int | np.random.Generator = 0) -> ParamSet:
    config.check()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    if config.uses_attention:
        arrays.update(init_encoder(rng, config.F, config.N))
        arrays["attn.W_Q"] = xavier_uniform(rng, config.N, config.N)
        arrays["attn.W_K"] = xavier_uniform(rng, config.N, config.N)
    arrays.update(init_mlp(rng, config.mlp_in, config.mlp_hidden))
    return ParamSet(arrays)


def init_mlp(rng: np.random.Generator, n_in: int, hidden: Sequence[int]) -> dict[str, np.ndarray]:
    sizes = [n_in, *hidden, 1]
    out = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        out[f"mlp.W{i}"] = xavier_uniform(rng, a, b)
        out[f"mlp.b{i}"] = np.zeros(b)
    return out


# --- domain records -----------------------------------------------------------

@dataclass
class AttentionMatrix:
    """Scores of one target against every other stock (rows) and lag (columns).

    Column j is lag l_max - j; rows follow ``candidates`` (ascending tickers).
    """

    target: str
    date: dt.date | None
    candidates: list[str]
    scores: Tensor

    @property
    def l_max(self) -> int:
        return self.scores.shape[1]


@dataclass
class LeadLagAssignment:
    target: str
    date: dt.date | None
    leaders: tuple[str, ...]
    lags: tuple[int, ...]
    scores: tuple[float, ...]
    weights: tuple[float, ...]
    positions: tuple[tuple[int, int], ...] = field(default=(), compare=False, repr=False)  # matrix cells, not dumped

    def triples(self) -> list[tuple[str, int, float]]:
        return list(zip(self.leaders, self.lags, self.scores))


@dataclass
class CrossSection:
    """Output of one date's forward pass over every stock with a full window."""

    t: int
    date: dt.date
    stocks: np.ndarray                       # panel stock indices, ascending
    predictions: Tensor                      # (len(stocks),)
    assignments: list[LeadLagAssignment] = field(default_factory=list)
    selection: np.ndarray | None = None      # (n, k) flat score-column indices
    scores: np.ndarray | None = None         # raw score matrix used for selection
    skipped: list[tuple[dt.date, str, str]] = field(default_factory=list)

    def realized(self, panel: FeaturePanel) -> np.ndarray:
        return panel.next_return[self.t, self.stocks]


# --- per-target building blocks --------------------------------------------------

def make_query(hidden, W_Q) -> Tensor:
    """Query row vector from the last encoder step: X'[L-1] @ W^Q, shape (1, N)."""
    hidden = as_tensor(hidden)
    L = hidden.shape[0]
    return matmul(slice_(hidden, slice(L - 1, L)), W_Q)


def make_keys(hidden, W_K, l_max: int) -> Tensor:
    """Key matrix X'[L-l_max:L] @ W^K, shape (l_max, N); row j is lag l_max - j."""
    hidden = as_tensor(hidden)
    L = hidden.shape[0]
    if l_max > L:
        raise DimensionError(f"l_max={l_max} exceeds window length {L}")
    return matmul(slice_(hidden, slice(L - l_max, L)), W_K)


def attention_scores(q, keys: Sequence, candidates: Sequence[str] | None = None,
                     target: str = "", date: dt.date | None = None) -> AttentionMatrix:
    """Stack the raw dot products q . K_v^T, one row per candidate (no scaling)."""
    q = as_tensor(q)
    shapes = {as_tensor(k).shape for k in keys}
    if len(shapes) != 1:
        raise DimensionError(f"key matrices must share a shape, got {shapes}")
    rows = [matmul(q, transpose(as_tensor(K))) for K in keys]
    names = list(candidates) if candidates is not None else [str(i) for i in range(len(keys))]
    return AttentionMatrix(target, date, names, concat(rows, axis=0))


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the k largest entries of each row of ``scores``.

    Descending by value; ties go to the smaller flat (row-major) index.
    ``-inf`` entries are never preferred over finite ones.
    """
    s = np.asarray(scores, dtype=np.float64)
    flat = s.reshape(s.shape[0], -1) if s.ndim > 1 else s.reshape(1, -1)
    if k > flat.shape[1]:
        raise DimensionError(f"k={k} exceeds {flat.shape[1]} entries")
    order = np.argsort(-flat, axis=1, kind="stable")[:, :k]
    return order if s.ndim > 1 else order[0]


def topk_select(A: AttentionMatrix, k: int) -> LeadLagAssignment:
    scores = A.scores.data
    l_max = scores.shape[1]
    if k > scores.size:
        raise DimensionError(f"k={k} exceeds {scores.size} attention cells")
    idx = topk_indices(scores.reshape(-1), k)
    pos = [(int(f // l_max), int(f % l_max)) for f in idx]
    vals = np.array([scores[i, j] for i, j in pos])
    return LeadLagAssignment(
        target=A.target,
        date=A.date,
        leaders=tuple(A.candidates[i] for i, _ in pos),
        lags=tuple(l_max - j for _, j in pos),
        scores=tuple(float(v) for v in vals),
        weights=tuple(float(w) for w in _softmax(vals)),
        positions=tuple(pos),
    )


def selected_scores(A: AttentionMatrix, assignment: LeadLagAssignment) -> Tensor:
    """Differentiable gather of the selected cells (indices are constants)."""
    l_max = A.l_max
    flat = [i * l_max + j for i, j in assignment.positions]
    return take(reshape(A.scores, (A.scores.size,)), flat)


def aggregate_signal(scores, vectors) -> Tensor:
    """Softmax-weighted sum of ``vectors`` (..., k, d) by ``scores`` (..., k)."""
    scores, vectors = as_tensor(scores), as_tensor(vectors)
    if vectors.shape[:-1] != scores.shape:
        raise DimensionError(f"scores {scores.shape} do not match vectors {vectors.shape}")
    w = row_softmax(scores)
    return reduce_sum(mul(reshape(w, (*w.shape, 1)), vectors), axis=-2)


def lagged_features(panel: FeaturePanel, t: int, assignment: LeadLagAssignment) -> np.ndarray:
    """Raw features x_{v, t - tau + 1} for each selected (v, tau), shape (k, F)."""
    rows = [panel.features[t - tau + 1, panel.ticker_index(v)] for v, tau in zip(assignment.leaders, assignment.lags)]
    return np.stack(rows)


def predict(z, params: ParamSet) -> Tensor:
    """MLP with relu hidden layers and a linear scalar head; z is (d,) or (B, d)."""
    z = as_tensor(z)
    squeeze = z.ndim == 1
    h = reshape(z, (1, z.shape[0])) if squeeze else z
    n_layers = sum(1 for name in params if name.startswith("mlp.W"))
    if params["mlp.W0"].shape[0] != h.shape[1]:
        raise DimensionError(f"MLP expects input size {params['mlp.W0'].shape[0]}, got {h.shape[1]}")
    for i in range(n_layers):
        h = add(matmul(h, params[f"mlp.W{i}"]), params[f"mlp.b{i}"])
        if i < n_layers - 1:
            h = relu(h)
    return reshape(h, () if squeeze else (h.shape[0],))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


# --- cross-sectional forward ----------------------------------------------------

Selector = Callable[[int, np.ndarray], list]


class Model:
    """Binds a config to a panel; caches window availability."""

    def __init__(self, config: ModelConfig, panel: FeaturePanel):
        if panel.n_features != config.F:
            raise ConfigError(f"panel has {panel.n_features} features, config expects F={config.F}")
        config.check(panel.n_stocks)
        self.config = config
        self.panel = panel
        self.available = window_mask(panel, config.window)

    def stocks_on(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.available[t])

    def forward(self, t: int, params: ParamSet, *, selection: np.ndarray | None = None,
                selector: Selector | None = None, with_assignments: bool = True) -> CrossSection:
        return forward_cross_section(t, self.config, params, self.panel, available=self.available,
                                     selection=selection, selector=selector,
                                     with_assignments=with_assignments)


def forward_cross_section(
    t: int,
    config: ModelConfig,
    params: ParamSet,
    panel: FeaturePanel,
    *,
    available: np.ndarray | None = None,
    selection: np.ndarray | None = None,
    selector: Selector | None = None,
    with_assignments: bool = True,
) -> CrossSection:
    """Predict every stock that has a full window on date index ``t``.

    The encoder runs once over the whole cross-section.  ``selection`` freezes
    the top-k cells (as returned in ``CrossSection.selection``) so that the
    map params -> loss is smooth for finite-difference checks.  ``selector``
    replaces learned detection with precomputed (leader, lag, score) lists.
    """
    if available is None:
        available = window_mask(panel, config.window)
    V = np.flatnonzero(available[t])
    date = panel.dates[t]
    cs = CrossSection(t=t, date=date, stocks=V, predictions=Tensor(np.zeros(0)))
    n = V.size
    if n < 2:
        cs.stocks = V[:0]
        cs.skipped.extend((date, panel.tickers[u], "fewer than 2 stocks with a full window") for u in V)
        return cs
    if selector is not None:
        return _forward_selector(cs, config, params, panel, selector, with_assignments)
    if config.variant == "selflag1":
        cs.predictions = predict(panel.features[t, V], params)
        if with_assignments:
            cs.assignments = []
        return cs

    L, N = config.L, config.N
    X = panel.features[t - L + 1:t + 1][:, V, :]
    H = encoder_forward(X, params)                               # (L, n, N)
    Q = matmul(slice_(H, L - 1), params["attn.W_Q"])             # (n, N)
    m = config.lags_scored
    Hk = reshape(transpose(slice_(H, slice(L - m, L)), (1, 0, 2)), (n * m, N))
    K = matmul(Hk, params["attn.W_K"])                           # (n*m, N), row v*m + j

    if config.variant == "selflagnet":
        A = reduce_sum(mul(reshape(Q, (n, 1, N)), reshape(K, (n, m, N))), axis=2)   # (n, m)
        masked = A.data
    else:
        A = matmul(Q, transpose(K))                              # (n, n*m)
        masked = A.data.copy()
        for u in range(n):
            masked[u, u * m:(u + 1) * m] = -np.inf
    width = A.shape[1]
    if selection is None:
        if config.k > (width - (0 if config.variant == "selflagnet" else m)):
            cs.stocks = V[:0]
            cs.skipped.extend((date, panel.tickers[u], "fewer than k selectable cells") for u in V)
            return cs
        selection = topk_indices(masked, config.k)
    cols = np.asarray(selection, dtype=int)
    chosen = take(reshape(A, (n * width,)), np.arange(n)[:, None] * width + cols)   # (n, k)

    if config.variant == "selflagnet":
        leader_local = np.repeat(np.arange(n)[:, None], config.k, axis=1)
        j = cols
    else:
        leader_local, j = cols // m, cols % m
    lags = m - j
    if config.feature_mode == "raw":
        vectors = panel.features[t - lags + 1, V[leader_local], :]              # (n, k, F)
    else:
        pos = L - lags
        vectors = take(reshape(H, (L * n, N)), pos * n + leader_local)          # (n, k, N)
    z = aggregate_signal(chosen, vectors)
    cs.predictions = predict(z, params)
    cs.selection = cols
    cs.scores = A.data
    if with_assignments:
        vals = chosen.data
        w = np.exp(vals - vals.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        for r, u in enumerate(V):
            if config.variant == "selflagnet":
                rows = [0] * config.k
            else:
                rows = [lv if lv < r else lv - 1 for lv in leader_local[r]]
            cs.assignments.append(LeadLagAssignment(
                target=panel.tickers[u],
                date=date,
                leaders=tuple(panel.tickers[V[lv]] for lv in leader_local[r]),
                lags=tuple(int(x) for x in lags[r]),
                scores=tuple(float(x) for x in vals[r]),
                weights=tuple(float(x) for x in w[r]),
                positions=tuple((int(i), int(jj)) for i, jj in zip(rows, j[r])),
            ))
    return cs


def _forward_selector(cs: CrossSection, config: ModelConfig, params: ParamSet, panel: FeaturePanel,
                      selector: Selector, with_assignments: bool) -> CrossSection:
    """Prediction with detection frozen to precomputed (leader, lag, score) picks."""
    t, V = cs.t, cs.stocks
    picks = selector(t, V)
    keep, rows = [], []
    for u, pick in zip(V, picks):
        if not pick:
            cs.skipped.append((cs.date, panel.tickers[u], "no precomputed leaders"))
            continue
        leaders, lags, scores = (np.asarray(x) for x in zip(*pick))
        if np.any(t - lags + 1 < 0) or not np.all(panel.valid[t - lags + 1, leaders]):
            cs.skipped.append((cs.date, panel.tickers[u], "missing lagged leader features"))
            continue
        w = _softmax(scores.astype(float))
        rows.append(w @ panel.features[t - lags + 1, leaders, :])
        keep.append(u)
        if with_assignments:
            cs.assignments.append(LeadLagAssignment(
                target=panel.tickers[u], date=cs.date,
                leaders=tuple(panel.tickers[v] for v in leaders),
                lags=tuple(int(x) for x in lags),
                scores=tuple(float(x) for x in scores),
                weights=tuple(float(x) for x in w),
            ))
    cs.stocks = np.asarray(keep, dtype=int)
    cs.predictions = predict(np.array(rows).reshape(len(keep), -1), params) if keep else Tensor(np.zeros(0))
    return cs


def attention_matrix(cs: CrossSection, panel: FeaturePanel, config: ModelConfig, target: str) -> AttentionMatrix:
    """Recover the per-target (|S|-1) x l_max matrix from a cross-variant forward pass."""
    if cs.scores is None or config.variant not in ("deltalag", "lag1net"):
        raise ConfigError("attention matrices exist only for cross-attention variants")
    r = int(np.flatnonzero(cs.stocks == panel.ticker_index(target))[0])
    m = config.lags_scored
    n = cs.stocks.size
    block = cs.scores[r].reshape(n, m)
    others = [i for i in range(n) if i != r]
    return AttentionMatrix(target, cs.date, [panel.tickers[cs.stocks[i]] for i in others],
                           Tensor(block[others]))
