"""
Synthetic markets with a planted lead-lag map
=============================================

Laggers copy a leader's return from tau days earlier plus noise.  The
generator returns OHLCV bars and the ground-truth wiring, which is what the
detection accuracy metrics score against.
"""

import numpy as np

from deltalag.marketdata import SyntheticSpec, build_panel, generate_synthetic, make_window, split_fractions

spec = SyntheticSpec(n_stocks=12, n_days=300, n_leaders=4, lag_range=(1, 5), noise_sd=0.0, seed=7)
bars, truth = generate_synthetic(spec)
print("tickers:", list(bars)[:6], "...")
print("first bar of", next(iter(bars)), bars[next(iter(bars))][0])

# Ground truth: lagger -> (leader, lag).
for lagger in list(truth.leader)[:4]:
    print(f"{lagger} follows {truth.leader[lagger]} at lag {truth.lag[lagger]}")

# Features are cross-sectionally normalized per day.  Row t of the panel holds
# day-t features and the realized next-day return r_{t+1}.
panel = build_panel(bars)
print("panel", panel.features.shape, "features", panel.feature_names)

# With zero noise the lagger's next return equals the leader's return tau-1
# days before today, exactly.
lagger = list(truth.leader)[0]
u, v, tau = panel.ticker_index(lagger), panel.ticker_index(truth.leader[lagger]), truth.lag[lagger]
t = np.arange(20, 280)
print("max |r_u(t+1) - r_v(t-tau+1)|:", np.max(np.abs(panel.next_return[t, u] - panel.next_return[t - tau, v])))

# A model input is an L-day window of one stock's features.
print("window", make_window(panel, lagger, 100, L=12).shape)

# Chronological splits are defined on label dates.
splits = split_fractions(panel, 0.7, 0.15)
print("train/val/test label days:", len(splits.train), len(splits.val), len(splits.test))
