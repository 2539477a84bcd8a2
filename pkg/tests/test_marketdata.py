import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deltalag.errors import ConfigError, DataError, ParseError, WindowUnavailable
from deltalag.marketdata import (
    Bar,
    FeaturePanel,
    GroundTruth,
    SyntheticSpec,
    build_panel,
    compute_features,
    generate_regime_shift,
    generate_synthetic,
    load_ohlcv,
    make_window,
    normalize,
    read_ground_truth,
    simulate_returns,
    split,
    window_mask,
    write_ground_truth,
    write_ohlcv,
)

HEADER = "ticker,date,open,high,low,close,volume,shares_outstanding\n"
D0 = dt.date(2020, 1, 1)


def day(i):
    return D0 + dt.timedelta(days=i)


def flat_bars(n, price=100.0, volume=1000.0):
    return [Bar(day(i), price, price, price, price, volume) for i in range(n)]


def tiny_panel(values, valid=None):
    """Panel (T, S, 1) from an array of raw values."""
    x = np.asarray(values, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    T, S, _ = x.shape
    v = np.ones((T, S), bool) if valid is None else np.asarray(valid)
    return FeaturePanel([day(i) for i in range(T)], [f"T{j}" for j in range(S)], x, v,
                        np.zeros((T, S)), ("return",))


class TestLoadOhlcv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + "AAA,2020-01-01,1,2,0.5,1.5,10,\n"
                              "AAA,2020-01-02,1.5,2,1,1.8,12,100\n"
                              "AAA,2020-01-03,1.8,1.9,1.7,1.7,0,\n")
        bars = load_ohlcv(p)
        assert list(bars) == ["AAA"]
        assert len(bars["AAA"]) == 3
        assert bars["AAA"][1].shares_outstanding == 100
        assert bars["AAA"][0].shares_outstanding is None

    def test_low_above_high_names_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + "AAA,2020-01-01,1,2,0.5,1.5,10,\n"
                              "AAA,2020-01-02,1.5,1.0,2.5,1.8,12,\n")
        with pytest.raises(ParseError, match="line 3") as exc:
            load_ohlcv(p)
        assert exc.value.line == 3

    def test_malformed_number(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + "AAA,2020-01-01,1,2,0.5,abc,10,\n")
        with pytest.raises(ParseError) as exc:
            load_ohlcv(p)
        assert exc.value.line == 2

    def test_duplicate_ticker_across_files(self, tmp_path):
        row = "AAA,2020-01-01,1,2,0.5,1.5,10,\n"
        (tmp_path / "a.csv").write_text(HEADER + row)
        (tmp_path / "b.csv").write_text(HEADER + row.replace("01-01", "01-02"))
        with pytest.raises(DataError, match="AAA"):
            load_ohlcv([tmp_path / "a.csv", tmp_path / "b.csv"])

    def test_non_monotone_dates(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + "AAA,2020-01-02,1,2,0.5,1.5,10,\n"
                              "AAA,2020-01-01,1,2,0.5,1.5,10,\n")
        with pytest.raises(DataError):
            load_ohlcv(p)

    def test_duplicate_date(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text(HEADER + "AAA,2020-01-01,1,2,0.5,1.5,10,\n" * 2)
        with pytest.raises(DataError):
            load_ohlcv(p)

    def test_write_read_roundtrip(self, tmp_path):
        bars, _ = generate_synthetic(SyntheticSpec(n_stocks=4, n_days=20, n_leaders=1, seed=2))
        write_ohlcv(bars, tmp_path / "x.csv")
        again = load_ohlcv(tmp_path / "x.csv")
        assert again == bars


class TestFeatures:
    def test_flat_prices_give_zero_ratios(self):
        panel = compute_features({"A": flat_bars(3), "B": flat_bars(3, 50.0)})
        np.testing.assert_array_equal(panel.features[1:, :, :4], 0.0)

    def test_zero_volume_log(self):
        panel = compute_features({"A": flat_bars(3, volume=0.0)})
        np.testing.assert_array_equal(panel.features[1:, 0, 4], 0.0)

    def test_return(self):
        bars = [Bar(day(0), 100, 100, 100, 100, 1), Bar(day(1), 110, 110, 110, 110, 1)]
        panel = compute_features({"A": bars}, mode="return_only")
        assert panel.n_features == 1
        assert panel.features[1, 0, 0] == pytest.approx(0.10, abs=1e-15)
        assert not panel.valid[0, 0]
        assert panel.valid[1, 0]

    def test_full_mode_formulas(self):
        bars = [Bar(day(0), 10, 12, 9, 10, 100, 1000.0), Bar(day(1), 10, 13, 9.5, 12, 50, 1000.0)]
        f = compute_features({"A": bars}).features[1, 0]
        np.testing.assert_allclose(f, [10 / 12 - 1, 13 / 12 - 1, 9.5 / 12 - 1, 0.2, np.log(51), 0.05], rtol=1e-14)

    def test_turnover_fallback(self):
        vols = [10.0, 30.0, 20.0]
        bars = [Bar(day(i), 1, 1, 1, 1, v) for i, v in enumerate(vols)]
        f = compute_features({"A": bars}).features[:, 0, 5]
        np.testing.assert_allclose(f[1:], [30 / 20, 20 / 20])

    def test_next_return_alignment(self):
        bars, _ = generate_synthetic(SyntheticSpec(n_stocks=3, n_days=30, n_leaders=1, seed=5))
        panel = compute_features(bars)
        for j, tk in enumerate(panel.tickers):
            closes = np.array([b.close for b in bars[tk]])
            np.testing.assert_array_equal(panel.next_return[:-1, j], closes[1:] / closes[:-1] - 1.0)
            assert np.isnan(panel.next_return[-1, j])

    def test_causal(self):
        bars, _ = generate_synthetic(SyntheticSpec(n_stocks=3, n_days=40, n_leaders=1, seed=6))
        base = compute_features(bars).features
        edited = {k: list(v) for k, v in bars.items()}
        b = edited["S001"][25]
        edited["S001"][25] = Bar(b.date, b.open, b.high * 2, b.low, b.close, b.volume * 3)
        after = compute_features(edited).features
        np.testing.assert_array_equal(base[:25], after[:25])

    def test_valid_entries_finite(self):
        panel = build_panel(generate_synthetic(SyntheticSpec(n_stocks=5, n_days=50, n_leaders=2))[0])
        assert np.all(np.isfinite(panel.features[panel.valid]))
        assert panel.n_features == 6


class TestNormalize:
    def test_population_z(self):
        out, _ = normalize(tiny_panel([[-1.0, 0.0, 1.0]]))
        s = np.sqrt(1.5)
        np.testing.assert_allclose(out.features[0, :, 0], [-s, 0.0, s], rtol=1e-15)

    def test_constant_day_invalid(self):
        out, _ = normalize(tiny_panel([[2.0, 2.0, 2.0], [1.0, 2.0, 3.0]]))
        assert not out.valid[0].any()
        assert out.valid[1].all()

    def test_clip(self):
        x = np.zeros((1, 82))
        x[0, 0] = 1.0  # z = sqrt(81) = 9 before clipping
        out, stats = normalize(tiny_panel(x))
        assert out.features[0, 0, 0] == 5.0
        assert stats.clip == 5.0

    def test_single_stock_day_invalid(self):
        out, _ = normalize(tiny_panel([[1.0, 2.0]], valid=[[True, False]]))
        assert not out.valid.any()

    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_twice_equals_once(self, values):
        x = np.array(values)
        if np.ptp(x) < 1e-3:
            return
        once, _ = normalize(tiny_panel([x]))
        if np.max(np.abs(once.features)) >= 5:
            return
        twice, _ = normalize(once)
        np.testing.assert_allclose(twice.features, once.features, atol=1e-12)


class TestWindows:
    def test_l1(self):
        p = tiny_panel(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(make_window(p, "T1", 2, 1), p.features[2:3, 1])

    def test_order(self):
        p = tiny_panel(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(make_window(p, 0, 3, 3)[:, 0], [3.0, 6.0, 9.0])

    def test_invalid_day(self):
        valid = np.ones((4, 3), bool)
        valid[2, 1] = False
        p = tiny_panel(np.zeros((4, 3)), valid)
        with pytest.raises(WindowUnavailable):
            make_window(p, 1, 3, 2)
        assert not window_mask(p, 2)[3, 1]
        assert window_mask(p, 2)[3, 0]

    def test_before_start(self):
        with pytest.raises(WindowUnavailable):
            make_window(tiny_panel(np.zeros((4, 3))), 0, 1, 3)


class TestSplit:
    def test_sizes(self):
        p = tiny_panel(np.zeros((10, 2)))
        s = split(p, day(5), day(7))
        assert (len(s.train), len(s.val), len(s.test)) == (6, 2, 2)
        assert list(s.train) + list(s.val) + list(s.test) == list(range(10))

    def test_equal_bounds(self):
        with pytest.raises(ConfigError):
            split(tiny_panel(np.zeros((10, 2))), day(5), day(5))

    def test_label_date_assignment(self):
        p = tiny_panel(np.zeros((10, 2)))
        s = split(p, day(5), day(7))
        # a window ending on train_end (index 5) is labelled on day 6 -> validation
        assert 5 in s.decision_dates("val")
        assert 5 not in s.decision_dates("train")
        assert s.decision_dates("train").max() == 4


class TestSynthetic:
    def test_noiseless_identity(self):
        spec = SyntheticSpec(n_stocks=10, n_days=200, n_leaders=3, noise_sd=0.0, seed=4)
        sim = simulate_returns(spec)
        gt = sim.regimes[0][1]
        j = {tk: i for i, tk in enumerate(sim.tickers)}
        lead_rows = {tk: sim.returns[:, j[tk]] for tk in set(gt.leader.values())}
        for u, v in gt.leader.items():
            tau = gt.lag[u]
            np.testing.assert_array_equal(sim.returns[1 + tau:, j[u]], lead_rows[v][1:-tau])

    def test_noiseless_identity_from_bars(self):
        spec = SyntheticSpec(n_stocks=10, n_days=200, n_leaders=3, noise_sd=0.0, seed=4)
        bars, gt = generate_synthetic(spec)
        panel = compute_features(bars)
        for u, v in gt.leader.items():
            tau = gt.lag[u]
            ru = panel.next_return[tau:-1, panel.ticker_index(u)]
            rv = panel.next_return[:-1 - tau, panel.ticker_index(v)]
            np.testing.assert_allclose(ru, rv, rtol=0, atol=1e-12)

    def test_deterministic(self):
        spec = SyntheticSpec(n_stocks=6, n_days=50, n_leaders=2, seed=9)
        assert generate_synthetic(spec) == generate_synthetic(spec)

    def test_signal_correlation(self):
        spec = SyntheticSpec(n_stocks=6, n_days=1000, n_leaders=1, seed=11)
        sim = simulate_returns(spec)
        gt = sim.regimes[0][1]
        j = {tk: i for i, tk in enumerate(sim.tickers)}
        for u, v in gt.leader.items():
            tau = gt.lag[u]
            c = np.corrcoef(sim.returns[1 + tau:, j[u]], sim.returns[1:-tau, j[v]])[0, 1]
            assert abs(c - 1 / np.sqrt(2)) < 0.05

    def test_bar_invariants(self):
        bars, _ = generate_synthetic(SyntheticSpec(n_stocks=8, n_days=300, n_leaders=2, seed=1))
        for series in bars.values():
            for b in series:
                b.check()

    def test_ground_truth_valid(self):
        spec = SyntheticSpec(n_stocks=12, n_leaders=4, lag_range=(2, 5), seed=3)
        _, gt = generate_synthetic(spec)
        assert len(gt.leader) == 8
        for u, v in gt.leader.items():
            assert u != v
            assert 2 <= gt.lag[u] <= 5
        counts = np.unique(list(gt.leader.values()), return_counts=True)[1]
        assert counts.max() - counts.min() <= 1

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticSpec(n_stocks=5, n_leaders=5))

    def test_ground_truth_csv(self, tmp_path):
        gt = GroundTruth({"B": "A", "C": "A"}, {"B": 2, "C": 7})
        write_ground_truth(gt, tmp_path / "gt.csv")
        assert (tmp_path / "gt.csv").read_text() == "lagger,leader,lag\nB,A,2\nC,A,7\n"
        assert read_ground_truth(tmp_path / "gt.csv") == gt

    def test_regime_shift(self):
        spec = SyntheticSpec(n_stocks=10, n_days=300, n_leaders=3, noise_sd=0.0, seed=8)
        bars, (before, after) = generate_regime_shift(spec, 150)
        panel = compute_features(bars)
        assert before != after
        for u, v in after.leader.items():
            tau = after.lag[u]
            ru = panel.next_return[160:-1, panel.ticker_index(u)]
            rv = panel.next_return[160 - tau:-1 - tau, panel.ticker_index(v)]
            np.testing.assert_allclose(ru, rv, atol=1e-12)
