import dataclasses

import numpy as np
import pytest

from deltalag.errors import ConfigError, DimensionError
from deltalag.losses import monotonic_loss
from deltalag.marketdata import SyntheticSpec, build_panel, generate_synthetic
from deltalag.model import (
    AttentionMatrix,
    Model,
    ModelConfig,
    aggregate_signal,
    attention_matrix,
    attention_scores,
    init_params,
    lagged_features,
    make_keys,
    make_query,
    predict,
    selected_scores,
    topk_select,
)
from deltalag.tensorcore import ParamSet, Tape, Tensor, encoder_forward, grad_check, reduce_sum
from deltalag.training import gradient_check


@pytest.fixture(scope="module")
def panel():
    bars, _ = generate_synthetic(SyntheticSpec(n_stocks=6, n_days=60, n_leaders=2, seed=0))
    return build_panel(bars)


def cfg(**kw):
    base = dict(L=8, l_max=4, N=5, F=6, k=2, mlp_hidden=(4,))
    base.update(kw)
    return ModelConfig(**base)


class TestQueryKeys:
    def test_identity_query(self):
        H = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(make_query(H, np.eye(4)).data, H[2:3])

    def test_single_row(self):
        H = np.array([[1.0, -2.0]])
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(make_query(H, W).data, [[-5.0, -6.0]])

    def test_zero_row(self):
        H = np.vstack([np.ones((2, 3)), np.zeros((1, 3))])
        np.testing.assert_array_equal(make_query(H, np.random.default_rng(0).normal(size=(3, 3))).data, 0.0)

    def test_keys_full_slice(self):
        H = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(make_keys(H, np.eye(3), 4).data, H)

    def test_keys_last_step(self):
        H = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(make_keys(H, np.eye(3), 1).data, H[3:])

    def test_keys_too_long(self):
        with pytest.raises(DimensionError):
            make_keys(np.zeros((2, 3)), np.eye(3), 3)


class TestScores:
    def test_zero_query(self):
        A = attention_scores(np.zeros((1, 3)), [np.ones((2, 3)), np.ones((2, 3))])
        np.testing.assert_array_equal(A.scores.data, 0.0)

    def test_orthogonal(self):
        q = np.array([[1.0, 0.0, 0.0]])
        keys = [np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 2.0]])] * 2
        np.testing.assert_array_equal(attention_scores(q, keys).scores.data, 0.0)

    def test_hand_computed(self):
        q = np.array([[1.0, 2.0]])
        K1 = np.array([[3.0, 0.0], [1.0, 1.0]])
        K2 = np.array([[-1.0, 2.0], [0.5, -0.5]])
        A = attention_scores(q, [K1, K2], ["B", "C"], target="A")
        np.testing.assert_array_equal(A.scores.data, [[3.0, 3.0], [3.0, -0.5]])
        assert A.candidates == ["B", "C"]

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            attention_scores(np.ones((1, 2)), [np.ones((2, 2)), np.ones((3, 2))])


class TestTopK:
    def test_example(self):
        A = AttentionMatrix("u", None, ["c0", "c1"], Tensor(np.array([[0.5, 0.9], [0.1, 0.7]])))
        a = topk_select(A, 2)
        assert a.triples() == [("c0", 1, 0.9), ("c1", 1, 0.7)]
        assert sum(a.weights) == pytest.approx(1.0, abs=1e-15)

    def test_ties(self):
        A = AttentionMatrix("u", None, ["c0", "c1"], Tensor(np.zeros((2, 3))))
        a = topk_select(A, 2)
        assert a.positions == ((0, 0), (0, 1))
        assert a.lags == (3, 2)

    def test_k1_argmax(self):
        s = np.random.default_rng(1).normal(size=(4, 3))
        a = topk_select(AttentionMatrix("u", None, list("abcd"), Tensor(s)), 1)
        i, j = np.unravel_index(np.argmax(s), s.shape)
        assert a.positions == ((i, j),)

    def test_selection_dominates(self):
        s = np.random.default_rng(2).normal(size=(5, 4))
        a = topk_select(AttentionMatrix("u", None, list("abcde"), Tensor(s)), 3)
        chosen = set(a.positions)
        rest = [s[i, j] for i in range(5) for j in range(4) if (i, j) not in chosen]
        assert min(a.scores) >= max(rest)
        assert list(a.scores) == sorted(a.scores, reverse=True)

    def test_too_many(self):
        with pytest.raises(DimensionError):
            topk_select(AttentionMatrix("u", None, ["a"], Tensor(np.zeros((1, 2)))), 3)

    def test_gradient_only_through_selected(self):
        s = ParamSet({"s": np.array([[0.5, 0.9], [0.1, 0.7]])})
        with Tape() as tape:
            A = AttentionMatrix("u", None, ["a", "b"], s["s"])
            a = topk_select(A, 2)
            loss = reduce_sum(selected_scores(A, a))
        tape.backward(loss)
        np.testing.assert_array_equal(s["s"].grad, [[0.0, 1.0], [0.0, 1.0]])


class TestAggregate:
    def test_equal_scores_average(self):
        v = np.array([[1.0, 2.0], [3.0, 6.0]])
        np.testing.assert_allclose(aggregate_signal(np.array([0.3, 0.3]), v).data, [2.0, 4.0])

    def test_single(self):
        v = np.array([[1.0, -2.0, 5.0]])
        np.testing.assert_array_equal(aggregate_signal(np.array([7.0]), v).data, v[0])

    def test_ln2(self):
        a, b = np.array([3.0, 0.0]), np.array([0.0, 3.0])
        z = aggregate_signal(np.array([np.log(2.0), 0.0]), np.stack([a, b])).data
        np.testing.assert_allclose(z, (2 * a + b) / 3, rtol=1e-15)

    def test_convex_hull(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=(3, 4))
        z = aggregate_signal(rng.normal(size=3) * 5, v).data
        assert np.all(z <= v.max(axis=0) + 1e-15) and np.all(z >= v.min(axis=0) - 1e-15)


class TestPredict:
    def test_zero_network(self):
        p = ParamSet({"mlp.W0": np.zeros((3, 2)), "mlp.b0": np.zeros(2), "mlp.W1": np.zeros((2, 1)), "mlp.b1": np.zeros(1)})
        assert predict(np.array([1.0, 2.0, 3.0]), p).item() == 0.0

    def test_linear(self):
        p = ParamSet({"mlp.W0": np.array([[2.5]]), "mlp.b0": np.zeros(1)})
        assert predict(np.array([-0.4]), p).item() == -1.0

    def test_hand_computed(self):
        # h = relu([1, 0, 0] @ W0 + b0) = relu([0.5, -1.0]) = [0.5, 0]; out = 0.5*2 + 0*3 + 0.25
        p = ParamSet({
            "mlp.W0": np.array([[0.5, -1.0], [9.0, 9.0], [9.0, 9.0]]),
            "mlp.b0": np.zeros(2),
            "mlp.W1": np.array([[2.0], [3.0]]),
            "mlp.b1": np.array([0.25]),
        })
        assert predict(np.array([1.0, 0.0, 0.0]), p).item() == 1.25

    def test_input_size(self):
        p = ParamSet({"mlp.W0": np.zeros((3, 1)), "mlp.b0": np.zeros(1)})
        with pytest.raises(DimensionError):
            predict(np.ones(4), p)


class TestConfig:
    def test_lmax_above_L(self):
        with pytest.raises(ConfigError):
            cfg(L=3, l_max=4).check()

    def test_k_too_large(self):
        with pytest.raises(ConfigError):
            cfg(k=9, l_max=2).check(n_stocks=5)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            cfg(variant="bogus").check()

    def test_selflag1_params(self):
        p = init_params(cfg(variant="selflag1"), 0)
        assert sorted(p) == ["mlp.W0", "mlp.W1", "mlp.b0", "mlp.b1"]

    def test_init_deterministic(self):
        a, b = init_params(cfg(), 4), init_params(cfg(), 4)
        for k in a:
            np.testing.assert_array_equal(a[k].data, b[k].data)


def per_target_reference(panel, config, params, t, u):
    """The per-target pipeline composed from the individual operations."""
    L, m = config.L, config.lags_scored
    model = Model(config, panel)
    V = model.stocks_on(t)
    H = {v: encoder_forward(panel.features[t - L + 1:t + 1, v], params) for v in V}
    q = make_query(H[u], params["attn.W_Q"])
    others = [v for v in V if v != u]
    A = attention_scores(q, [make_keys(H[v], params["attn.W_K"], m) for v in others],
                         [panel.tickers[v] for v in others], panel.tickers[u], panel.dates[t])
    a = topk_select(A, config.k)
    z = aggregate_signal(selected_scores(A, a), lagged_features(panel, t, a))
    return a, predict(z, params).item()


class TestForward:
    def test_matches_per_target_composition(self, panel):
        config = cfg()
        params = init_params(config, 1)
        t = 30
        cs = Model(config, panel).forward(t, params)
        for r, u in enumerate(cs.stocks):
            a, pred = per_target_reference(panel, config, params, t, u)
            got = cs.assignments[r]
            assert (got.leaders, got.lags) == (a.leaders, a.lags)
            np.testing.assert_allclose(got.scores, a.scores, rtol=1e-12)
            assert cs.predictions.data[r] == pytest.approx(pred, rel=1e-12)

    def test_attention_matrix_shape(self, panel):
        sub = dataclasses.replace(panel, tickers=panel.tickers[:3], features=panel.features[:, :3],
                                  valid=panel.valid[:, :3], next_return=panel.next_return[:, :3])
        config = cfg()
        cs = Model(config, sub).forward(20, init_params(config, 0))
        A = attention_matrix(cs, sub, config, sub.tickers[0])
        assert A.scores.shape == (2, 4)
        assert A.candidates == sub.tickers[1:]

    def test_selflag1(self, panel):
        config = cfg(variant="selflag1")
        params = init_params(config, 0)
        cs = Model(config, panel).forward(5, params)
        assert cs.assignments == []
        assert np.all(np.isfinite(cs.predictions.data))
        np.testing.assert_allclose(cs.predictions.data[0], predict(panel.features[5, cs.stocks[0]], params).item())

    def test_lag1net(self, panel):
        config = cfg(variant="lag1net")
        cs = Model(config, panel).forward(30, init_params(config, 0))
        assert all(a.lags == (1, 1) for a in cs.assignments)

    def test_selflagnet_uses_own_lags(self, panel):
        config = cfg(variant="selflagnet")
        cs = Model(config, panel).forward(30, init_params(config, 0))
        for a in cs.assignments:
            assert set(a.leaders) == {a.target}
            assert len(set(a.lags)) == 2

    @pytest.mark.parametrize("variant", ["deltalag", "lag1net", "selflagnet"])
    def test_assignments_complete(self, panel, variant):
        config = cfg(variant=variant)
        cs = Model(config, panel).forward(30, init_params(config, 0))
        assert len(cs.assignments) == cs.stocks.size > 0
        for a in cs.assignments:
            assert len(a.leaders) == config.k
            assert sum(a.weights) == pytest.approx(1.0, abs=1e-12)
            assert all(1 <= lag <= config.l_max for lag in a.lags)
            if variant != "selflagnet":
                assert a.target not in a.leaders

    def test_raw_signal_provenance(self, panel):
        config = cfg(mlp_hidden=())
        params = init_params(config, 2)
        t = 40
        cs = Model(config, panel).forward(t, params)
        for r, a in enumerate(cs.assignments):
            z = np.array(a.weights) @ lagged_features(panel, t, a)
            expected = z @ params["mlp.W0"].data[:, 0] + params["mlp.b0"].data[0]
            assert cs.predictions.data[r] == pytest.approx(expected, rel=1e-12)

    def test_candidate_permutation_equivariance(self, panel):
        config = cfg()
        params = init_params(config, 3)
        perm = np.array([3, 0, 5, 1, 4, 2])
        names = [f"Z{i}" for i in range(6)]
        renamed = dataclasses.replace(
            panel, tickers=[names[i] for i in range(6)], features=panel.features[:, perm],
            valid=panel.valid[:, perm], next_return=panel.next_return[:, perm])
        t = 35
        base = Model(config, panel).forward(t, params)
        other = Model(config, renamed).forward(t, params)
        back = {names[i]: panel.tickers[perm[i]] for i in range(6)}
        got = {back[a.target]: {(back[v], lag, round(s, 10)) for v, lag, s in a.triples()} for a in other.assignments}
        want = {a.target: {(v, lag, round(s, 10)) for v, lag, s in a.triples()} for a in base.assignments}
        assert got == want

    def test_frozen_selection_reused(self, panel):
        config = cfg()
        params = init_params(config, 0)
        model = Model(config, panel)
        cs = model.forward(30, params)
        again = model.forward(30, params, selection=cs.selection)
        np.testing.assert_array_equal(cs.predictions.data, again.predictions.data)

    def test_too_few_stocks(self, panel):
        config = cfg()
        cs = Model(config, panel).forward(3, init_params(config, 0))
        assert cs.stocks.size == 0
        assert cs.predictions.size == 0


class TestGradients:
    @pytest.mark.parametrize("variant,mode", [
        ("deltalag", "raw"), ("deltalag", "embedding"), ("lag1net", "raw"),
        ("selflagnet", "raw"), ("selflag1", "raw"),
    ])
    def test_end_to_end(self, panel, variant, mode):
        config = cfg(variant=variant, feature_mode=mode, N=4, mlp_hidden=(3,))
        params = init_params(config, 5)
        errors = gradient_check(Model(config, panel), params, 30)
        assert max(errors.values()) <= 1e-6

    def test_attention_params_receive_gradient(self, panel):
        config = cfg()
        params = init_params(config, 6)
        model = Model(config, panel)
        with Tape() as tape:
            cs = model.forward(30, params, with_assignments=False)
            loss = monotonic_loss(cs.predictions, panel.next_return[30, cs.stocks])
        tape.backward(loss)
        for name in ("attn.W_Q", "attn.W_K", "encoder.W_x"):
            assert np.any(params[name].grad != 0)

    def test_composed_scores_gradcheck(self):
        rng = np.random.default_rng(7)
        H = [rng.normal(size=(5, 3)) for _ in range(3)]
        params = ParamSet({"W_Q": rng.normal(size=(3, 3)), "W_K": rng.normal(size=(3, 3))})

        def f(p):
            q = make_query(H[0], p["W_Q"])
            A = attention_scores(q, [make_keys(h, p["W_K"], 2) for h in H[1:]])
            a = topk_select(A, 2)
            return reduce_sum(aggregate_signal(selected_scores(A, a), np.eye(2)))

        assert grad_check(f, params) <= 1e-6
