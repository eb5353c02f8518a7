import warnings

import numpy as np
import pytest

from drlfl import fed, nn
from drlfl.data import ClientDataset, Dataset, generate_synthetic, partition_iid, train_test_split
from drlfl.fed import AggregationRule, ClientUpdateResult, DeviceFleet, FederatedState, FlConfig
from drlfl.scheduling import CyclicScheduler, RandomScheduler
from drlfl.wireless import ChannelConfig, DevicePlacement, WirelessChannel


@pytest.mark.parametrize("C,K,n", [(0.1, 100, 10), (0.0, 100, 1), (1.0, 100, 100), (0.29, 100, 29)])
def test_num_selected(C, K, n):
    assert fed.num_selected(C, K) == n
    dec = fed.select_fraction(C, K, RandomScheduler(0), 0)
    assert len(dec.selected) == n


def test_flconfig_violations():
    assert FlConfig().violations() == []
    bad = FlConfig(C=1.5, K=0, B=0, E=0, lr=0, max_rounds=0, aggregation="median")
    assert len(bad.violations()) == 7


def toy_client(seed=0, m=12, d=3, classes=3):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.uniform(size=(m, d)), rng.integers(0, classes, m), classes)
    return ClientDataset(0, np.arange(m), ds)


def test_client_update_single_full_batch_step_is_analytic():
    client = toy_client()
    spec = nn.MlpSpec((3, 1), output_head="linear")
    p = nn.ParamVector(np.array([0.1, -0.2, 0.3, 0.05]), spec.layout)
    res = fed.client_update(spec, p, client, E=1, B=None, lr=0.1, seed=0)
    x, y = client.features, client.labels.astype(float)
    w, b = p.values[:3], p.values[3]
    r = x @ w + b - y
    gw, gb = x.T @ r / len(y), r.mean()
    expect = np.concatenate([w - 0.1 * gw, [b - 0.1 * gb]])
    assert np.allclose(res.new_params.values, expect, rtol=0, atol=1e-14)
    assert res.samples_used == 12 and res.local_loss_after < res.local_loss_before


def test_client_update_two_epochs_compose():
    client = toy_client(1)
    spec = nn.MlpSpec((3, 4, 3), "tanh")
    p = nn.init_params(spec, 2)
    res = fed.client_update(spec, p, client, E=2, B=None, lr=0.2, seed=5)
    q = p
    for _ in range(2):
        g, _ = nn.backward(spec, q, (client.features, client.labels))
        q = nn.sgd_step(q, g, 0.2)
    assert res.new_params == q


def test_client_update_zero_lr_and_purity():
    client = toy_client(2)
    spec = nn.MlpSpec((3, 3))
    p = nn.init_params(spec, 0)
    copy = p.values.copy()
    res = fed.client_update(spec, p, client, E=1, B=4, lr=0.0, seed=0)
    assert res.new_params == p and res.local_loss_after == res.local_loss_before
    fed.client_update(spec, p, client, E=3, B=4, lr=0.5, seed=0)
    assert np.array_equal(p.values, copy)


def test_client_update_minibatch_step_count():
    client = toy_client(3, m=10)
    spec = nn.MlpSpec((3, 3))
    p = nn.init_params(spec, 0)
    a = fed.client_update(spec, p, client, 1, 4, 0.1, seed=9)
    b = fed.client_update(spec, p, client, 1, 4, 0.1, seed=9)
    assert a.new_params == b.new_params
    # manual replay: ceil(10 / 4) = 3 steps over the (seed, epoch) shuffle
    order = np.random.default_rng([9, 0]).permutation(10)
    q = p
    for s in (0, 4, 8):
        idx = order[s:s + 4]
        g, _ = nn.backward(spec, q, (client.features[idx], client.labels[idx]))
        q = nn.sgd_step(q, g, 0.1)
    assert a.new_params == q


def test_client_update_empty():
    ds = Dataset(np.zeros((2, 3)), [0, 1], 3)
    with pytest.raises(ValueError):
        fed.client_update(nn.MlpSpec((3, 3)), nn.init_params(nn.MlpSpec((3, 3)), 0),
                          ClientDataset(0, [], ds), 1, None, 0.1, 0)


def result(cid, values, size, layout):
    return ClientUpdateResult(cid, nn.ParamVector(values, layout), 0.0, 0.0, 0.0, size)


def test_aggregate_examples():
    lay = ((0, 2),)
    g = nn.ParamVector([0.0, 0.0], lay)
    wa = AggregationRule()
    assert fed.aggregate(wa, g, [result(0, [3.0, 1.0], 5, lay)]).values.tolist() == [3.0, 1.0]
    two = [result(0, [0.0, 0.0], 10, lay), result(1, [2.0, 4.0], 10, lay)]
    assert fed.aggregate(wa, g, two).values.tolist() == [1.0, 2.0]
    three = [result(0, [6.0, 0.0], 1, lay), result(1, [0.0, 6.0], 2, lay), result(2, [12.0, 12.0], 3, lay)]
    assert np.allclose(fed.aggregation_weights(three), [1 / 6, 2 / 6, 3 / 6])
    # 6/6 + 0 + 36/6 = 7, 0 + 12/6 + 36/6 = 8
    assert np.allclose(fed.aggregate(wa, g, three).values, [7.0, 8.0], rtol=0, atol=1e-12)
    with pytest.raises(ValueError):
        fed.aggregate(wa, g, [])
    with pytest.raises(nn.LayoutError):
        fed.aggregate(wa, g, [result(0, [1.0, 2.0, 3.0], 1, ((0, 3),))])


def test_aggregate_permutation_invariant_exactly():
    rng = np.random.default_rng(0)
    lay = ((3, 3),)
    g = nn.ParamVector(rng.normal(size=12), lay)
    results = [result(i, rng.normal(size=12), int(rng.integers(1, 50)), lay) for i in range(9)]
    base = fed.aggregate(AggregationRule(), g, results)
    base_g = fed.aggregate(AggregationRule("gradient_step", 0.1), g, results)
    for _ in range(10):
        perm = [results[i] for i in rng.permutation(9)]
        assert fed.aggregate(AggregationRule(), g, perm) == base
        assert fed.aggregate(AggregationRule("gradient_step", 0.1), g, perm) == base_g
    assert abs(fed.aggregation_weights(results).sum() - 1) <= 1e-12


def test_gradient_step_rule_needs_lr():
    with pytest.raises(ValueError):
        AggregationRule("gradient_step")


def test_evaluate_examples():
    spec = nn.MlpSpec((2, 3))
    bias0 = nn.concat_layers([(np.zeros((2, 3)), np.array([5.0, 0.0, 0.0]))])
    zeros = Dataset(np.random.default_rng(0).uniform(size=(20, 2)), np.zeros(20), 3)
    assert fed.evaluate(spec, bias0, zeros)[0] == 1.0
    # uniform logits: argmax ties resolve to class 0, so accuracy is the class-0 share
    spec10 = nn.MlpSpec((2, 10))
    flat = nn.ParamVector(np.zeros(spec10.num_params), spec10.layout)
    bal = Dataset(np.zeros((100, 2)), np.repeat(np.arange(10), 10), 10)
    acc, loss = fed.evaluate(spec10, flat, bal)
    assert 0.05 <= acc <= 0.15 and acc == 0.1
    assert loss == pytest.approx(nn.batch_loss(spec10, flat, bal.features, bal.labels))
    with pytest.raises(ValueError):
        fed.evaluate(spec, bias0, zeros.subset([]))


def small_state(K=10, seed=0, per_class=60, hidden=(16,)):
    pooled = generate_synthetic(4, per_class, 6, 6.0, seed)
    train, test = train_test_split(pooled, 40, seed)
    clients = partition_iid(train, K, seed)
    spec = nn.MlpSpec((6, *hidden, 4))
    fleet = DeviceFleet.uniform(K, seed, upload_bits=64.0 * spec.num_params)
    return FederatedState(spec, nn.init_params(spec, seed), clients, test, fleet)


def test_round_with_perfect_channel_keeps_everyone():
    st = small_state()
    ch = WirelessChannel(ChannelConfig(fading="none"), [DevicePlacement(i, 10.0) for i in range(10)])
    rec = fed.run_round(st, RandomScheduler(0), ch, FlConfig(C=0.5, K=10, lr=0.1))
    assert rec.uploads_ok == rec.selected and not rec.noop and rec.round == 1


def test_round_with_dead_channel_is_noop():
    st = small_state()
    before = st.params
    ch = WirelessChannel(ChannelConfig(snr_threshold=1e30), [DevicePlacement(i, 10.0) for i in range(10)])
    rec = fed.run_round(st, RandomScheduler(0), ch, FlConfig(C=0.5, K=10, lr=0.1))
    assert rec.noop and rec.uploads_ok == () and st.params == before


def test_round_record_costs_additive():
    st = small_state()
    cfg = FlConfig(C=0.3, K=10, lr=0.1, max_rounds=5)
    fed.run_federated(st, RandomScheduler(1), None, cfg)
    assert len(st.history) == 5
    assert [r.round for r in st.history] == [1, 2, 3, 4, 5]
    for r in st.history:
        assert r.c_total == r.c_time + r.c_qu and r.reward <= 0


def test_rounds_deterministic_and_parallel_equal():
    cfg = FlConfig(C=0.5, K=10, lr=0.1, max_rounds=3)
    a, b, c = small_state(), small_state(), small_state()
    fed.run_federated(a, RandomScheduler(2), None, cfg)
    fed.run_federated(b, RandomScheduler(2), None, cfg)
    fed.run_federated(c, RandomScheduler(2), None, cfg, workers=3)
    strip = lambda s: [(r.round, r.selected, r.test_acc, r.test_loss, r.c_total, r.reward) for r in s.history]
    assert strip(a) == strip(b) == strip(c)
    assert a.params == b.params == c.params


def centralized_accuracy(state, steps, lr):
    x = np.concatenate([c.features for c in state.clients])
    y = np.concatenate([c.labels for c in state.clients])
    p = nn.init_params(state.spec, 0)
    for _ in range(steps):
        g, _ = nn.backward(state.spec, p, (x, y))
        p = nn.sgd_step(p, g, lr)
    return fed.evaluate(state.spec, p, state.test_set)[0]


def test_twenty_rounds_improve_over_initial_and_track_centralized():
    st = small_state()
    acc0, _ = fed.evaluate(st.spec, st.params, st.test_set)
    cfg = FlConfig(C=1.0, K=10, B=None, E=1, lr=0.5, max_rounds=20)
    fed.run_federated(st, RandomScheduler(0), None, cfg)
    final = st.history[-1].test_acc
    assert final > acc0
    # full participation, full batch, weighted average is centralized GD step for step
    assert final == pytest.approx(centralized_accuracy(st, 20, 0.5), abs=0.05)


def test_stop_reasons():
    cfg = FlConfig(C=1.0, K=10, lr=0.1, max_rounds=50)
    assert fed.run_federated(small_state(), RandomScheduler(0), None, cfg, target=0.01) == "target"
    assert fed.run_federated(small_state(), RandomScheduler(0), None,
                             FlConfig(C=1.0, K=10, lr=0.1, max_rounds=3)) == "max_rounds"
    st = small_state()
    cyc = FlConfig(C=1.0, K=10, lr=1e-9, max_rounds=50, converge_tol=1e-6, converge_patience=10)
    assert fed.run_federated(st, CyclicScheduler(1), None, cyc) == "converged"
    assert len(st.history) == 11


def test_gradient_step_warning():
    cfg = FlConfig(C=1.0, K=10, lr=0.1, max_rounds=1, aggregation="gradient_step", B=10, E=1)
    with pytest.warns(UserWarning):
        fed.run_federated(small_state(), RandomScheduler(0), None, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fed.run_federated(small_state(), RandomScheduler(0), None, FlConfig(
            C=1.0, K=10, lr=0.1, max_rounds=1, aggregation="gradient_step", B=None, E=1))


def test_round_past_max_rejected():
    st = small_state()
    st.round = 3
    with pytest.raises(ValueError):
        fed.run_round(st, RandomScheduler(0), None, FlConfig(K=10, max_rounds=3))
