import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netlaw.decoupler import (RATIONAL_A0, RATIONAL_B0, DecouplerError, DecouplerModel, MLP, MlpSpec, TrainConfig,
                              loss_and_grad, loss_eq5, predict_derivative, query_inter, query_self,
                              rational_forward, train_decoupler)
from netlaw.dynamics import DynamicsSpec, simulate_dataset
from netlaw.preprocess import TrainingSet, build_training_pairs, full_interval, split_timestamps
from netlaw.topology import ObservationMask, Topology, gen_er


def test_rational_at_zero_with_published_coefficients():
    assert rational_forward(RATIONAL_A0, RATIONAL_B0, 0.0) == pytest.approx(1.1915 / 3.3830, abs=1e-15)
    assert RATIONAL_A0 == (1.1915, 1.5957, 0.5000, 0.0218)
    assert RATIONAL_B0 == (2.3830, 0.0, 1.0)


def test_rational_zero_numerator():
    x = np.linspace(-5, 5, 11)
    assert np.all(rational_forward((0, 0, 0, 0), RATIONAL_B0, x) == 0)


def test_rational_finite_on_huge_grid():
    x = np.linspace(-1e6, 1e6, 20001)
    y = rational_forward(RATIONAL_A0, RATIONAL_B0, x)
    assert np.all(np.isfinite(y))


@settings(max_examples=60, deadline=None)
@given(a=st.lists(st.floats(-10, 10), min_size=4, max_size=4),
       b=st.lists(st.floats(-10, 10), min_size=3, max_size=3), x=st.floats(-1e3, 1e3))
def test_rational_denominator_lower_bound(a, b, x):
    p = a[0] + a[1] * x + a[2] * x ** 2 + a[3] * x ** 3
    y = rational_forward(a, b, x)
    assert abs(y) <= abs(p) + 1e-9 * (1 + abs(p))


def test_loss_examples():
    t = np.zeros((2, 1))
    assert loss_eq5(t, t) == 0.0
    pred = np.array([[1.0], [3.0]])
    assert loss_eq5(pred, t, lam=0.0) == pytest.approx(2.0)
    assert loss_eq5(pred, t, lam=1.0) == pytest.approx(3.0)
    with pytest.raises(DecouplerError):
        loss_eq5(np.zeros((1, 1)), np.zeros((1, 1)), lam=0.1)


def tiny_model(seed=0, hidden=2, n_types=1):
    return DecouplerModel.init(1, n_types, 1, MlpSpec(hidden=hidden, self_layers=1, inter_layers=1), seed=seed)


@pytest.mark.parametrize("mode", ["variance", "literal"])
def test_gradient_matches_central_differences(mode):
    rng = np.random.default_rng(1)
    top = gen_er(5, 0.6, 2)
    model = tiny_model(hidden=2)
    X = rng.uniform(0, 1, (3, 5, 1))
    Y = rng.normal(size=(3, 5, 1))
    loss, grads = loss_and_grad(model, top, X, Y, lam=0.1, mode=mode)
    flat = model.get_flat()
    g = np.concatenate([x.ravel() for x in grads])
    h = 1e-5
    num = np.empty_like(flat)
    for k in range(flat.size):
        vals = []
        for sgn in (1, -1):
            v = flat.copy()
            v[k] += sgn * h
            model.set_flat(v)
            vals.append(loss_and_grad(model, top, X, Y, lam=0.1, mode=mode)[0])
        num[k] = (vals[0] - vals[1]) / (2 * h)
    model.set_flat(flat)
    assert flat.size >= 10
    assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-4


def _dense_net(net, x):
    """Independent evaluation of an MLP from its raw parameters."""
    h = x
    for layer in range(len(net.act_a)):
        h = rational_forward(net.act_a[layer], net.act_b[layer], h @ net.W[layer] + net.b[layer])
    return h @ net.W[-1] + net.b[-1]


def test_two_node_hand_composition():
    model = tiny_model(seed=3, hidden=3)
    top = Topology(np.array([[0.0, 0.7], [0.7, 0.0]]))
    x = np.array([[0.3], [1.2]])
    z = model._norm(x)
    f = model.self_nets[0]
    tri = model.inter_nets[0]
    expect = np.empty(2)
    for i, j in ((0, 1), (1, 0)):
        self_part = model.self_scale * _dense_net(f, z[i:i + 1])
        pair = np.concatenate([z[i:i + 1], z[j:j + 1]], axis=1)
        inter = _dense_net(tri.g0, pair) + _dense_net(tri.g1, z[i:i + 1]) * _dense_net(tri.g2, z[j:j + 1])
        expect[i] = (self_part + 0.7 * model.inter_scale * inter)[0, 0]
    assert np.allclose(predict_derivative(model, top, x)[:, 0], expect, rtol=1e-12, atol=1e-14)


def test_empty_graph_is_self_only_and_masked_edges_vanish():
    model = tiny_model(seed=4, hidden=4)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 2, (6, 1))
    empty = predict_derivative(model, Topology(np.zeros((6, 6))), x)
    assert np.allclose(empty, query_self(model, 0, x), rtol=1e-13)
    top = gen_er(6, 0.8, 1)
    mask = ObservationMask(np.ones((6, 1), bool), np.zeros((6, 6), bool))
    assert np.allclose(predict_derivative(model, top, x, mask), empty, rtol=1e-13)


def test_edge_partition_additivity():
    model = tiny_model(seed=5, hidden=4)
    rng = np.random.default_rng(2)
    top = gen_er(8, 0.5, 3)
    a = top.adjacency * rng.uniform(0.5, 1.5, (8, 8))
    split = rng.random((8, 8)) < 0.5
    a1, a2 = np.where(split, a, 0), np.where(split, 0, a)
    x = rng.uniform(0, 1, (8, 1))
    none = predict_derivative(model, Topology(np.zeros((8, 8)), directed=True), x)
    full = predict_derivative(model, Topology(a, directed=True), x)
    p1 = predict_derivative(model, Topology(a1, directed=True), x) - none
    p2 = predict_derivative(model, Topology(a2, directed=True), x) - none
    assert np.allclose(full - none, p1 + p2, rtol=1e-12, atol=1e-13)


def test_query_shapes_and_zero_model():
    zero = DecouplerModel.init(1, zero=True)
    assert np.all(query_self(zero, 0, np.linspace(0, 1, 7)[:, None]) == 0)
    model = tiny_model()
    grid = np.random.default_rng(0).uniform(size=(13, 2))
    out = query_inter(model, 0, grid)
    assert out.shape == (13, 1)
    assert np.allclose(out[5], query_inter(model, 0, grid[5:6])[0])


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = DecouplerModel.init(2, 2, 1, seed=9)
    model.save(tmp_path / "m.json")
    back = DecouplerModel.load(tmp_path / "m.json")
    assert np.array_equal(back.get_flat(), model.get_flat())
    top = Topology(np.ones((3, 3)) - np.eye(3), node_type=np.array([0, 1, 1]))
    x = np.random.default_rng(0).normal(size=(3, 2))
    assert np.array_equal(predict_derivative(back, top, x), predict_derivative(model, top, x))


def _set(times, states, targets, seed=0):
    return TrainingSet(times, states, targets, split_timestamps(times.size, 0.2, seed))


def test_training_on_zero_targets():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (40, 4, 1))
    ts = _set(np.arange(40.0), X, np.zeros_like(X))
    top = gen_er(4, 0.5, 0)
    model, lg = train_decoupler(ts, top, MlpSpec(hidden=10), TrainConfig(epochs=200, seed=0))
    assert min(lg.val_loss) < 1e-3
    assert np.max(np.abs(predict_derivative(model, top, X))) < 0.05


def test_learns_linear_decay_on_empty_graph():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (60, 5, 1))
    ts = _set(np.arange(60.0), X, -X)
    model, _ = train_decoupler(ts, Topology(np.zeros((5, 5))), MlpSpec(hidden=16),
                               TrainConfig(epochs=600, lr=1e-2, patience=600, seed=0))
    grid = np.linspace(-1, 1, 41)[:, None]
    assert np.max(np.abs(query_self(model, 0, grid) + grid)) < 0.05


@pytest.fixture(scope="module")
def epi_model():
    top = gen_er(20, 0.2, 0)
    traj = simulate_dataset(DynamicsSpec("Epi"), top, ("uniform", 0, 1), dict(dt=1e-3, T=1.0, T_end=1.0), 0)
    ts = build_training_pairs(traj, top, full_interval(traj, 100))
    model, lg = train_decoupler(ts, top, opt=TrainConfig(epochs=200, batch_size=4, seed=0))
    return model, lg, ts


def test_epi_decoupling_quality(epi_model):
    model, lg, ts = epi_model
    assert min(lg.val_loss) < 1e-2
    g = np.linspace(ts.states.min(), ts.states.max(), 15)
    pairs = np.array([[a, b] for a in g for b in g])
    q = query_inter(model, 0, pairs)[:, 0]
    truth = pairs[:, 1] * (1 - pairs[:, 0])
    r2 = 1 - np.sum((q - truth) ** 2) / np.sum((truth - truth.mean()) ** 2)
    assert r2 > 0.95


def test_training_is_permutation_consistent():
    rng = np.random.default_rng(3)
    top = gen_er(6, 0.5, 1)
    X = rng.uniform(0, 1, (20, 6, 1))
    Y = np.sin(X) + 0.1
    perm = rng.permutation(6)
    cfg = TrainConfig(epochs=30, seed=2)
    _, a = train_decoupler(_set(np.arange(20.0), X, Y), top, MlpSpec(hidden=6), cfg)
    _, b = train_decoupler(_set(np.arange(20.0), X[:, perm], Y[:, perm]), top.permuted(perm), MlpSpec(hidden=6), cfg)
    assert a.val_loss[-1] == pytest.approx(b.val_loss[-1], rel=1e-9)


def test_mlp_shapes_follow_architecture():
    model = DecouplerModel.init(3, 1, 1, MlpSpec())
    assert model.self_nets[0].sizes == [3, 50, 50, 3]
    assert model.inter_nets[0].g0.sizes == [6, 50, 50, 50, 3]
    assert model.inter_nets[0].g1.sizes == [3, 50, 50, 50, 3]
    assert isinstance(model.self_nets[0], MLP)
