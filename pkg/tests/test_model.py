import math

import numpy as np
import pytest

from reminet import autograd as ag
from reminet.dataset import MultigraphObservation, generate_synthetic
from reminet.losses import subject_loss
from reminet.model import (
    CellParams,
    NormalizerParams,
    block_forward,
    cbt_from_hidden,
    cbt_from_hidden_reference,
    cell_forward,
    edge_matrix,
    forward_subject,
    init_params,
    load_checkpoint,
    normalize_views_learned,
    normalize_views_minmax,
    rnn_unit,
    save_checkpoint,
)
from oracles import assert_cbt_valid, cell_forward_loops


def _cell(W_e, W_h, b, Theta):
    return CellParams(ag.parameter(W_e), ag.parameter(W_h), ag.parameter(np.atleast_2d(b)), ag.parameter(Theta))


def _random_cell(rng, n_v, n_in, n_out):
    return _cell(rng.normal(size=(n_out, n_v)), rng.normal(size=(n_out, n_in)),
                 rng.normal(size=(1, n_out)), rng.normal(size=(n_out, n_in)))


def _random_views(rng, n, n_v):
    m = rng.uniform(0, 1, (n, n, n_v))
    m = (m + m.transpose(1, 0, 2)) / 2
    m[np.arange(n), np.arange(n), :] = 0
    return m


# --- normalization ---------------------------------------------------------------

def test_learned_normalizer_constant_view_gives_half():
    views = np.full((4, 4, 2), 3.0)
    views[np.arange(4), np.arange(4)] = 0
    out = normalize_views_learned(views, NormalizerParams.init(2)).data.reshape(4, 4, 2)
    off = ~np.eye(4, dtype=bool)
    np.testing.assert_array_equal(out[off], 0.5)
    np.testing.assert_array_equal(out[~off], 0.0)


def test_learned_normalizer_gain_zero_bias_two():
    rng = np.random.default_rng(0)
    norm = NormalizerParams(ag.parameter(np.zeros((1, 3))), ag.parameter(np.full((1, 3), 2.0)))
    out = normalize_views_learned(_random_views(rng, 5, 3), norm).data.reshape(5, 5, 3)
    off = ~np.eye(5, dtype=bool)
    np.testing.assert_allclose(out[off], 1 / (1 + math.exp(-2)), rtol=1e-15)
    assert out[off][0] == pytest.approx(0.8808, abs=5e-5)


def test_learned_normalizer_open_unit_interval_and_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(20):
        views = _random_views(rng, 6, 3) * rng.uniform(0.1, 50)
        norm = NormalizerParams(ag.parameter(rng.normal(size=(1, 3))), ag.parameter(rng.normal(size=(1, 3))))
        out = normalize_views_learned(views, norm).data.reshape(6, 6, 3)
        off = ~np.eye(6, dtype=bool)
        assert np.all(out[off] > 0) and np.all(out[off] < 1)
        assert np.array_equal(out, out.transpose(1, 0, 2))


def test_minmax_endpoints():
    views = np.zeros((3, 3, 1))
    views[0, 1] = views[1, 0] = 2
    views[0, 2] = views[2, 0] = 4
    views[1, 2] = views[2, 1] = 6
    out = normalize_views_minmax(views)[:, :, 0]
    np.testing.assert_allclose([out[0, 1], out[0, 2], out[1, 2]], [0, 0.5, 1], atol=1e-8)
    assert np.all(np.diag(out) == 0)


def test_minmax_constant_view_is_zero():
    views = np.full((4, 4, 1), 7.0)
    views[np.arange(4), np.arange(4)] = 0
    np.testing.assert_array_equal(normalize_views_minmax(views), 0.0)


def test_minmax_range():
    rng = np.random.default_rng(2)
    out = normalize_views_minmax(_random_views(rng, 7, 4) * 9)
    assert out.min() >= 0 and out.max() <= 1


# --- recurrent unit and cell -------------------------------------------------------

def test_rnn_unit_zero_weights():
    cell = _cell(np.zeros((3, 2)), np.zeros((3, 4)), np.zeros(3), np.zeros((3, 4)))
    np.testing.assert_array_equal(rnn_unit([0.3, 0.9], [1, 2, 3, 4], cell).data, 0.0)


def test_rnn_unit_scalar_tanh():
    cell = _cell(np.array([[1.0]]), np.array([[0.0]]), [0.0], np.array([[0.0]]))
    out = rnn_unit([0.5], [0.7], cell).item()
    assert out == math.tanh(0.5)
    assert out == pytest.approx(0.4621, abs=5e-5)


def test_rnn_unit_range_and_shape_error():
    rng = np.random.default_rng(3)
    cell = _random_cell(rng, 2, 3, 4)
    out = rnn_unit(rng.normal(size=2) * 10, rng.normal(size=3) * 10, cell).data
    assert np.all(np.abs(out) <= 1)
    with pytest.raises(ag.ShapeError):
        rnn_unit([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], cell)


def test_cell_zero_params_gives_zero():
    rng = np.random.default_rng(4)
    cell = _cell(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros(3), np.zeros((3, 3)))
    h = rng.normal(size=(5, 3))
    out = cell_forward(edge_matrix(_random_views(rng, 5, 2)), h, cell)
    np.testing.assert_array_equal(out.data, 0.0)


def test_cell_identity_theta_passes_through():
    rng = np.random.default_rng(5)
    cell = _cell(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros(3), np.eye(3))
    h = rng.normal(size=(5, 3))
    out = cell_forward(edge_matrix(_random_views(rng, 5, 2)), h, cell)
    np.testing.assert_array_equal(out.data, h)


def test_cell_three_node_scalar_matches_loops():
    views = np.zeros((3, 3, 1))
    views[0, 1] = views[1, 0] = 0.2
    views[0, 2] = views[2, 0] = 0.7
    views[1, 2] = views[2, 1] = 0.4
    h = np.array([[0.5], [-1.0], [2.0]])
    W_e, W_h, b, Theta = np.array([[1.3]]), np.array([[-0.6]]), np.array([0.25]), np.array([[0.9]])
    got = cell_forward(edge_matrix(views), h, _cell(W_e, W_h, b, Theta)).data
    want = cell_forward_loops(views, h, W_e, W_h, b, Theta)
    np.testing.assert_allclose(got, want, atol=1e-12, rtol=0)


@pytest.mark.parametrize("n, n_v, n_in, n_out", [(4, 2, 3, 5), (6, 3, 4, 2), (2, 1, 1, 1)])
def test_cell_matches_loops_random(n, n_v, n_in, n_out):
    rng = np.random.default_rng(n * 7 + n_out)
    views = _random_views(rng, n, n_v)
    h = rng.normal(size=(n, n_in))
    W_e, W_h = rng.normal(size=(n_out, n_v)), rng.normal(size=(n_out, n_in))
    b, Theta = rng.normal(size=n_out), rng.normal(size=(n_out, n_in))
    got = cell_forward(edge_matrix(views), h, _cell(W_e, W_h, b, Theta)).data
    np.testing.assert_allclose(got, cell_forward_loops(views, h, W_e, W_h, b, Theta), atol=1e-12, rtol=0)


def test_cell_permutation_equivariance():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(2, 8))
        views = _random_views(rng, n, 2)
        h = rng.normal(size=(n, 3))
        cell = _random_cell(rng, 2, 3, 4)
        perm = rng.permutation(n)
        out = cell_forward(edge_matrix(views), h, cell).data
        out_p = cell_forward(edge_matrix(views[np.ix_(perm, perm)]), h[perm], cell).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def test_cell_shape_errors():
    rng = np.random.default_rng(7)
    cell = _random_cell(rng, 2, 3, 4)
    with pytest.raises(ag.ShapeError):
        cell_forward(edge_matrix(_random_views(rng, 4, 2)), rng.normal(size=(4, 2)), cell)
    with pytest.raises(ag.ShapeError):
        cell_forward(edge_matrix(_random_views(rng, 4, 3)), rng.normal(size=(4, 3)), cell)


# --- block / recursion ------------------------------------------------------------

def _zero_params(n_v, dims):
    params = init_params("cyclic", n_v, dims, seed=0)
    for p in params.parameters():
        p.data[:] = 0.0
    return params


@pytest.mark.parametrize("cycles", [0, 1, 3])
def test_block_zero_params_zero_states(cycles):
    rng = np.random.default_rng(8)
    states = block_forward(edge_matrix(_random_views(rng, 5, 2)), _zero_params(2, (3, 4)), 3, cycles)
    assert len(states) == 3
    for h in states:
        np.testing.assert_array_equal(h.data, 0.0)


def test_block_cycles_change_first_state():
    rng = np.random.default_rng(9)
    params = init_params("cyclic", 2, (3, 5, 4), seed=1)
    for layer in params.layers:
        layer.b.data = rng.normal(size=layer.b.shape)
    edges = edge_matrix(_random_views(rng, 6, 2))
    h0 = block_forward(edges, params, 2, cycles=0)[0].data
    h1 = block_forward(edges, params, 2, cycles=1)[0].data
    assert not np.allclose(h0, h1)


def test_block_single_timepoint_is_one_stack():
    rng = np.random.default_rng(10)
    params = init_params("vanilla", 2, (3, 5, 4), seed=2)
    edges = edge_matrix(_random_views(rng, 5, 2))
    (h,) = block_forward(edges, params, 1, cycles=0)
    x = np.zeros((5, 4))
    for layer in params.layers:
        x = cell_forward(edges, x, layer).data
    np.testing.assert_array_equal(h.data, x)


def test_layer_chain_invariant():
    params = init_params("full", 4, (12, 36, 24), seed=0)
    assert [(l.n_in, l.n_out) for l in params.layers] == [(24, 12), (12, 36), (36, 24)]
    assert params.normalizer is not None
    assert init_params("vanilla", 4).normalizer is None


def test_init_glorot_bounds_and_zero_bias():
    params = init_params("full", 4, (12, 36, 24), seed=3)
    for layer in params.layers:
        for W in (layer.W_e, layer.W_h, layer.Theta):
            rows, cols = W.shape
            assert np.all(np.abs(W.data) <= math.sqrt(6 / (rows + cols)))
        assert np.all(layer.b.data == 0)


# --- template construction --------------------------------------------------------

def test_cbt_identical_rows_zero():
    h = np.tile([[0.3, -1.2, 4.0]], (5, 1))
    np.testing.assert_array_equal(cbt_from_hidden(ag.constant(h)).data, 0.0)


def test_cbt_scalar_embeddings():
    C = cbt_from_hidden(ag.constant([[0.0], [1.0], [3.0]])).data
    np.testing.assert_array_equal(C, [[0, 1, 3], [1, 0, 2], [3, 2, 0]])


def test_cbt_two_dim_embeddings():
    C = cbt_from_hidden(ag.constant([[1.0, 0.0], [0.0, 1.0]])).data
    np.testing.assert_array_equal(C, [[0, 2], [2, 0]])


def test_cbt_reference_edge_cases():
    np.testing.assert_array_equal(cbt_from_hidden_reference(np.zeros((4, 3))), np.zeros((4, 4)))
    np.testing.assert_array_equal(cbt_from_hidden_reference(np.array([[2.5, -1.0]])), np.zeros((1, 1)))


def test_cbt_matches_reference_random():
    rng = np.random.default_rng(11)
    for _ in range(200):
        h = rng.normal(size=(int(rng.integers(1, 13)), int(rng.integers(1, 9)))) * 3
        np.testing.assert_allclose(cbt_from_hidden(ag.constant(h)).data, cbt_from_hidden_reference(h), atol=1e-12)


# --- subject forward ---------------------------------------------------------------

def test_forward_zero_params_zero_cbts():
    ds = generate_synthetic(1, 5, 2, 3, seed=0)
    params = init_params("full", 2, (3, 4), seed=0)
    for p in params.parameters():
        p.data[:] = 0.0
    cbts = forward_subject(ds.subjects[0].baseline, params, 3)
    assert len(cbts) == 3
    for c in cbts:
        np.testing.assert_array_equal(c.data, 0.0)


@pytest.mark.parametrize("variant", ["vanilla", "cyclic", "cyclic-minmax", "full"])
def test_forward_invariants_and_determinism(variant):
    ds = generate_synthetic(3, 6, 2, 3, seed=4)
    params = init_params(variant, 2, (3, 5, 4), seed=5)
    for s in ds.subjects:
        a = forward_subject(s.baseline, params, 3)
        b = forward_subject(s.baseline, params, 3)
        for ca, cb in zip(a, b):
            assert_cbt_valid(ca.data)
            assert np.array_equal(ca.data, cb.data)


def test_forward_uses_only_baseline():
    ds = generate_synthetic(1, 5, 2, 3, seed=6)
    params = init_params("full", 2, (3, 4), seed=7)
    subject = ds.subjects[0]
    via_obs = forward_subject(subject.baseline, params, 3)
    via_views = forward_subject(MultigraphObservation(subject.baseline.views.copy()), params, 3)
    for a, b in zip(via_obs, via_views):
        assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("variant", ["vanilla", "cyclic-minmax", "full"])
def test_forward_and_loss_gradient_check(variant):
    ds = generate_synthetic(4, 5, 2, 2, seed=8)
    params = init_params(variant, 2, (3, 4), seed=9)
    subject, samples = ds.subjects[0], list(ds.subjects[1:])

    def loss():
        cbts = forward_subject(subject.baseline, params, 2)
        return subject_loss(cbts, samples, 0.3)[0]

    assert ag.finite_diff_check(loss, params.parameters(), step=1e-5) <= 1e-4


def test_checkpoint_round_trip(tmp_path):
    params = init_params("full", 3, (4, 6, 5), seed=10)
    save_checkpoint(tmp_path / "ck.json", params, {"seed": 10, "variant": "full"})
    back, cfg = load_checkpoint(tmp_path / "ck.json")
    assert cfg == {"seed": 10, "variant": "full"}
    assert back.variant == "full" and back.hidden_dims == (4, 6, 5)
    for (na, a), (nb, b) in zip(params.named_parameters(), back.named_parameters()):
        assert na == nb
        assert np.array_equal(a.data, b.data)
