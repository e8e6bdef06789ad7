import numpy as np
import pytest

from ecmo import tensor as T
from ecmo.errors import DimensionError
from ecmo.layers import GRUParams, encode_words, gru_cell, project_inputs, run_gru, run_over_items
from ecmo.tensor import Tensor

from conftest import check_grads


def zero_gru(e, d):
    p = GRUParams("g", e, d, np.random.default_rng(0))
    for t in p.tensors():
        t.data[...] = 0.0
    return p


def test_zero_params_halve_state():
    p = zero_gru(3, 4)
    h = np.array([0.4, -1.0, 2.0, 0.0])
    out = gru_cell(p, Tensor(h), Tensor(np.ones(3)))
    assert np.array_equal(out.data, 0.5 * h)
    assert np.array_equal(gru_cell(p, Tensor(np.zeros(4)), Tensor(np.ones(3))).data, np.zeros(4))


def test_gru_cell_gradient_every_parameter(rng):
    p = GRUParams("g", 3, 4, rng)
    for t in p.tensors():
        t.data[...] = rng.uniform(-1, 1, size=t.shape)
    h = Tensor.param(rng.normal(size=4))
    x = Tensor.param(rng.normal(size=3))
    assert check_grads(lambda: T.sum_all(gru_cell(p, h, x)), p.tensors() + [h, x]) < 1e-5


def test_gru_cell_shape_errors(rng):
    p = GRUParams("g", 3, 4, rng)
    with pytest.raises(DimensionError):
        gru_cell(p, Tensor(np.zeros(4)), Tensor(np.zeros(2)))
    with pytest.raises(DimensionError):
        gru_cell(p, Tensor(np.zeros(5)), Tensor(np.zeros(3)))


def test_masked_run_matches_true_length(rng):
    p = GRUParams("g", 3, 4, rng)
    x = rng.normal(size=(5, 2, 3))
    lengths = np.array([3, 5])
    mask = np.arange(5)[:, None] < lengths[None, :]
    for reverse in (False, True):
        padded = run_gru(p, project_inputs(p, Tensor(x)), mask, reverse)
        alone = run_gru(p, project_inputs(p, Tensor(x[:3, :1])), np.ones((3, 1), bool), reverse)
        got = np.stack([h.data[0] for h in padded[:3]])
        want = np.stack([h.data[0] for h in alone])
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)


def test_encode_words_pool_bounds(rng):
    fwd, bwd = GRUParams("f", 3, 2, rng), GRUParams("b", 3, 2, rng)
    states, pooled = encode_words(fwd, bwd, Tensor(rng.normal(size=(4, 3, 3))), np.array([4, 1, 2]))
    assert states.shape == (4, 3, 4) and pooled.shape == (3, 4)
    for u, n in enumerate([4, 1, 2]):
        assert np.all(pooled.data[u] >= states.data[:n, u])
    assert np.array_equal(pooled.data[1], states.data[0, 1])


def test_run_over_items_gradient(rng):
    p = GRUParams("c", 2, 3, rng)
    items = Tensor.param(rng.normal(size=(5, 2)))
    index = np.array([[0, 1, 2], [3, 4, 0]])
    counts = np.array([3, 2])

    def loss():
        states = run_over_items(p, items, index, counts)
        return T.sum_all(T.mul(states[-1], states[-1]))

    assert check_grads(loss, p.tensors() + [items]) < 1e-5
