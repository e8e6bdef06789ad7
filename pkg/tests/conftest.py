import numpy as np
import pytest

from ecmo import tensor as T
from ecmo.data import Vocabulary
from ecmo.gradcheck import max_rel_error, numerical_grad
from ecmo.hed import HedConfig, HedModel


def check_grads(loss_fn, tensors, step=1e-6):
    """Max relative error between tape gradients and central differences."""
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    with T.Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = [t.grad.copy() for t in tensors]

    def f():
        with T.no_tape():
            return float(loss_fn().data)

    numeric = numerical_grad(f, [t.data for t in tensors], step)
    return max_rel_error(analytic, numeric)


def scramble(params, rng, scale=1.0):
    """Replace parameter values so gradients are generic (not near zero)."""
    for p in params.values():
        p.data[...] = rng.uniform(-scale, scale, size=p.shape)


def random_session(rng, vocab_size, n_utts, max_len=4):
    return [list(rng.integers(4, vocab_size, size=rng.integers(1, max_len + 1)))
            for _ in range(n_utts)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_hed():
    return HedModel(HedConfig(vocab_size=12, embed_dim=4, hidden_dim=5), seed=3)


@pytest.fixture
def toy_vocab():
    return Vocabulary(["<pad>", "<unk>", "<bos>", "<eos>"] + [f"w{i}" for i in range(8)])
