"""GRU building blocks shared by the generation model and the matcher.

Cell convention::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~

The input projections of the three gates are stored side by side in one
``[input, 3*hidden]`` matrix so a whole sequence is projected with one matmul.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

INIT_SCALE = 0.08


def uniform_init(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


class GRUParams:
    def __init__(self, prefix: str, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        d = hidden_dim
        self.W = Tensor.param(uniform_init(rng, (input_dim, 3 * d)), f"{prefix}.W")
        self.U_zr = Tensor.param(uniform_init(rng, (d, 2 * d)), f"{prefix}.U_zr")
        self.U_h = Tensor.param(uniform_init(rng, (d, d)), f"{prefix}.U_h")
        self.b = Tensor.param(np.zeros(3 * d), f"{prefix}.b")

    def tensors(self) -> list[Tensor]:
        return [self.W, self.U_zr, self.U_h, self.b]


def project_inputs(p: GRUParams, x: Tensor) -> Tensor:
    """Input half of all three gates, ``x @ W + b``, for any leading shape."""
    return T.add(T.matmul(x, p.W), p.b)


def gru_step(p: GRUParams, h: Tensor, gx: Tensor) -> Tensor:
    d = p.hidden_dim
    zr = T.sigmoid(T.add(T.getitem(gx, (Ellipsis, slice(0, 2 * d))), T.matmul(h, p.U_zr)))
    z = T.getitem(zr, (Ellipsis, slice(0, d)))
    r = T.getitem(zr, (Ellipsis, slice(d, 2 * d)))
    cand = T.tanh(T.add(T.getitem(gx, (Ellipsis, slice(2 * d, 3 * d))),
                        T.matmul(T.mul(r, h), p.U_h)))
    # (1 - z) * h + z * cand, in three ops
    return T.add(h, T.mul(z, T.sub(cand, h)))


def gru_cell(p: GRUParams, h_prev: Tensor, x: Tensor) -> Tensor:
    """One GRU update for a single vector or a batch of rows."""
    h_prev, x = T.as_tensor(h_prev), T.as_tensor(x)
    if x.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden_dim \
            or x.shape[:-1] != h_prev.shape[:-1]:
        raise DimensionError(
            f"gru_cell: input {x.shape} / state {h_prev.shape} do not fit "
            f"params ({p.input_dim} -> {p.hidden_dim})"
        )
    return gru_step(p, h_prev, project_inputs(p, x))


def run_gru(p: GRUParams, gx: Tensor, mask: np.ndarray, reverse: bool = False) -> list[Tensor]:
    """Run over time-major projected inputs ``gx[T, B, 3d]`` from a zero state.

    Where ``mask[t, b]`` is false the state of row ``b`` is carried through
    unchanged, which makes padded rows equivalent to true-length runs.
    """
    steps, rows = mask.shape
    h = Tensor(np.zeros((rows, p.hidden_dim)))
    out: list[Tensor | None] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        new = gru_step(p, h, T.getitem(gx, t))
        m = mask[t]
        h = new if m.all() else T.where(m, new, h)
        out[t] = h
    return out


def encode_words(fwd: GRUParams, bwd: GRUParams, x: Tensor, lengths: np.ndarray):
    """Bidirectional GRU over ``x[T, U, e]`` followed by masked max pooling.

    Returns word states ``[T, U, 2d]`` (forward half first) and pooled
    utterance vectors ``[U, 2d]``.
    """
    steps = x.shape[0]
    mask = np.arange(steps)[:, None] < lengths[None, :]
    fw = run_gru(fwd, project_inputs(fwd, x), mask)
    bw = run_gru(bwd, project_inputs(bwd, x), mask, reverse=True)
    states = T.concat([T.stack(fw), T.stack(bw)])
    return states, T.max_over_time(states, lengths)


def run_over_items(p: GRUParams, items: Tensor, index: np.ndarray, counts: np.ndarray) -> list[Tensor]:
    """GRU across rows of ``items`` selected by ``index[B, n]``.

    Row ``b`` consumes ``items[index[b, i]]`` for ``i < counts[b]``; returns
    the state after each step (carried forward once a row is exhausted).
    """
    g = project_inputs(p, items)
    n = index.shape[1]
    mask = (np.arange(n)[None, :] < counts[:, None]).T
    gx = T.stack([T.getitem(g, index[:, i]) for i in range(n)])
    return run_gru(p, gx, mask)
