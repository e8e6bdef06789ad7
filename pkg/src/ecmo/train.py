"""Training loops for the HED model and the matcher."""

from __future__ import annotations

import logging
import math
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import LabeledTriple
from .errors import ContractError
from .hed import HedModel, batch_nll, perplexity
from .matcher import Matcher
from .optim import Adam
from .rng import derive_rng

logger = logging.getLogger(__name__)

LogFn = Callable[[int, str, str, float], None]


def _batches(n: int, batch_size: int, seed: int, stream: str, epoch: int):
    order = derive_rng(seed, stream, epoch).permutation(n)
    # the last partial batch is kept
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _record(history: list, log: LogFn | None, epoch: int, split: str, metric: str, value: float) -> None:
    history.append((epoch, split, metric, value))
    logger.info("epoch %d %s %s %.6g", epoch, split, metric, value)
    if log is not None:
        log(epoch, split, metric, value)


def train_hed(model: HedModel, corpus: Sequence, epochs: int, batch_size: int = 40, seed: int = 0,
              lr: float = 1e-3, clip: float = 5.0, val: Sequence | None = None,
              log: LogFn | None = None) -> list:
    """Minimize per-token session NLL with Adam; returns the metric history.

    Each step uses the batch's summed NLL divided by its predicted-token
    count. Optimizer state starts fresh on every call.
    """
    if not corpus:
        raise ContractError("train_hed on an empty corpus")
    for s in corpus:
        if len(s) < 2:
            raise ContractError("every training session needs at least two utterances")
    opt = Adam(model.parameters(), lr=lr, clip=clip)
    history: list = []
    if val and epochs > 0:
        _record(history, log, 0, "val", "perplexity", perplexity(model, val))
    for epoch in range(1, epochs + 1):
        total, count = 0.0, 0
        for idx in _batches(len(corpus), batch_size, seed, "hed.shuffle", epoch):
            opt.zero_grad()
            with T.Tape() as tape:
                loss, n = batch_nll(model, [corpus[i] for i in idx])
                tape.backward(T.scale(loss, 1.0 / n))
            opt.step()
            total += float(loss.data)
            count += n
        _record(history, log, epoch, "train", "perplexity", math.exp(total / count))
        if val:
            _record(history, log, epoch, "val", "perplexity", perplexity(model, val))
    return history


def finetune_hed(model: HedModel, corpus: Sequence, epochs: int, **kwargs) -> list:
    """Continue training loaded parameters on a new corpus with fresh Adam moments."""
    return train_hed(model, corpus, epochs, **kwargs)


def train_matcher(matcher: Matcher, triples: Sequence[LabeledTriple], epochs: int, batch_size: int = 40,
                  seed: int = 0, lr: float = 1e-3, clip: float = 5.0,
                  log: LogFn | None = None) -> list:
    """Minimize the mean binary cross-entropy of the combined score.

    Frozen HED parameters are never handed to the optimizer; in
    continue-train mode the HED encoder parameters are updated jointly.
    """
    if matcher.config.ecmo_mode != "none" and matcher.hed is None:
        raise ContractError("ECMo mode requires a HED model")
    if not triples:
        raise ContractError("train_matcher on an empty triple set")
    opt = Adam(matcher.trainable_parameters(), lr=lr, clip=clip)
    history: list = []
    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in _batches(len(triples), batch_size, seed, "matcher.shuffle", epoch):
            opt.zero_grad()
            with T.Tape() as tape:
                loss = matcher.loss([triples[i] for i in idx])
                tape.backward(loss)
            opt.step()
            matcher.steps_taken += 1
            total += float(loss.data) * len(idx)
        _record(history, log, epoch, "train", "loss", total / len(triples))
    return history


def fit_batch(params: dict, loss_fn: Callable[[], "T.Tensor"], steps: int, lr: float = 1e-3,
              clip: float = 5.0) -> list[float]:
    """Repeated Adam steps on one fixed batch; returns the loss before each step."""
    opt = Adam(params, lr=lr, clip=clip)
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        with T.Tape() as tape:
            loss = loss_fn()
            tape.backward(loss)
        losses.append(float(loss.data))
        opt.step()
    return losses


def flatten_params(params: dict) -> np.ndarray:
    return np.concatenate([p.data.reshape(-1) for p in params.values()])
