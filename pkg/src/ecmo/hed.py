"""Hierarchical encoder-decoder dialogue model.

Utterances are read by a bidirectional GRU whose word states are max-pooled
into utterance vectors; a context GRU runs over those vectors; a GRU decoder
initialized from the last context state generates the next turn with
teacher forcing. Word ids use the reserved layout of :mod:`ecmo.data`.

All entry points accept a list of sessions and process them as one padded
batch; the single-session helpers are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import BOS, EOS
from .errors import ContractError, DimensionError, EmptySequenceError, FormatError, TokenIndexError
from .layers import GRUParams, encode_words, gru_step, project_inputs, run_over_items, uniform_init
from .rng import derive_rng
from .tensor import Tensor


@dataclass(frozen=True)
class HedConfig:
    vocab_size: int
    embed_dim: int = 300
    hidden_dim: int = 300
    max_session_len: int = 10
    max_utterance_len: int = 50

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value <= 0:
                raise ContractError(f"HedConfig.{name} must be a positive int, got {value!r}")

    @property
    def local_dim(self) -> int:
        return 2 * self.hidden_dim


class HedModel:
    def __init__(self, config: HedConfig, seed: int = 0, embeddings: np.ndarray | None = None):
        self.config = config
        c = config
        rng = derive_rng(seed, "hed.init")
        if embeddings is None:
            embeddings = rng.normal(0.0, 0.1, size=(c.vocab_size, c.embed_dim))
        elif embeddings.shape != (c.vocab_size, c.embed_dim):
            raise DimensionError(
                f"embedding table {embeddings.shape} != ({c.vocab_size}, {c.embed_dim})"
            )
        self.embed = Tensor.param(embeddings, "embed")
        self.utt_fwd = GRUParams("utt_fwd", c.embed_dim, c.hidden_dim, rng)
        self.utt_bwd = GRUParams("utt_bwd", c.embed_dim, c.hidden_dim, rng)
        self.ctx = GRUParams("ctx", 2 * c.hidden_dim, c.hidden_dim, rng)
        self.dec = GRUParams("dec", c.embed_dim, c.hidden_dim, rng)
        self.init_W = Tensor.param(uniform_init(rng, (c.hidden_dim, c.hidden_dim)), "dec_init.W")
        self.init_b = Tensor.param(np.zeros(c.hidden_dim), "dec_init.b")
        self.out_W = Tensor.param(uniform_init(rng, (c.hidden_dim + c.embed_dim, c.vocab_size)), "out.W")
        self.out_b = Tensor.param(np.zeros(c.vocab_size), "out.b")

    def parameters(self) -> dict[str, Tensor]:
        tensors = [self.embed]
        for p in (self.utt_fwd, self.utt_bwd, self.ctx, self.dec):
            tensors += p.tensors()
        tensors += [self.init_W, self.init_b, self.out_W, self.out_b]
        return {t.name: t for t in tensors}

    def encoder_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items()
                if k == "embed" or k.split(".")[0] in ("utt_fwd", "utt_bwd", "ctx")}


# ------------------------------------------------------------------ encoding


class SessionBatch:
    """Padded index arrays for a list of id-sessions.

    Utterances of all sessions are flattened in order; ``ids`` is time-major
    ``[T, U]`` padded with 0, and ``index[b, i]`` is the flat row of the
    ``i``-th utterance of session ``b``.
    """

    def __init__(self, sessions: Sequence[Sequence[Sequence[int]]], config: HedConfig | None = None):
        if not sessions:
            raise EmptySequenceError("empty batch of sessions")
        utts = []
        counts = []
        for s in sessions:
            if len(s) == 0:
                raise EmptySequenceError("session with no utterances")
            if config is not None and len(s) > config.max_session_len:
                raise ContractError(f"session of {len(s)} turns exceeds {config.max_session_len}")
            counts.append(len(s))
            for u in s:
                if len(u) == 0:
                    raise EmptySequenceError("utterance with no tokens")
                if config is not None and len(u) > config.max_utterance_len:
                    raise ContractError(f"utterance of {len(u)} tokens exceeds {config.max_utterance_len}")
                utts.append(u)
        self.counts = np.array(counts)
        self.lengths = np.array([len(u) for u in utts])
        self.ids = np.zeros((self.lengths.max(), len(utts)), dtype=np.int64)
        for j, u in enumerate(utts):
            self.ids[: len(u), j] = u
        if config is not None and (self.ids.min() < 0 or self.ids.max() >= config.vocab_size):
            raise TokenIndexError(f"token id outside vocabulary of {config.vocab_size}")
        starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        n = self.counts.max()
        self.index = np.zeros((len(sessions), n), dtype=np.int64)
        for b, (st, cnt) in enumerate(zip(starts, self.counts)):
            self.index[b, :cnt] = st + np.arange(cnt)
        self.starts = starts

    def __len__(self) -> int:
        return len(self.counts)


@dataclass
class BatchEncoding:
    batch: SessionBatch
    word_states: Tensor  # [T, U, 2d]
    utterance_vectors: Tensor  # [U, 2d]
    context_states: list  # n_max tensors [B, d]


@dataclass
class EncodedSession:
    word_states: list  # per utterance, array [T_i, 2d]
    utterance_vectors: np.ndarray  # [n, 2d]
    context_states: np.ndarray  # [n, d]


def encode_batch(model: HedModel, sessions, batch: SessionBatch | None = None) -> BatchEncoding:
    batch = batch or SessionBatch(sessions, model.config)
    x = T.getitem(model.embed, batch.ids)
    states, pooled = encode_words(model.utt_fwd, model.utt_bwd, x, batch.lengths)
    ctx = run_over_items(model.ctx, pooled, batch.index, batch.counts)
    return BatchEncoding(batch, states, pooled, ctx)


def split_encoding(enc: BatchEncoding) -> list[EncodedSession]:
    """Per-session numpy views of a batch encoding."""
    b = enc.batch
    H = enc.word_states.data
    V = enc.utterance_vectors.data
    C = np.stack([c.data for c in enc.context_states])  # [n, B, d]
    out = []
    for s, (st, cnt) in enumerate(zip(b.starts, b.counts)):
        rows = range(st, st + cnt)
        out.append(EncodedSession(
            word_states=[H[: b.lengths[j], j].copy() for j in rows],
            utterance_vectors=V[st:st + cnt].copy(),
            context_states=C[:cnt, s].copy(),
        ))
    return out


def encode_utterance(model: HedModel, tokens: Sequence[int]):
    """Word states ``[T, 2d]`` and the max-pooled utterance vector ``[2d]``."""
    if len(tokens) == 0:
        raise EmptySequenceError("empty utterance")
    enc = encode_batch(model, [[list(tokens)]])
    return T.getitem(enc.word_states, (slice(None), 0)), T.getitem(enc.utterance_vectors, 0)


def encode_session(model: HedModel, session) -> EncodedSession:
    if len(session) == 0:
        raise EmptySequenceError("empty session")
    with T.no_tape():
        return split_encoding(encode_batch(model, [session]))[0]


def encode_sessions(model: HedModel, sessions) -> list[EncodedSession]:
    with T.no_tape():
        return split_encoding(encode_batch(model, sessions))


# ------------------------------------------------------------------ decoding


def decode_batch(model: HedModel, cond: Tensor, targets: Sequence[Sequence[int]]):
    """Summed teacher-forced NLL of ``targets`` given decoder conditions ``cond[M, d]``.

    Each target must end with the end-of-sequence id. Returns ``(loss, count)``.
    """
    c = model.config
    if len(targets) != cond.shape[0]:
        raise DimensionError(f"{len(targets)} targets for {cond.shape[0]} conditioning rows")
    lengths = np.array([len(t) for t in targets])
    if np.any(lengths == 0):
        raise EmptySequenceError("empty decoder target")
    for t in targets:
        if t[-1] != EOS:
            raise ContractError("decoder target must end with <eos>")
        if min(t) < 0 or max(t) >= c.vocab_size:
            raise TokenIndexError(f"target id outside vocabulary of {c.vocab_size}")
    steps, m = lengths.max(), len(targets)
    gold = np.zeros((steps, m), dtype=np.int64)
    prev = np.zeros((steps, m), dtype=np.int64)
    for j, t in enumerate(targets):
        gold[: len(t), j] = t
        prev[0, j] = BOS
        prev[1: len(t), j] = t[:-1]

    h = T.tanh(T.add(T.matmul(cond, model.init_W), model.init_b))
    x = T.getitem(model.embed, prev)  # [steps, M, e]
    gx = project_inputs(model.dec, x)
    hs = []
    for t in range(steps):
        h = gru_step(model.dec, h, T.getitem(gx, t))
        hs.append(h)
    feats = T.concat([T.stack(hs), x])
    feats = T.reshape(feats, (steps * m, feats.shape[-1]))
    valid = (np.arange(steps)[:, None] < lengths[None, :]).reshape(-1)
    rows = np.flatnonzero(valid)
    logits = T.add(T.matmul(T.getitem(feats, rows), model.out_W), model.out_b)
    loss = T.softmax_cross_entropy(logits, gold.reshape(-1)[rows])
    return loss, int(lengths.sum())


def decode_nll(model: HedModel, h_s_n: Tensor, target: Sequence[int]):
    """NLL of one target utterance (ending in ``<eos>``) given a context state."""
    h_s_n = T.as_tensor(h_s_n)
    if h_s_n.shape != (model.config.hidden_dim,):
        raise DimensionError(f"context state {h_s_n.shape} != ({model.config.hidden_dim},)")
    return decode_batch(model, T.reshape(h_s_n, (1, -1)), [list(target)])


def batch_nll(model: HedModel, sessions):
    """Summed NLL over every predictable turn of every session.

    Turn ``j >= 2`` of a session is decoded from the context state after
    turns ``1..j-1``; the causal recurrence makes these the prefix states of
    one full encoding.
    """
    for s in sessions:
        if len(s) < 2:
            raise ContractError("session needs at least two utterances to predict a turn")
    # the last turn is never an encoder input, so drop it before encoding
    enc = encode_batch(model, [s[:-1] for s in sessions])
    b = enc.batch
    nb = len(b)
    ctx = T.stack(enc.context_states)  # [n, B, d]
    ctx = T.reshape(ctx, (ctx.shape[0] * nb, ctx.shape[-1]))
    rows, targets = [], []
    for s_idx, s in enumerate(sessions):
        for j in range(1, len(s)):
            rows.append((j - 1) * nb + s_idx)
            targets.append(list(s[j]) + [EOS])
    return decode_batch(model, T.getitem(ctx, np.array(rows)), targets)


def session_nll(model: HedModel, session):
    return batch_nll(model, [session])


def perplexity(model: HedModel, corpus, batch_size: int = 64) -> float:
    """``exp(total NLL / total predicted tokens)`` over all predictable turns."""
    if not corpus:
        raise ContractError("perplexity of an empty corpus")
    total, count = 0.0, 0
    with T.no_tape():
        for i in range(0, len(corpus), batch_size):
            loss, n = batch_nll(model, corpus[i:i + batch_size])
            total += float(loss.data)
            count += n
    return math.exp(total / count)


# --------------------------------------------------------------- checkpoints


def checkpoint_payload(model: HedModel, vocab) -> tuple[dict, dict]:
    config = {"kind": "hed", "hed": asdict(model.config), "vocab": vocab.to_list()}
    return config, {k: v.data for k, v in model.parameters().items()}


def load_params(model: HedModel, params: dict, prefix: str = "") -> None:
    """Copy arrays into ``model``; names and shapes must match exactly."""
    own = model.parameters()
    names = {k[len(prefix):] for k in params if k.startswith(prefix)}
    if names != set(own):
        missing, extra = set(own) - names, names - set(own)
        raise FormatError(f"parameter set mismatch (missing {sorted(missing)}, unexpected {sorted(extra)})")
    for name, t in own.items():
        arr = params[prefix + name]
        if arr.shape != t.shape:
            raise FormatError(f"parameter {name}: shape {arr.shape} != expected {t.shape}")
        t.data[...] = arr


def from_checkpoint(config: dict, params: dict, prefix: str = ""):
    """Rebuild ``(model, vocab)`` from a loaded checkpoint."""
    from .data import Vocabulary

    try:
        hed_cfg = HedConfig(**config["hed"])
        vocab = Vocabulary(config["vocab"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint config lacks a HED block ({exc})") from None
    if len(vocab) != hed_cfg.vocab_size:
        raise FormatError(f"vocabulary of {len(vocab)} tokens vs vocab_size {hed_cfg.vocab_size}")
    model = HedModel(hed_cfg)
    load_params(model, params, prefix)
    return model, vocab


def save_hed(path, model: HedModel, vocab) -> None:
    config, params = checkpoint_payload(model, vocab)
    checkpoint.save(path, config, params)


def load_hed(path):
    config, params = checkpoint.load(path)
    if config.get("kind") != "hed":
        raise FormatError(f"{path}: not a HED checkpoint (kind={config.get('kind')!r})")
    return from_checkpoint(config, params)
