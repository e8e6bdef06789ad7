"""Context-response matching with optional ECMo augmentation.

The base scorer is a hierarchical dual encoder: each context utterance goes
through a word-level biGRU with max pooling, a GRU aggregates the utterance
vectors, the response is encoded by its own biGRU with max pooling, and a
bilinear form gives the base logit.

With ECMo the HED word states are appended to every word embedding at the
input layer, and a second bilinear logit between the HED context state of
the last utterance and the HED state of the response is added at the output
layer. The two logits are summed and squashed once.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import checkpoint
from . import hed as hedlib
from . import tensor as T
from .data import LabeledTriple, Vocabulary
from .errors import AlignmentError, CompatibilityError, ContractError, EmptySequenceError, FormatError
from .hed import HedModel, SessionBatch
from .layers import GRUParams, encode_words, run_over_items, uniform_init
from .representations import EcmoReps
from .rng import derive_rng
from .tensor import Tensor

MODES = ("none", "frozen", "continue")
LEVELS = ("both", "local", "global")


@dataclass(frozen=True)
class MatcherConfig:
    vocab_size: int
    match_embed_dim: int = 200
    match_hidden_dim: int = 200
    ecmo_mode: str = "none"
    ecmo_levels: str = "both"
    max_session_len: int = 10
    max_utterance_len: int = 50

    def __post_init__(self):
        if self.ecmo_mode not in MODES:
            raise ContractError(f"ecmo_mode must be one of {MODES}, got {self.ecmo_mode!r}")
        if self.ecmo_levels not in LEVELS:
            raise ContractError(f"ecmo_levels must be one of {LEVELS}, got {self.ecmo_levels!r}")
        for name in ("vocab_size", "match_embed_dim", "match_hidden_dim",
                     "max_session_len", "max_utterance_len"):
            if getattr(self, name) <= 0:
                raise ContractError(f"MatcherConfig.{name} must be positive")

    @property
    def uses_local(self) -> bool:
        return self.ecmo_mode != "none" and self.ecmo_levels in ("both", "local")

    @property
    def uses_global(self) -> bool:
        return self.ecmo_mode != "none" and self.ecmo_levels in ("both", "global")


class Matcher:
    """Matching model plus the vocabularies needed to feed it text."""

    def __init__(self, config: MatcherConfig, vocab: Vocabulary, seed: int = 0,
                 hed: HedModel | None = None, hed_vocab: Vocabulary | None = None):
        if len(vocab) != config.vocab_size:
            raise CompatibilityError(f"vocabulary of {len(vocab)} vs vocab_size {config.vocab_size}")
        if config.ecmo_mode != "none":
            if hed is None or hed_vocab is None:
                raise ContractError(f"ecmo_mode={config.ecmo_mode!r} needs a HED model and its vocabulary")
            if len(hed_vocab) != hed.config.vocab_size:
                raise CompatibilityError("HED vocabulary does not match the HED model")
        self.config = config
        self.vocab = vocab
        self.hed = hed if config.ecmo_mode != "none" else None
        self.hed_vocab = hed_vocab if config.ecmo_mode != "none" else None
        self.steps_taken = 0

        c = config
        rng = derive_rng(seed, "matcher.init")
        me, mh = c.match_embed_dim, c.match_hidden_dim
        width = me + (2 * hed.config.hidden_dim if c.uses_local else 0)
        self.input_dim = width
        self.embed = Tensor.param(rng.normal(0.0, 0.1, size=(c.vocab_size, me)), "embed")
        self.utt_fwd = GRUParams("utt_fwd", width, mh, rng)
        self.utt_bwd = GRUParams("utt_bwd", width, mh, rng)
        self.ctx = GRUParams("ctx", 2 * mh, mh, rng)
        self.resp_fwd = GRUParams("resp_fwd", width, mh, rng)
        self.resp_bwd = GRUParams("resp_bwd", width, mh, rng)
        self.M = Tensor.param(uniform_init(rng, (mh, 2 * mh)), "match.M")
        self.b = Tensor.param(np.zeros(1), "match.b")
        # drawn even when unused so the base parameters do not depend on the mode
        hd = hed.config.hidden_dim if hed is not None else 1
        W_g = uniform_init(derive_rng(seed, "matcher.global"), (hd, hd))
        self.W_g = Tensor.param(W_g, "global.W") if c.uses_global else None
        self.b_g = Tensor.param(np.zeros(1), "global.b") if c.uses_global else None

    # --------------------------------------------------------------- params

    def own_parameters(self) -> dict[str, Tensor]:
        tensors = [self.embed]
        for p in (self.utt_fwd, self.utt_bwd, self.ctx, self.resp_fwd, self.resp_bwd):
            tensors += p.tensors()
        tensors += [self.M, self.b]
        if self.W_g is not None:
            tensors += [self.W_g, self.b_g]
        return {t.name: t for t in tensors}

    def trainable_parameters(self) -> dict[str, Tensor]:
        params = self.own_parameters()
        if self.config.ecmo_mode == "continue":
            params.update({f"hed.{k}": v for k, v in self.hed.encoder_parameters().items()})
        return params

    def set_ecmo_mode(self, mode: str) -> None:
        """Switch between frozen and continue-train before any training step."""
        if mode not in MODES:
            raise ContractError(f"unknown ecmo mode {mode!r}")
        if mode == self.config.ecmo_mode:
            return
        if self.steps_taken:
            raise ContractError("cannot change ecmo mode after training has started")
        if "none" in (mode, self.config.ecmo_mode):
            raise ContractError("switching to or from mode 'none' changes the architecture; build a new Matcher")
        self.config = MatcherConfig(**{**asdict(self.config), "ecmo_mode": mode})

    # ---------------------------------------------------------------- input

    def _ids(self, sessions, vocab: Vocabulary) -> list:
        return [[vocab.encode(u) for u in s] for s in sessions]

    def _check(self, contexts, responses) -> None:
        if len(contexts) != len(responses):
            raise AlignmentError(f"{len(contexts)} contexts vs {len(responses)} responses")
        for s in contexts:
            if not s or any(len(u) == 0 for u in s):
                raise EmptySequenceError("empty context or context utterance")
        for r in responses:
            if len(r) == 0:
                raise EmptySequenceError("empty response")

    def _limits(self) -> hedlib.HedConfig:
        c = self.config
        return hedlib.HedConfig(c.vocab_size, 1, 1, c.max_session_len, c.max_utterance_len)

    def _hed_features(self, contexts, responses):
        """HED word states and global vectors for a batch, on or off the tape."""
        hed = self.hed
        ctx_ids = self._ids(contexts, self.hed_vocab)
        resp_ids = self._ids([[r] for r in responses], self.hed_vocab)
        if self.config.ecmo_mode == "frozen":
            with T.no_tape():
                enc_c = hedlib.encode_batch(hed, ctx_ids)
                enc_r = hedlib.encode_batch(hed, resp_ids)
            detach = lambda t: Tensor(t.data)
        else:
            enc_c = hedlib.encode_batch(hed, ctx_ids)
            enc_r = hedlib.encode_batch(hed, resp_ids)
            detach = lambda t: t
        # masked recurrence: the final state is the state after each row's last utterance
        return (detach(enc_c.word_states), detach(enc_r.word_states),
                detach(enc_c.context_states[-1]), detach(enc_r.context_states[0]))

    # -------------------------------------------------------------- scoring

    def logits(self, contexts: Sequence, responses: Sequence):
        """Base and global logits (global is ``None`` without it) for token-string pairs."""
        self._check(contexts, responses)
        limits = self._limits()
        cb = SessionBatch(self._ids(contexts, self.vocab), limits)
        rb = SessionBatch(self._ids([[r] for r in responses], self.vocab), limits)
        x_c = T.getitem(self.embed, cb.ids)
        x_r = T.getitem(self.embed, rb.ids)
        glob = None
        if self.hed is not None:
            loc_c, loc_r, g_c, g_r = self._hed_features(contexts, responses)
            if self.config.uses_local:
                x_c = T.concat([x_c, loc_c])
                x_r = T.concat([x_r, loc_r])
            if self.config.uses_global:
                glob = bilinear_logit(g_c, self.W_g, g_r, self.b_g)
        _, pooled = encode_words(self.utt_fwd, self.utt_bwd, x_c, cb.lengths)
        context_vec = run_over_items(self.ctx, pooled, cb.index, cb.counts)[-1]
        _, resp_vec = encode_words(self.resp_fwd, self.resp_bwd, x_r, rb.lengths)
        base = bilinear_logit(context_vec, self.M, resp_vec, self.b)
        return base, glob

    def combined_logit(self, contexts, responses) -> Tensor:
        base, glob = self.logits(contexts, responses)
        return base if glob is None else T.add(base, glob)

    def score(self, contexts, responses, batch_size: int = 100) -> np.ndarray:
        """Combined matching probabilities, computed without recording."""
        out = []
        with T.no_tape():
            for i in range(0, len(contexts), batch_size):
                z = self.combined_logit(contexts[i:i + batch_size], responses[i:i + batch_size])
                out.append(T._sigmoid(z.data))
        return np.concatenate(out) if out else np.zeros(0)

    def loss(self, batch: Sequence[LabeledTriple]) -> Tensor:
        if not batch:
            raise ContractError("matcher loss over an empty batch")
        z = self.combined_logit([t.context for t in batch], [t.response for t in batch])
        return T.bce_with_logits(z, [t.label for t in batch])


def bilinear_logit(left: Tensor, W: Tensor, right: Tensor, bias: Tensor) -> Tensor:
    """Row-wise ``left W right^T + bias`` with a scalar bias."""
    rows = left.shape[0]
    return T.add(T.row_sum(T.mul(T.matmul(left, W), right)),
                 T.getitem(bias, np.zeros(rows, dtype=np.int64)))


# ------------------------------------------------------ single-pair helpers


def base_score(model: Matcher, s, r):
    """``(g, logit)`` of the base scorer for one pair."""
    with T.no_tape():
        base, _ = model.logits([s], [r])
    z = float(base.data[0])
    return float(T._sigmoid(np.array([z]))[0]), z


def augment_inputs(model: Matcher, s, r, ecmo_s: EcmoReps, ecmo_r: EcmoReps):
    """Embedding rows with the HED word states appended.

    Returns one ``[T_i, me + 2h]`` array per context utterance and one for
    the response.
    """
    if len(ecmo_s.local) != len(s) or len(ecmo_r.local) != 1:
        raise AlignmentError("utterance count differs between tokens and ECMo")
    E = model.embed.data

    def join(tokens, local):
        if len(tokens) != len(local):
            raise AlignmentError(f"{len(tokens)} tokens vs {len(local)} ECMo vectors")
        return np.concatenate([E[model.vocab.encode(tokens)], local], axis=1)

    return [join(u, loc) for u, loc in zip(s, ecmo_s.local)], join(r, ecmo_r.local[0])


def global_score(model: Matcher, ecmo_s: EcmoReps | None, ecmo_r: EcmoReps | None):
    """``(g', logit)`` from the HED context state and response state."""
    if ecmo_s is None or ecmo_r is None or model.W_g is None:
        raise ContractError("global score needs ECMo for both sides and a global layer")
    with T.no_tape():
        z = bilinear_logit(Tensor(ecmo_s.last_global[None, :]), model.W_g,
                           Tensor(ecmo_r.global_[0][None, :]), model.b_g)
    z = float(z.data[0])
    return float(T._sigmoid(np.array([z]))[0]), z


def combined_score(model: Matcher, s, r) -> float:
    return float(model.score([s], [r])[0])


def matcher_loss(model: Matcher, batch: Sequence[LabeledTriple]) -> Tensor:
    return model.loss(batch)


# --------------------------------------------------------------- checkpoints


def checkpoint_payload(model: Matcher) -> tuple[dict, dict]:
    config = {"kind": "matcher", "matcher": asdict(model.config), "vocab": model.vocab.to_list()}
    params = {k: v.data for k, v in model.own_parameters().items()}
    if model.hed is not None:
        hed_cfg, hed_params = hedlib.checkpoint_payload(model.hed, model.hed_vocab)
        config["hed"] = hed_cfg["hed"]
        config["hed_vocab"] = hed_cfg["vocab"]
        params.update({f"hed.{k}": v for k, v in hed_params.items()})
    return config, params


def save_matcher(path, model: Matcher) -> None:
    config, params = checkpoint_payload(model)
    checkpoint.save(path, config, params)


def load_matcher(path) -> Matcher:
    config, params = checkpoint.load(path)
    if config.get("kind") != "matcher":
        raise FormatError(f"{path}: not a matcher checkpoint (kind={config.get('kind')!r})")
    mcfg = MatcherConfig(**config["matcher"])
    hed = hed_vocab = None
    if mcfg.ecmo_mode != "none":
        hed, hed_vocab = hedlib.from_checkpoint(
            {"hed": config["hed"], "vocab": config["hed_vocab"]}, params, prefix="hed.")
    model = Matcher(mcfg, Vocabulary(config["vocab"]), hed=hed, hed_vocab=hed_vocab)
    own = model.own_parameters()
    names = {k for k in params if not k.startswith("hed.")}
    if names != set(own):
        raise FormatError(f"{path}: matcher parameter set does not match its config")
    for name, t in own.items():
        if params[name].shape != t.shape:
            raise FormatError(f"{path}: parameter {name} has shape {params[name].shape}, expected {t.shape}")
        t.data[...] = params[name]
    return model
