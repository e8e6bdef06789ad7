"""Contextualized word representations read off a trained HED encoder.

``local[i][k]`` is the bidirectional word state of token ``k`` in utterance
``i``; ``global[i]`` is the context-level state after utterance ``i``, shared
by every word of that utterance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .errors import EmptySequenceError
from .hed import HedModel, encode_sessions


@dataclass
class EcmoReps:
    local: list  # per utterance: array [T_i, 2*hidden]
    global_: np.ndarray  # [n, hidden]

    def global_for_word(self, i: int, k: int) -> np.ndarray:
        if not 0 <= k < len(self.local[i]):
            raise IndexError(f"word {k} outside utterance {i}")
        return self.global_[i]

    @property
    def last_global(self) -> np.ndarray:
        return self.global_[-1]


def extract_many(model: HedModel, sessions: Sequence) -> list[EcmoReps]:
    return [EcmoReps(e.word_states, e.context_states) for e in encode_sessions(model, sessions)]


def extract(model: HedModel, session) -> EcmoReps:
    return extract_many(model, [session])[0]


def extract_response(model: HedModel, response) -> EcmoReps:
    """Encode a response as a one-utterance session."""
    if len(response) == 0:
        raise EmptySequenceError("empty response")
    return extract(model, [response])


def _fmt(vec) -> str:
    return " ".join(repr(float(v)) for v in vec)


def write_reps(fh: TextIO, session_index: int, tokens, reps: EcmoReps, level: str) -> None:
    """Text dump: ``sess utt word token v...`` (local), ``sess utt v...`` (global)."""
    if level in ("local", "both"):
        for i, (utt, states) in enumerate(zip(tokens, reps.local)):
            for k, (tok, vec) in enumerate(zip(utt, states)):
                fh.write(f"{session_index} {i} {k} {tok} {_fmt(vec)}\n")
    if level in ("global", "both"):
        for i, vec in enumerate(reps.global_):
            fh.write(f"{session_index} {i} {_fmt(vec)}\n")
