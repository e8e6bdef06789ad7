"""Corpus ingestion: tokens, vocabularies, sessions, triples, candidate lists.

File formats (UTF-8, one record per line):

* sessions   ``utt_1<TAB>utt_2<TAB>...``, tokens separated by single spaces
* triples    ``label<TAB>utt_1<TAB>...<TAB>utt_n<TAB>response``
* lists      ``list_id<TAB>rel_label<TAB>response``, each list contiguous;
  the context of list ``k`` is line ``k`` of a parallel sessions file
* embeddings ``token v1 ... vd``
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Generic, Iterable, Sequence, TypeVar

import numpy as np

from .errors import ContractError, FormatError
from .rng import derive_rng

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

Tok = TypeVar("Tok")
Utterance = list  # list of tokens (str) or ids (int)
Session = list  # list of Utterance


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    if lowercase:
        text = text.lower()
    return text.split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Token/id mapping with the four reserved ids first."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def lookup(self, tok: str) -> int:
        return self.stoi.get(tok, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def encode_session(self, session: Sequence[Sequence[str]]) -> list[list[int]]:
        return [self.encode(u) for u in session]

    def count_unknown(self, tokens: Iterable[str]) -> int:
        return sum(1 for t in tokens if t not in self.stoi)

    def to_list(self) -> list[str]:
        return list(self.itos[len(RESERVED):])


def build_vocab(corpora: Sequence[Iterable[str]], max_size: int) -> Vocabulary:
    """Union of each corpus's ``max_size`` most frequent tokens.

    Frequency ties break by first occurrence; the union keeps corpus order.
    """
    if max_size <= 0:
        raise ContractError(f"max_size must be positive, got {max_size}")
    if not corpora:
        raise ContractError("build_vocab needs at least one corpus")
    merged: list[str] = []
    seen: set[str] = set()
    any_tokens = False
    for stream in corpora:
        counts: Counter = Counter()
        first: dict[str, int] = {}
        for i, tok in enumerate(stream):
            if tok in RESERVED:
                continue
            counts[tok] += 1
            first.setdefault(tok, i)
        any_tokens = any_tokens or bool(counts)
        ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))[:max_size]
        for tok in ranked:
            if tok not in seen:
                seen.add(tok)
                merged.append(tok)
    if not any_tokens:
        raise ContractError("build_vocab: all corpora are empty")
    return Vocabulary(merged)


def session_tokens(sessions: Iterable[Session]) -> Iterable[str]:
    for s in sessions:
        for u in s:
            yield from u


def truncate(session: Session, max_session_len: int = 10, max_utterance_len: int = 50) -> Session:
    """Keep the last ``max_session_len`` turns and the first tokens of each."""
    return [list(u[:max_utterance_len]) for u in session[-max_session_len:]]


@dataclass
class LabeledTriple(Generic[Tok]):
    label: int
    context: list[list[Tok]]
    response: list[Tok]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class CandidateList(Generic[Tok]):
    context: list[list[Tok]]
    candidates: list[tuple[list[Tok], int]] = field(default_factory=list)

    @property
    def labels(self) -> list[int]:
        return [lab for _, lab in self.candidates]


def sample_negatives(
    positives: Sequence[LabeledTriple],
    pool: Sequence[Sequence],
    ratio: int,
    seed: int,
    conflicts: Callable[[LabeledTriple, Sequence], bool] | None = None,
) -> list[LabeledTriple]:
    """Each positive followed by ``ratio`` negatives drawn from ``pool``.

    Draws are uniform without replacement among pool responses that differ
    from the true response (and, if given, for which ``conflicts`` is false).
    """
    if len(pool) <= 1:
        raise ContractError(f"response pool too small ({len(pool)})")
    rng = derive_rng(seed, "negatives")
    pool = [list(r) for r in pool]
    out: list[LabeledTriple] = []
    for pos in positives:
        eligible = [i for i, r in enumerate(pool)
                    if r != list(pos.response) and not (conflicts and conflicts(pos, r))]
        if len(eligible) < ratio:
            raise ContractError(
                f"pool offers {len(eligible)} eligible negatives, {ratio} requested"
            )
        out.append(pos)
        for i in rng.choice(len(eligible), size=ratio, replace=False):
            out.append(LabeledTriple(0, pos.context, list(pool[eligible[i]])))
    return out


def load_embeddings(path: str | Path, vocab: Vocabulary, dim: int | None = None,
                    seed: int = 0) -> np.ndarray:
    """Embedding table for ``vocab``; rows missing from the file are N(0, 0.1).

    When a token appears more than once the last line wins.
    """
    found: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric vector entry") from None
            if dim is None:
                dim = len(vec)
            if len(vec) != dim or dim == 0:
                raise FormatError(f"{path}:{lineno}: expected {dim} values, got {len(vec)}")
            if parts[0] in vocab:
                found[vocab.lookup(parts[0])] = vec
    if dim is None:
        raise FormatError(f"{path}: empty embedding file and no dimension given")
    table = derive_rng(seed, "embeddings").normal(0.0, 0.1, size=(len(vocab), dim))
    for i, vec in found.items():
        table[i] = vec
    logger.info("embeddings: %d of %d rows from %s", len(found), len(vocab), path)
    return table


# ----------------------------------------------------------------- file I/O


def _split_utts(fields: Sequence[str], where: str) -> list[list[str]]:
    utts = [f.split(" ") if f else [] for f in fields]
    for u in utts:
        if not u or any(t == "" for t in u):
            raise FormatError(f"{where}: empty utterance or token")
    return utts


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line:
                yield lineno, line


def read_sessions(path) -> list[list[list[str]]]:
    return [_split_utts(line.split("\t"), f"{path}:{n}") for n, line in _lines(path)]


def write_sessions(path, sessions: Iterable[Session]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            fh.write("\t".join(" ".join(u) for u in s) + "\n")


def read_triples(path) -> list[LabeledTriple]:
    out = []
    for n, line in _lines(path):
        fields = line.split("\t")
        if len(fields) < 3 or fields[0] not in ("0", "1"):
            raise FormatError(f"{path}:{n}: expected label<TAB>utt...<TAB>response")
        utts = _split_utts(fields[1:], f"{path}:{n}")
        out.append(LabeledTriple(int(fields[0]), utts[:-1], utts[-1]))
    return out


def write_triples(path, triples: Iterable[LabeledTriple]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in triples:
            fields = [str(t.label)] + [" ".join(u) for u in t.context] + [" ".join(t.response)]
            fh.write("\t".join(fields) + "\n")


def read_candidate_lists(lists_path, contexts_path) -> list[CandidateList]:
    contexts = read_sessions(contexts_path)
    lists: list[CandidateList] = []
    current = None
    for n, line in _lines(lists_path):
        fields = line.split("\t")
        if len(fields) != 3 or fields[1] not in ("0", "1"):
            raise FormatError(f"{lists_path}:{n}: expected list_id<TAB>rel_label<TAB>response")
        try:
            list_id = int(fields[0])
        except ValueError:
            raise FormatError(f"{lists_path}:{n}: list_id must be an integer") from None
        if list_id != current:
            if list_id != len(lists):
                raise FormatError(f"{lists_path}:{n}: list {list_id} out of order or not contiguous")
            if list_id >= len(contexts):
                raise FormatError(f"{lists_path}:{n}: no context line for list {list_id}")
            lists.append(CandidateList(contexts[list_id]))
            current = list_id
        response = _split_utts([fields[2]], f"{lists_path}:{n}")[0]
        lists[-1].candidates.append((response, int(fields[1])))
    return lists


def write_candidate_lists(lists_path, contexts_path, lists: Sequence[CandidateList]) -> None:
    write_sessions(contexts_path, [c.context for c in lists])
    with open(lists_path, "w", encoding="utf-8", newline="\n") as fh:
        for k, cl in enumerate(lists):
            for resp, lab in cl.candidates:
                fh.write(f"{k}\t{lab}\t{' '.join(resp)}\n")
