"""Ranking metrics for response selection.

Candidates are ranked by a stable descending sort on score, so ties keep
their original order. Lists without any positive are skipped by MAP, MRR and
P@1 and rejected by R_n@k.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ProtocolError


@dataclass
class RankedList:
    scores: list
    labels: list

    def __post_init__(self):
        if len(self.scores) != len(self.labels):
            raise ContractError(f"{len(self.scores)} scores vs {len(self.labels)} labels")
        if not self.labels:
            raise ContractError("empty candidate list")

    def ranked_labels(self) -> np.ndarray:
        order = np.argsort(-np.asarray(self.scores, dtype=np.float64), kind="stable")
        return np.asarray(self.labels)[order]


def r_at_k(lists: Sequence[RankedList], n: int, k: int) -> float:
    hits = 0
    for lst in lists:
        if len(lst.labels) != n:
            raise ProtocolError(f"R_{n}@{k} needs {n} candidates per list, got {len(lst.labels)}")
        if sum(lst.labels) != 1:
            raise ProtocolError(f"R_{n}@{k} needs exactly one positive per list")
        hits += int(lst.ranked_labels()[:k].any())
    if not lists:
        raise ContractError("no lists to evaluate")
    return hits / len(lists)


def _with_positive(lists: Iterable[RankedList]) -> list[np.ndarray]:
    ranked = [lst.ranked_labels() for lst in lists if any(lst.labels)]
    if not ranked:
        raise ContractError("no list contains a positive")
    return ranked


def _ap_exact(ranked: np.ndarray) -> Fraction:
    ranks = np.flatnonzero(ranked) + 1
    return sum((Fraction(i, int(r)) for i, r in enumerate(ranks, 1)), Fraction(0)) / len(ranks)


def average_precision(ranked: np.ndarray) -> float:
    return float(_ap_exact(ranked))


# rational arithmetic, rounded once, so hand-computed values match exactly
def mean_average_precision(lists: Sequence[RankedList]) -> float:
    ranked = _with_positive(lists)
    return float(sum((_ap_exact(r) for r in ranked), Fraction(0)) / len(ranked))


def mrr(lists: Sequence[RankedList]) -> float:
    ranked = _with_positive(lists)
    return float(sum((Fraction(1, int(np.flatnonzero(r)[0]) + 1) for r in ranked), Fraction(0)) / len(ranked))


def p_at_1(lists: Sequence[RankedList]) -> float:
    return float(np.mean([float(r[0]) for r in _with_positive(lists)]))


def subsample(lst: RankedList, n: int) -> RankedList:
    """The positive plus the first ``n - 1`` negatives, in original order."""
    keep, negs = [], 0
    for i, lab in enumerate(lst.labels):
        if lab:
            keep.append(i)
        elif negs < n - 1:
            keep.append(i)
            negs += 1
    return RankedList([lst.scores[i] for i in keep], [lst.labels[i] for i in keep])


def report(lists: Sequence[RankedList], which: Sequence[str] = ("r@k", "map", "mrr", "p@1")) -> dict:
    """Metric name to value, using the column set of the response-selection tables."""
    out: dict[str, float] = {}
    if "r@k" in which:
        n = len(lists[0].labels)
        single = all(len(l.labels) == n and sum(l.labels) == 1 for l in lists)
        if single:
            if n > 2:
                out["R_2@1"] = r_at_k([subsample(l, 2) for l in lists], 2, 1)
            for k in (1, 2, 5):
                if k < n:
                    out[f"R_{n}@{k}"] = r_at_k(lists, n, k)
    if "map" in which:
        out["MAP"] = mean_average_precision(lists)
    if "mrr" in which:
        out["MRR"] = mrr(lists)
    if "p@1" in which:
        out["P@1"] = p_at_1(lists)
    return out


def format_report(values: dict) -> str:
    lines = [f"{k}\t{v:.6f}" for k, v in values.items()]
    lines.append("summary\t" + json.dumps(values, sort_keys=True))
    return "\n".join(lines) + "\n"


map = mean_average_precision  # noqa: A001  (name used by the metric suite)
