"""Template dialogues for desk-scale experiments.

Every session has four turns built from per-domain phrase templates. An
entity token is mentioned in the first and second turns, never in the third,
and the fourth turn (the true response) echoes it. Non-response turns may carry
one stray filler word.
Ranking the true response therefore requires session-level context.
Distractors are true responses of other sessions that carry a different
entity, so each one echoes a foreign entity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CandidateList, LabeledTriple, sample_negatives
from .errors import ContractError
from .rng import derive_rng

# {E} marks the entity slot
TEMPLATES = {
    "a": {
        "open_entity": ["hi i need {E} today", "hey do you have {E}", "hello where is my {E}",
                        "yo anyone seen {E}", "hi can i get {E} please"],
        "middle_entity": ["i lost my {E} yesterday", "can you find {E} for me",
                          "looking for {E} again", "need {E} asap"],
        "last": ["let me check", "one moment please", "sure thing", "i am looking now",
                 "ok give me a sec", "hang on"],
        "response": ["here is your {E}", "found {E} for you", "{E} is ready", "ok {E} is here",
                     "got {E} now"],
    },
    "b": {
        "open_entity": ["help {E} fails to mount", "question about {E} config",
                        "hi {E} driver error", "my {E} does not boot"],
        "middle_entity": ["the {E} package is broken", "sudo apt install {E} fails",
                          "check {E} in fstab", "log says {E} error"],
        "last": ["let me look", "try the terminal", "run it as root", "check dmesg first",
                 "paste the error"],
        "response": ["reinstall {E} then reboot", "edit {E} config file", "update {E} driver",
                     "mount {E} as root", "{E} works now"],
    },
}
FILLERS = {
    "a": ["really", "so", "just", "like", "lol", "ok", "yeah", "maybe", "well", "cool", "srry"],
    "b": ["sudo", "apt", "kernel", "grub", "usb", "disk", "network", "terminal", "log", "boot"],
}
N_TURNS = 4
NOISE = 0.3  # chance of one stray filler word in a non-response turn


@dataclass(frozen=True)
class SynthSpec:
    n_sessions: int = 200
    n_entities: int = 20
    n_candidates: int = 10
    neg_ratio: int = 1
    domain: str = "a"

    def __post_init__(self):
        if self.n_sessions < 1 or self.n_entities < 2:
            raise ContractError("need at least one session and two entities")
        if self.domain not in TEMPLATES:
            raise ContractError(f"unknown domain {self.domain!r}; choose from {sorted(TEMPLATES)}")
        if self.n_candidates < 2 or self.neg_ratio < 1:
            raise ContractError("need at least two candidates and one negative per positive")


@dataclass
class SynthData:
    sessions: list
    triples: list
    lists: list
    entities: list


def entity_tokens(n: int) -> list[str]:
    return [f"ent{k}" for k in range(n)]


def _session(rng: np.random.Generator, domain: str, entity: str) -> list[list[str]]:
    tpl = TEMPLATES[domain]

    def pick(kind: str) -> list[str]:
        options = tpl[kind]
        return options[rng.integers(len(options))].replace("{E}", entity).split()

    def noisy(words: list[str]) -> list[str]:
        if rng.random() < NOISE:
            fill = FILLERS[domain]
            words.insert(int(rng.integers(len(words) + 1)), fill[rng.integers(len(fill))])
        return words

    first, second = pick("open_entity"), pick("middle_entity")
    return [noisy(first), noisy(second), noisy(pick("last")), pick("response")]


def gen_synth(spec: SynthSpec, seed: int) -> SynthData:
    rng = derive_rng(seed, f"synth.{spec.domain}")
    ents = entity_tokens(spec.n_entities)
    labels = rng.integers(spec.n_entities, size=spec.n_sessions)
    sessions = [_session(rng, spec.domain, ents[e]) for e in labels]
    pool = [s[-1] for s in sessions]
    ent_set = set(ents)

    def shares_entity(pos: LabeledTriple, resp) -> bool:
        return bool(ent_set.intersection(pos.response) & set(resp))

    positives = [LabeledTriple(1, s[:-1], s[-1]) for s in sessions]
    triples = sample_negatives(positives, pool, spec.neg_ratio, seed, conflicts=shares_entity)

    k = spec.n_candidates - 1
    expanded = sample_negatives(positives, pool, k, derive_rng(seed, "synth.lists").integers(2**31),
                                conflicts=shares_entity)
    order_rng = derive_rng(seed, "synth.order")
    lists = []
    for i in range(0, len(expanded), k + 1):
        group = expanded[i:i + k + 1]
        perm = order_rng.permutation(len(group))
        lists.append(CandidateList(group[0].context,
                                   [(group[j].response, group[j].label) for j in perm]))
    return SynthData(sessions, triples, lists, ents)
