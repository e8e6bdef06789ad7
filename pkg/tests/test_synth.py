import numpy as np
import pytest

from ecmo.errors import ContractError
from ecmo.metrics import RankedList, r_at_k
from ecmo.synth import SynthSpec, gen_synth


@pytest.fixture(scope="module")
def data():
    return gen_synth(SynthSpec(n_sessions=200, n_entities=20), seed=0)


def test_shape(data):
    assert len(data.sessions) == 200
    assert all(len(s) == 4 for s in data.sessions)
    assert len(data.triples) == 400 and len(data.lists) == 200
    assert all(len(cl.candidates) == 10 and sum(cl.labels) == 1 for cl in data.lists)


def test_entity_placement(data):
    ents = set(data.entities)
    for s in data.sessions:
        (e,) = ents.intersection(s[-1])
        assert e in s[0] and e in s[1] and e not in s[2]


def test_negatives_carry_foreign_entities(data):
    ents = set(data.entities)
    for cl in data.lists:
        pos = next(r for r, lab in cl.candidates if lab)
        for r, lab in cl.candidates:
            if not lab:
                assert not ents.intersection(r) & ents.intersection(pos)


def test_random_ranking_baseline(data):
    rng = np.random.default_rng(11)
    lists = [RankedList(list(rng.random(10)), cl.labels) for cl in data.lists]
    assert abs(r_at_k(lists, 10, 1) - 0.1) <= 0.03 + 0.02  # 0.03 band plus sampling slack


def test_deterministic_and_domains():
    a = gen_synth(SynthSpec(n_sessions=30), seed=2)
    assert a.sessions == gen_synth(SynthSpec(n_sessions=30), seed=2).sessions
    assert a.sessions != gen_synth(SynthSpec(n_sessions=30), seed=3).sessions
    b = gen_synth(SynthSpec(n_sessions=30, domain="b"), seed=2)
    words_a = {t for s in a.sessions for u in s for t in u}
    words_b = {t for s in b.sessions for u in s for t in u}
    assert len(words_b - words_a) > 10


def test_synthspec_validation():
    with pytest.raises(ContractError):
        SynthSpec(n_sessions=0)
    with pytest.raises(ContractError):
        SynthSpec(domain="z")
