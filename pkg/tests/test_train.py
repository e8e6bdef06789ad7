import numpy as np
import pytest

from ecmo import tensor as T
from ecmo.data import LabeledTriple, build_vocab, session_tokens
from ecmo.errors import ContractError
from ecmo.hed import HedConfig, HedModel, batch_nll, perplexity
from ecmo.matcher import Matcher, MatcherConfig
from ecmo.synth import SynthSpec, gen_synth
from ecmo.train import finetune_hed, fit_batch, flatten_params, train_hed, train_matcher


@pytest.fixture(scope="module")
def corpus():
    data = gen_synth(SynthSpec(n_sessions=60, n_entities=5), seed=1)
    vocab = build_vocab([list(session_tokens(data.sessions))], 500)
    return vocab, [vocab.encode_session(s) for s in data.sessions], data


def small_hed(vocab, seed=0):
    return HedModel(HedConfig(len(vocab), 8, 8), seed=seed)


def test_zero_epochs_leave_model(corpus):
    vocab, ids, _ = corpus
    m = small_hed(vocab)
    before = flatten_params(m.parameters()).copy()
    assert train_hed(m, ids, 0) == []
    assert np.array_equal(flatten_params(m.parameters()), before)


def test_rejects_bad_corpora(corpus):
    vocab, ids, _ = corpus
    with pytest.raises(ContractError):
        train_hed(small_hed(vocab), [], 1)
    with pytest.raises(ContractError):
        train_hed(small_hed(vocab), [[[4, 5]]], 1)


def test_one_epoch_beats_uniform(corpus):
    vocab, ids, _ = corpus
    m = small_hed(vocab)
    hist = train_hed(m, ids[:40], 1, seed=0, val=ids[40:], lr=3e-3)
    val = [v for e, split, _, v in hist if split == "val"]
    assert val[0] == pytest.approx(len(vocab), rel=0.1)
    assert val[-1] < val[0]


def test_training_is_deterministic(corpus):
    vocab, ids, _ = corpus

    def run():
        m = small_hed(vocab, seed=2)
        hist = train_hed(m, ids, 2, batch_size=16, seed=9)
        return flatten_params(m.parameters()), hist

    (a, ha), (b, hb) = run(), run()
    assert np.array_equal(a, b) and ha == hb


def test_epoch_loss_falls_from_epoch_1_to_3(corpus):
    vocab, ids, _ = corpus
    falls = 0
    for seed in range(10):
        m = small_hed(vocab, seed=seed)
        hist = train_hed(m, ids, 3, batch_size=20, seed=seed)
        train = [v for _, split, _, v in hist if split == "train"]
        falls += train[2] < train[0]
    assert falls >= 10 * 0.95


def test_partial_batch_kept_and_shuffle_per_epoch():
    from ecmo.train import _batches
    one = _batches(60, 25, seed=3, stream="hed.shuffle", epoch=1)
    assert [len(b) for b in one] == [25, 25, 10]
    assert sorted(np.concatenate(one)) == list(range(60))
    two = _batches(60, 25, seed=3, stream="hed.shuffle", epoch=2)
    assert not np.array_equal(np.concatenate(one), np.concatenate(two))


def test_finetune_lowers_in_domain_perplexity():
    a = gen_synth(SynthSpec(n_sessions=80, n_entities=5, domain="a"), seed=0)
    b = gen_synth(SynthSpec(n_sessions=80, n_entities=5, domain="b"), seed=0)
    vocab = build_vocab([list(session_tokens(a.sessions)), list(session_tokens(b.sessions))], 500)
    ea = [vocab.encode_session(s) for s in a.sessions]
    eb = [vocab.encode_session(s) for s in b.sessions]
    m = small_hed(vocab)
    train_hed(m, ea, 2, lr=3e-3)
    before = perplexity(m, eb[60:])
    snapshot = flatten_params(m.parameters()).copy()
    finetune_hed(m, eb[:60], 0)
    assert np.array_equal(flatten_params(m.parameters()), snapshot)
    finetune_hed(m, eb[:60], 2, lr=3e-3)
    assert perplexity(m, eb[60:]) < before


def test_hed_single_batch_overfit(corpus):
    vocab, ids, _ = corpus
    m = small_hed(vocab)
    batch = ids[:4]
    n = batch_nll(m, batch)[1]
    losses = fit_batch(m.parameters(), lambda: T.scale(batch_nll(m, batch)[0], 1.0 / n), 200, lr=1e-2)
    assert losses[-1] <= 0.1 * losses[0]


def test_matcher_all_positive_labels(corpus):
    vocab, _, data = corpus
    triples = [LabeledTriple(1, t.context, t.response) for t in data.triples[:40]]
    m = Matcher(MatcherConfig(len(vocab), 6, 6), vocab, seed=0)
    hist = train_matcher(m, triples, 5, batch_size=10, lr=1e-2)
    assert m.steps_taken == 20 and len(hist) == 5
    assert m.score([t.context for t in triples], [t.response for t in triples]).mean() > 0.9


def test_matcher_rejects_empty_triples(corpus):
    vocab, _, data = corpus
    m = Matcher(MatcherConfig(len(vocab), 6, 6), vocab)
    with pytest.raises(ContractError):
        train_matcher(m, [], 1)
