import os

import pytest

from ecmo.checkpoint import load
from ecmo.cli import KNOBS, build_parser, main, read_config
from ecmo.errors import FormatError

TINY = ["--embed-dim", "6", "--hidden-dim", "6", "--epochs", "1"]
TINY_M = ["--match-embed-dim", "5", "--match-hidden-dim", "5", "--epochs", "1"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen-synth", "--out", d / "data", "--sessions", 20, "--seed", 1) == 0
    assert run("pretrain-hed", "--corpus", d / "data/sessions.txt", "--val", d / "data/contexts.txt",
               "--out-ckpt", d / "hed.ckpt", "--log", d / "hed.log", *TINY) == 0
    return d


def lines(path):
    return path.read_text().splitlines()


def test_gen_synth_files(work):
    data = work / "data"
    assert len(lines(data / "sessions.txt")) == 20
    assert len(lines(data / "contexts.txt")) == 20
    assert len(lines(data / "triples.txt")) == 40
    assert len(lines(data / "lists.txt")) == 200


def test_gen_synth_reproducible(tmp_path, work):
    run("gen-synth", "--out", tmp_path, "--sessions", 20, "--seed", 1)
    for name in ("sessions.txt", "triples.txt", "lists.txt", "contexts.txt"):
        assert (tmp_path / name).read_bytes() == (work / "data" / name).read_bytes()


def test_usage_errors_are_one_line(tmp_path, capsys):
    assert run("gen-synth", "--out", tmp_path, "--sessions", 0) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error[usage]:")
    assert run("pretrain-hed", "--out-ckpt", tmp_path / "x.ckpt") == 2
    assert "--corpus" in capsys.readouterr().err
    assert run("bogus") == 2


def test_io_error(tmp_path, capsys):
    assert run("pretrain-hed", "--corpus", tmp_path / "missing.txt", "--out-ckpt", tmp_path / "x") == 1
    assert capsys.readouterr().err.startswith("error[io]:")


def test_log_format(work):
    rows = [l.split("\t") for l in lines(work / "hed.log")]
    assert [r[:3] for r in rows] == [["0", "val", "perplexity"], ["1", "train", "perplexity"],
                                     ["1", "val", "perplexity"]]
    assert all(float(r[3]) > 1 for r in rows)


def test_pretrain_reproducible(tmp_path, work):
    run("pretrain-hed", "--corpus", work / "data/sessions.txt", "--val", work / "data/contexts.txt",
        "--out-ckpt", tmp_path / "hed.ckpt", "--log", tmp_path / "hed.log", *TINY)
    assert (tmp_path / "hed.ckpt").read_bytes() == (work / "hed.ckpt").read_bytes()
    assert (tmp_path / "hed.log").read_bytes() == (work / "hed.log").read_bytes()


def test_zero_epoch_finetune_is_identity(tmp_path, work):
    assert run("finetune-hed", "--corpus", work / "data/sessions.txt", "--init-ckpt", work / "hed.ckpt",
               "--out-ckpt", tmp_path / "ft.ckpt", "--epochs", 0) == 0
    assert (tmp_path / "ft.ckpt").read_bytes() == (work / "hed.ckpt").read_bytes()


def test_finetune_config_mismatch(tmp_path, work, capsys):
    assert run("finetune-hed", "--corpus", work / "data/sessions.txt", "--init-ckpt", work / "hed.ckpt",
               "--out-ckpt", tmp_path / "ft.ckpt", "--hidden-dim", 7) == 1
    assert capsys.readouterr().err.startswith("error[compatibility]:")
    assert run("finetune-hed", "--corpus", work / "data/sessions.txt", "--out-ckpt", tmp_path / "x") == 2


def test_config_file_precedence(tmp_path, work):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny\nembed_dim = 6\nhidden_dim = 4\nepochs = 0\n")
    out = tmp_path / "a.ckpt"
    assert run("pretrain-hed", "--corpus", work / "data/sessions.txt", "--config", cfg,
               "--out-ckpt", out, "--hidden-dim", 3) == 0
    config, params = load(out)
    assert config["hed"]["embed_dim"] == 6 and config["hed"]["hidden_dim"] == 3
    cfg.write_text("hidden_size = 4\n")
    assert run("pretrain-hed", "--corpus", work / "data/sessions.txt", "--config", cfg,
               "--out-ckpt", out) == 2


def test_read_config_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("lr = fast\n")
    with pytest.raises(FormatError, match=":1:"):
        read_config(p)
    p.write_text("epochs 3\n")
    with pytest.raises(FormatError):
        read_config(p)


def test_extract_ecmo(tmp_path, work):
    sessions = tmp_path / "s.txt"
    sessions.write_text("hi there\tneverseenword ok\tfine\n")
    out = tmp_path / "g.txt"
    assert run("extract-ecmo", "--ckpt", work / "hed.ckpt", "--input", sessions, "--level", "global",
               "--out", out) == 0
    rows = lines(out)
    assert len(rows) == 3 and all(len(r.split()) == 2 + 6 for r in rows)
    assert run("extract-ecmo", "--ckpt", work / "hed.ckpt", "--input", sessions, "--level", "local",
               "--out", tmp_path / "l.txt") == 0
    rows = lines(tmp_path / "l.txt")
    assert len(rows) == 5 and rows[2].split()[:4] == ["0", "1", "0", "neverseenword"]
    assert run("extract-ecmo", "--ckpt", work / "hed.ckpt", "--input", sessions, "--out", tmp_path / "b.txt") == 0
    assert (tmp_path / "b.txt").read_bytes() == (tmp_path / "l.txt").read_bytes()
    assert (tmp_path / "b.txt.global").read_bytes() == out.read_bytes()


def test_extract_counts_tokens_on_contexts(tmp_path, work):
    out = tmp_path / "l.txt"
    run("extract-ecmo", "--ckpt", work / "hed.ckpt", "--input", work / "data/contexts.txt",
        "--level", "local", "--out", out)
    total = sum(len(u.split()) for line in lines(work / "data/contexts.txt") for u in line.split("\t"))
    assert len(lines(out)) == total
    run("extract-ecmo", "--ckpt", work / "hed.ckpt", "--input", work / "data/contexts.txt",
        "--level", "local", "--out", tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == out.read_bytes()


def test_train_matcher_modes(tmp_path, work, capsys):
    triples = work / "data/triples.txt"
    assert run("train-matcher", "--triples", triples, "--ecmo", "frozen", "--out-ckpt", tmp_path / "x") == 2
    assert "error[usage]" in capsys.readouterr().err
    assert run("train-matcher", "--triples", triples, "--out-ckpt", tmp_path / "none.ckpt", *TINY_M) == 0
    assert load(tmp_path / "none.ckpt")[0]["matcher"]["ecmo_mode"] == "none"

    hed_bytes = (work / "hed.ckpt").read_bytes()
    stamp = os.stat(work / "hed.ckpt").st_mtime_ns
    assert run("train-matcher", "--triples", triples, "--ecmo", "frozen", "--hed-ckpt", work / "hed.ckpt",
               "--out-ckpt", tmp_path / "frozen.ckpt", *TINY_M) == 0
    assert (work / "hed.ckpt").read_bytes() == hed_bytes
    assert os.stat(work / "hed.ckpt").st_mtime_ns == stamp

    assert run("train-matcher", "--triples", triples, "--ecmo", "continue", "--hed-ckpt", work / "hed.ckpt",
               "--out-ckpt", tmp_path / "cont.ckpt", *TINY_M) == 0
    cfg, params = load(tmp_path / "cont.ckpt")
    _, hed_params = load(work / "hed.ckpt")
    assert cfg["matcher"]["ecmo_mode"] == "continue"
    assert any((params["hed." + k] != v).any() for k, v in hed_params.items())
    _, frozen_params = load(tmp_path / "frozen.ckpt")
    assert all((frozen_params["hed." + k] == v).all() for k, v in hed_params.items())

    assert run("train-matcher", "--triples", triples, "--ecmo", "frozen", "--hed-ckpt", work / "hed.ckpt",
               "--out-ckpt", tmp_path / "frozen2.ckpt", *TINY_M) == 0
    assert (tmp_path / "frozen2.ckpt").read_bytes() == (tmp_path / "frozen.ckpt").read_bytes()

    # the HED inside a continue-mode checkpoint can be dumped directly
    sess = tmp_path / "s.txt"
    sess.write_text("hi\tthere\n")
    assert run("extract-ecmo", "--ckpt", tmp_path / "cont.ckpt", "--input", sess, "--out", tmp_path / "r") == 0


def test_eval_matcher(tmp_path, work, capsys):
    data = work / "data"
    common = ["--lists", data / "lists.txt", "--contexts", data / "contexts.txt"]
    assert run("eval-matcher", *common, "--score-mode", "label") == 0
    report = dict(l.split("\t") for l in capsys.readouterr().out.splitlines() if not l.startswith("summary"))
    assert set(report) == {"R_2@1", "R_10@1", "R_10@2", "R_10@5", "MAP", "MRR", "P@1"}
    assert all(float(v) == 1.0 for v in report.values())

    assert run("eval-matcher", *common, "--score-mode", "constant", "--metrics", "r@k",
               "--out", tmp_path / "c.txt") == 0
    got = dict(l.split("\t") for l in lines(tmp_path / "c.txt") if not l.startswith("summary"))
    firsts, current = [], None
    for row in lines(data / "lists.txt"):
        list_id, label, _ = row.split("\t")
        if list_id != current:
            current = list_id
            firsts.append(label == "1")
    assert float(got["R_10@1"]) == pytest.approx(sum(firsts) / len(firsts), abs=1e-6)

    run("train-matcher", "--triples", data / "triples.txt", "--out-ckpt", tmp_path / "m.ckpt", *TINY_M)
    assert run("eval-matcher", *common, "--ckpt", tmp_path / "m.ckpt", "--out", tmp_path / "r1.txt") == 0
    assert run("eval-matcher", *common, "--ckpt", tmp_path / "m.ckpt", "--out", tmp_path / "r2.txt") == 0
    assert (tmp_path / "r1.txt").read_bytes() == (tmp_path / "r2.txt").read_bytes()
    assert run("eval-matcher", *common) == 2
    assert run("eval-matcher", *common, "--score-mode", "label", "--metrics", "ndcg") == 2


def test_eval_malformed_lists(tmp_path, work, capsys):
    bad = tmp_path / "l.txt"
    bad.write_text("0\t1\tok\n0\tmaybe\tno\n")
    assert run("eval-matcher", "--lists", bad, "--contexts", work / "data/contexts.txt",
               "--score-mode", "label") == 1
    err = capsys.readouterr().err
    assert err.startswith("error[format]:") and ":2:" in err


def test_help_lists_flags_with_defaults():
    parser = build_parser()
    subs = parser._subparsers._group_actions[0].choices
    assert set(subs) == {"gen-synth", "pretrain-hed", "finetune-hed", "extract-ecmo",
                         "train-matcher", "eval-matcher"}
    for name, sub in subs.items():
        text = " ".join(sub.format_help().split())
        for action in sub._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            dest = action.dest
            if dest in KNOBS:
                assert f"(default: {KNOBS[dest][1]})" in text
        assert ") (default:" not in text
    hed_help = " ".join(subs["pretrain-hed"].format_help().split())
    for value in ("hidden size (default: 300)", "(default: 40)", "(default: 0.001)", "(default: 10)"):
        assert value in hed_help
