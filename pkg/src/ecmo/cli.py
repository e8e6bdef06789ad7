"""Command-line entry point: ``ecmo <subcommand> [flags]``.

Knob values resolve as built-in defaults < ``--config`` file < flags. Errors
print one line ``error[<category>]: <message>`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import checkpoint, hed as hedlib, matcher as matchlib
from .data import (build_vocab, load_embeddings, read_candidate_lists, read_sessions,
                   read_triples, session_tokens, truncate, write_candidate_lists, write_sessions,
                   write_triples)
from .errors import CompatibilityError, ContractError, EcmoError, FormatError
from .hed import HedConfig, HedModel
from .matcher import LEVELS, MODES, Matcher, MatcherConfig
from .metrics import RankedList, format_report, report
from .representations import extract_many, write_reps
from .synth import SynthSpec, gen_synth
from .train import finetune_hed, train_hed, train_matcher

logger = logging.getLogger("ecmo")

EXIT_USAGE = 2
EXIT_FAILURE = 1

# name -> (type, default); these are the keys a config file may set
KNOBS = {
    "embed_dim": (int, 300),
    "hidden_dim": (int, 300),
    "max_session_len": (int, 10),
    "max_utterance_len": (int, 50),
    "vocab_max": (int, 20000),
    "match_embed_dim": (int, 200),
    "match_hidden_dim": (int, 200),
    "ecmo_levels": (str, "both"),
    "batch_size": (int, 40),
    "lr": (float, 1e-3),
    "clip": (float, 5.0),
    "epochs": (int, 10),
    "seed": (int, 0),
    "embeddings": (str, None),
}
HED_SHAPE_KEYS = ("embed_dim", "hidden_dim", "max_session_len", "max_utterance_len")


class UsageError(EcmoError):
    category = "usage"


class _Help(argparse.HelpFormatter):
    """Append real defaults only; knob flags carry theirs in the help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "(default" not in text and action.default not in (None, argparse.SUPPRESS) \
                and action.option_strings and action.nargs != 0:
            text += " (default: %(default)s)"
        return text


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single line instead of argparse's usage dump
        raise UsageError(f"{self.prog}: {message}")


def _knob(parser: argparse.ArgumentParser, name: str, help_text: str) -> None:
    typ, default = KNOBS[name]
    parser.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                        help=f"{help_text} (default: {default})")


def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            key = key.replace("-", "_")
            if not sep or not key:
                raise FormatError(f"{path}:{lineno}: expected key = value")
            if key not in KNOBS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            typ = KNOBS[key][0]
            try:
                values[key] = typ(value)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return values


def resolve(args: argparse.Namespace, keys) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    merged = {k: KNOBS[k][1] for k in keys}
    explicit = {}
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            if k in merged:
                merged[k] = v
                explicit[k] = v
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
            explicit[k] = v
    merged["_explicit"] = explicit
    return merged


def _log_writer(path):
    if path is None:
        return None, None
    fh = open(path, "w", encoding="utf-8", newline="\n")

    def log(epoch, split, metric, value):
        fh.write(f"{epoch}\t{split}\t{metric}\t{value!r}\n")
        fh.flush()

    return fh, log


# ----------------------------------------------------------------- commands


def cmd_gen_synth(args) -> None:
    if args.sessions < 1:
        raise UsageError("--sessions must be at least 1")
    data = gen_synth(SynthSpec(n_sessions=args.sessions, n_entities=args.entities,
                               n_candidates=args.candidates, neg_ratio=args.neg_ratio,
                               domain=args.domain), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sessions(out / "sessions.txt", data.sessions)
    write_triples(out / "triples.txt", data.triples)
    write_candidate_lists(out / "lists.txt", out / "contexts.txt", data.lists)
    logger.info("wrote %d sessions to %s", len(data.sessions), out)


def _corpus_ids(vocab, sessions, cfg):
    return [vocab.encode_session(truncate(s, cfg["max_session_len"], cfg["max_utterance_len"]))
            for s in sessions]


def _run_hed(args, finetune: bool) -> None:
    cfg = resolve(args, KNOBS)
    corpus = read_sessions(args.corpus)
    if args.init_ckpt:
        model, vocab = hedlib.load_hed(args.init_ckpt)
        have = asdict(model.config)
        for k in HED_SHAPE_KEYS:
            if k in cfg["_explicit"] and cfg["_explicit"][k] != have[k]:
                raise CompatibilityError(f"{k}={cfg['_explicit'][k]} conflicts with checkpoint value {have[k]}")
            cfg[k] = have[k]
        if args.vocab_corpus:
            raise CompatibilityError("--vocab-corpus cannot change the vocabulary of --init-ckpt")
    else:
        if finetune:
            raise UsageError("finetune-hed requires --init-ckpt")
        corpora = [list(session_tokens(corpus))]
        corpora += [list(session_tokens(read_sessions(p))) for p in args.vocab_corpus or []]
        vocab = build_vocab(corpora, cfg["vocab_max"])
        hed_cfg = HedConfig(len(vocab), cfg["embed_dim"], cfg["hidden_dim"],
                            cfg["max_session_len"], cfg["max_utterance_len"])
        emb = None
        if cfg["embeddings"]:
            emb = load_embeddings(cfg["embeddings"], vocab, dim=cfg["embed_dim"], seed=cfg["seed"])
        model = HedModel(hed_cfg, seed=cfg["seed"], embeddings=emb)
    ids = _corpus_ids(vocab, corpus, cfg)
    unk = sum(vocab.count_unknown(u) for s in corpus for u in s)
    if unk:
        logger.warning("%d corpus tokens mapped to <unk>", unk)
    val = _corpus_ids(vocab, read_sessions(args.val), cfg) if args.val else None
    fh, log = _log_writer(args.log)
    try:
        run = finetune_hed if finetune else train_hed
        run(model, ids, cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
            lr=cfg["lr"], clip=cfg["clip"], val=val, log=log)
    finally:
        if fh:
            fh.close()
    hedlib.save_hed(args.out_ckpt, model, vocab)


def cmd_pretrain_hed(args) -> None:
    _run_hed(args, finetune=False)


def cmd_finetune_hed(args) -> None:
    _run_hed(args, finetune=True)


def _load_any_hed(path):
    """A HED checkpoint, or the HED embedded in a matcher checkpoint."""
    config, params = checkpoint.load(path)
    kind = config.get("kind")
    if kind == "hed":
        return hedlib.from_checkpoint(config, params)
    if kind == "matcher" and "hed" in config:
        return hedlib.from_checkpoint({"hed": config["hed"], "vocab": config["hed_vocab"]},
                                      params, prefix="hed.")
    raise FormatError(f"{path}: no HED parameters in checkpoint (kind={kind!r})")


def cmd_extract_ecmo(args) -> None:
    model, vocab = _load_any_hed(args.ckpt)
    sessions = [truncate(s, model.config.max_session_len, model.config.max_utterance_len)
                for s in read_sessions(args.input)]
    unk = sum(vocab.count_unknown(u) for s in sessions for u in s)
    if unk:
        logger.warning("%d tokens outside the HED vocabulary mapped to <unk>", unk)
    reps = extract_many(model, [vocab.encode_session(s) for s in sessions]) if sessions else []
    targets = {"local": [args.out], "global": [args.out], "both": [args.out, args.out + ".global"]}
    levels = ["local", "global"] if args.level == "both" else [args.level]
    for level, path in zip(levels, targets[args.level]):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, (s, r) in enumerate(zip(sessions, reps)):
                write_reps(fh, i, s, r, level)


def cmd_train_matcher(args) -> None:
    if args.ecmo != "none" and not args.hed_ckpt:
        raise UsageError(f"--ecmo {args.ecmo} requires --hed-ckpt")
    cfg = resolve(args, KNOBS)
    if cfg["ecmo_levels"] not in LEVELS:
        raise UsageError(f"ecmo_levels must be one of {', '.join(LEVELS)}")
    triples = read_triples(args.triples)
    if not triples:
        raise ContractError(f"{args.triples}: no training triples")
    texts = [list(session_tokens(t.context)) + list(t.response) for t in triples]
    vocab = build_vocab([[tok for toks in texts for tok in toks]], cfg["vocab_max"])
    hed = hed_vocab = None
    if args.ecmo != "none":
        # read once; in frozen mode the file is never opened for writing
        hed, hed_vocab = _load_any_hed(args.hed_ckpt)
    mcfg = MatcherConfig(len(vocab), cfg["match_embed_dim"], cfg["match_hidden_dim"],
                         ecmo_mode=args.ecmo, ecmo_levels=cfg["ecmo_levels"],
                         max_session_len=cfg["max_session_len"],
                         max_utterance_len=cfg["max_utterance_len"])
    model = Matcher(mcfg, vocab, seed=cfg["seed"], hed=hed, hed_vocab=hed_vocab)
    if cfg["embeddings"]:
        model.embed.data[...] = load_embeddings(cfg["embeddings"], vocab, dim=cfg["match_embed_dim"],
                                                seed=cfg["seed"])
    fh, log = _log_writer(args.log)
    try:
        train_matcher(model, triples, cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
                      lr=cfg["lr"], clip=cfg["clip"], log=log)
    finally:
        if fh:
            fh.close()
    matchlib.save_matcher(args.out_ckpt, model)


def score_lists(model: Matcher | None, lists, mode: str = "model") -> list[RankedList]:
    out = []
    for cl in lists:
        labels = cl.labels
        if mode == "label":
            scores = [float(x) for x in labels]
        elif mode == "constant":
            scores = [0.0] * len(labels)
        else:
            resp = [r for r, _ in cl.candidates]
            scores = [float(x) for x in model.score([cl.context] * len(resp), resp)]
        out.append(RankedList(scores, list(labels)))
    return out


METRIC_NAMES = ("r@k", "map", "mrr", "p@1")


def cmd_eval_matcher(args) -> None:
    which = [m.strip().lower() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in which if m not in METRIC_NAMES]
    if bad or not which:
        raise UsageError(f"--metrics takes a comma list from {','.join(METRIC_NAMES)}; got {args.metrics!r}")
    lists = read_candidate_lists(args.lists, args.contexts)
    if not lists:
        raise ContractError(f"{args.lists}: no candidate lists")
    model = matchlib.load_matcher(args.ckpt) if args.score_mode == "model" else None
    if model is not None:
        lists = [type(cl)(truncate(cl.context, model.config.max_session_len,
                                   model.config.max_utterance_len), cl.candidates) for cl in lists]
    text = format_report(report(score_lists(model, lists, args.score_mode), which))
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ecmo", description="Conversation-model representations for response selection.",
                formatter_class=_Help)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = _Help

    g = sub.add_parser("gen-synth", help="write a synthetic corpus", formatter_class=fmt)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--sessions", type=int, default=200, help="number of sessions")
    g.add_argument("--entities", type=int, default=20, help="number of distinct entity tokens")
    g.add_argument("--seed", type=int, default=0, help="root seed")
    g.add_argument("--domain", choices=["a", "b"], default="a", help="phrase template set")
    g.add_argument("--candidates", type=int, default=10, help="candidates per evaluation list")
    g.add_argument("--neg-ratio", type=int, default=1, help="negatives per positive triple")
    g.set_defaults(func=cmd_gen_synth)

    for name, func, text in (("pretrain-hed", cmd_pretrain_hed, "train a HED model"),
                             ("finetune-hed", cmd_finetune_hed, "continue training a HED checkpoint")):
        h = sub.add_parser(name, help=text, formatter_class=fmt)
        h.add_argument("--corpus", required=True, help="session file to train on")
        h.add_argument("--val", help="validation session file")
        h.add_argument("--config", help="key = value file")
        h.add_argument("--init-ckpt", help="start from this HED checkpoint")
        h.add_argument("--out-ckpt", required=True, help="checkpoint to write")
        h.add_argument("--vocab-corpus", action="append",
                       help="extra session file whose tokens join the vocabulary (repeatable)")
        h.add_argument("--log", help="write epoch<TAB>split<TAB>metric<TAB>value lines here")
        _knob(h, "epochs", "training epochs")
        _knob(h, "seed", "root seed")
        _knob(h, "embed_dim", "word embedding size")
        _knob(h, "hidden_dim", "GRU hidden size")
        _knob(h, "max_session_len", "keep at most this many trailing utterances")
        _knob(h, "max_utterance_len", "keep at most this many leading tokens per utterance")
        _knob(h, "vocab_max", "most frequent tokens kept per corpus")
        _knob(h, "batch_size", "sessions per step")
        _knob(h, "lr", "Adam learning rate")
        _knob(h, "clip", "global gradient-norm clip")
        _knob(h, "embeddings", "pretrained word-vector file")
        h.set_defaults(func=func)

    x = sub.add_parser("extract-ecmo", help="dump local/global representations", formatter_class=fmt)
    x.add_argument("--ckpt", required=True, help="HED (or continue-mode matcher) checkpoint")
    x.add_argument("--input", required=True, help="session file")
    x.add_argument("--level", choices=["local", "global", "both"], default="both",
                   help="which representation; 'both' writes global vectors to OUT.global")
    x.add_argument("--out", required=True, help="output text file")
    x.set_defaults(func=cmd_extract_ecmo)

    m = sub.add_parser("train-matcher", help="train the response matcher", formatter_class=fmt)
    m.add_argument("--triples", required=True, help="labeled triple file")
    m.add_argument("--ecmo", choices=MODES, default="none", help="how HED features are used")
    m.add_argument("--hed-ckpt", help="HED checkpoint (required unless --ecmo none)")
    m.add_argument("--out-ckpt", required=True, help="checkpoint to write")
    m.add_argument("--config", help="key = value file")
    m.add_argument("--log", help="write epoch<TAB>split<TAB>metric<TAB>value lines here")
    _knob(m, "epochs", "training epochs")
    _knob(m, "seed", "root seed")
    _knob(m, "ecmo_levels", "ECMo features used: both, local or global")
    _knob(m, "match_embed_dim", "matcher word embedding size")
    _knob(m, "match_hidden_dim", "matcher GRU hidden size")
    _knob(m, "max_session_len", "keep at most this many trailing context utterances")
    _knob(m, "max_utterance_len", "keep at most this many leading tokens per utterance")
    _knob(m, "vocab_max", "most frequent tokens kept")
    _knob(m, "batch_size", "triples per step")
    _knob(m, "lr", "Adam learning rate")
    _knob(m, "clip", "global gradient-norm clip")
    _knob(m, "embeddings", "pretrained word-vector file for the matcher table")
    m.set_defaults(func=cmd_train_matcher)

    e = sub.add_parser("eval-matcher", help="score candidate lists and report metrics", formatter_class=fmt)
    e.add_argument("--ckpt", help="matcher checkpoint (required for --score-mode model)")
    e.add_argument("--lists", required=True, help="candidate-list file")
    e.add_argument("--contexts", required=True, help="context session file, line k for list k")
    e.add_argument("--metrics", default="r@k,map,mrr,p@1", help="comma-separated metric families")
    e.add_argument("--out", default="-", help="report file; '-' for stdout")
    e.add_argument("--score-mode", choices=["model", "label", "constant"], default="model",
                   help="debug: score by label or by a constant instead of the model")
    e.set_defaults(func=cmd_eval_matcher)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.command == "eval-matcher" and args.score_mode == "model" and not args.ckpt:
            raise UsageError("eval-matcher --score-mode model requires --ckpt")
        args.func(args)
    except EcmoError as exc:
        print(f"error[{exc.category}]: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, UsageError) else EXIT_FAILURE
    except OSError as exc:
        print(f"error[io]: {_one_line(exc)}", file=sys.stderr)
        return EXIT_FAILURE
    return 0


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
