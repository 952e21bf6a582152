"""``miniens`` command line: prepare, train, eval, predict, tokenizer-train.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import LABELS, LANGUAGES, __version__
from .config import SEED_ENV, load_config
from .data import (
    build_arabic_bundle,
    build_english_bundle,
    load_astd,
    load_semeval,
    DatasetBundle,
    Example,
    write_split,
)
from .ensemble import EnsembleModel, majority_vote
from .errors import CheckpointMismatch, ConfigError, MiniensError, MissingData, UnknownLanguage
from .metrics import evaluate, results_table
from .preprocess import clean_text
from .tokenizer import save_vocab, train_bpe
from .training import (
    build_model,
    encode_examples,
    encoder_names_for,
    load_run,
    predict,
    save_run,
    train_ensemble_merged,
    train_ensemble_perlang,
    train_single,
    train_tokenizers,
)

SPLITS = ("train", "dev", "test")
PREDICTION_HEADER = "example_id\tlanguage\tp_pos\tp_neg\tp_neu\tlabel\n"


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors are exit code 1 here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def seed_from(args_seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    return args_seed


def split_paths(data_dir, language: str) -> dict[str, Path]:
    return {split: Path(data_dir) / language / f"{split}.tsv" for split in SPLITS}


def load_prepared(data_dir, language: str) -> DatasetBundle:
    paths = split_paths(data_dir, language)
    for p in paths.values():
        if not p.is_file():
            raise MissingData(f"{p}: missing (run 'miniens prepare' first)")
    return DatasetBundle(*(load_semeval(paths[s], language) for s in SPLITS))


def format_prediction(example_id: str, pred) -> str:
    probs = "\t".join(f"{p:.17g}" for p in pred.probs)
    return f"{example_id}\t{pred.language}\t{probs}\t{LABELS[pred.label]}\n"


# ---------------------------------------------------------------- prepare


def raw_layout(raw: Path) -> dict:
    """Default input paths under a raw directory laid out like fixtures/."""
    en = raw / "en"
    en_files = sorted(en.glob("twitter-*.tsv"))
    test = en / "twitter-2017test.tsv"
    dev = [en / "twitter-2013test.tsv", en / "twitter-2014test.tsv"]
    ar = raw / "ar"
    return {
        "en_train": [p for p in en_files if p != test],
        "en_dev": dev,
        "en_test": test,
        "ar_semeval": sorted(ar.glob("semeval2017-task4*-train.tsv")),
        "astd": ar / "astd.tsv",
        "ar_test": ar / "semeval2017-task4A-test.tsv",
    }


def cmd_prepare(args) -> int:
    paths = raw_layout(Path(args.raw)) if args.raw else {}
    for key in ("en_train", "en_dev", "en_test", "ar_semeval", "astd", "ar_test"):
        given = getattr(args, key)
        if given:
            paths[key] = [Path(p) for p in given] if isinstance(given, list) else Path(given)
        if not paths.get(key):
            raise UsageError(f"no input for --{key.replace('_', '-')} (give it or use --raw)")
    seed = seed_from(args.seed)
    bundles = {
        "en": build_english_bundle(paths["en_train"], paths["en_dev"], paths["en_test"]),
        "ar": build_arabic_bundle(paths["ar_semeval"], paths["astd"], paths["ar_test"], seed),
    }
    out = Path(args.out)
    summary = ["language\tsplit\tPositive\tNegative\tNeutral\ttotal\n"]
    for lang in LANGUAGES:
        bundle = bundles[lang]
        for split, examples in bundle.splits().items():
            write_split(examples, split_paths(out, lang)[split])
            counts = [sum(1 for e in examples if e.label == c) for c in range(len(LABELS))]
            summary.append(f"{lang}\t{split}\t" + "\t".join(map(str, counts)) + f"\t{len(examples)}\n")
    write_atomic(out / "summary.tsv", "".join(summary))
    sys.stdout.write("".join(summary))
    return 0


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    sources = list(args.config or [])
    if args.language:
        sources.append(f"language={args.language}")
    cfg = load_config(args.setup, args.model, sources).validate()
    languages = ["ar", "en"] if cfg.setup == 2 else [cfg.language]
    # an ensemble carries both language encoders, so both vocabularies are
    # learned even when setup 3 trains on one language only
    vocab_languages = [cfg.language] if cfg.setup == 1 else ["ar", "en"]
    inputs = {}
    for lang in sorted(set(languages) | set(vocab_languages)):
        for split, p in split_paths(args.data, lang).items():
            if not p.is_file():
                raise MissingData(f"{p}: missing (run 'miniens prepare' first)")
            inputs[str(p)] = sha256_file(p)
    bundles = {lang: load_prepared(args.data, lang) for lang in sorted(set(languages) | set(vocab_languages))}

    started = time.perf_counter()
    vocabs = train_tokenizers(
        encoder_names_for(cfg), {lang: [e.text for e in bundles[lang].train] for lang in vocab_languages}, cfg.vocab_size
    )
    model = build_model(cfg, vocabs)
    if cfg.setup == 1:
        model, log = train_single(model, bundles[cfg.language], cfg)
    elif cfg.setup == 2:
        model, log = train_ensemble_merged(model, bundles["ar"], bundles["en"], cfg)
    else:
        model, log = train_ensemble_perlang(model, bundles[cfg.language], cfg.language, cfg)
    outputs = save_run(args.out, model, cfg, log)
    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "inputs": inputs,
        "outputs": {k: str(v) for k, v in sorted(outputs.items())},
        "seconds": round(time.perf_counter() - started, 3),
    }
    write_atomic(Path(args.out) / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    last = log.epochs[-1]
    print(f"trained {cfg.model} setup {cfg.setup} ({cfg.language}): {len(log.epochs)} epochs, "
          f"final dev macro F1 {last.dev.macro_f1:.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------------- eval


def run_languages(model, cfg) -> list[str]:
    if isinstance(model, EnsembleModel) and cfg.setup == 2:
        return ["en", "ar"]
    return [cfg.language]


def system_name(cfg) -> str:
    if cfg.setup == 1:
        return f"{cfg.model} (setup 1)"
    scope = "merged" if cfg.setup == 2 else "per-language"
    return f"{cfg.model} {scope} (setup {cfg.setup})"


def cmd_eval(args) -> int:
    if args.test and not args.language:
        raise UsageError("--test needs --language")
    if not args.test and not args.data:
        raise UsageError("give --data DIR or --test FILE --language L")

    def test_set(lang):
        if args.test:
            return load_semeval(args.test, lang) if lang == args.language else []
        return load_prepared(args.data, lang).test

    tests = {lang: test_set(lang) for lang in LANGUAGES}
    out = Path(args.out) if args.out else None
    rows = []
    # per checkpoint and language: the run's predictions in test-set order
    predictions: dict[str, dict[str, list]] = {}
    configs = {}
    for ckpt in args.checkpoint:
        run_dir = Path(ckpt)
        model, cfg = load_run(run_dir)
        configs[ckpt] = cfg
        langs = [lang for lang in run_languages(model, cfg) if tests[lang]]
        if args.test and args.language not in run_languages(model, cfg):
            raise CheckpointMismatch(f"{ckpt} was trained for {run_languages(model, cfg)}, not {args.language}")
        predictions[ckpt] = {}
        merged_gold, merged_pred = [], []
        for lang in langs:
            items = encode_examples(model, tests[lang], cfg.max_seq_len)
            preds, _ = predict(model, items)
            predictions[ckpt][lang] = preds
            gold = [e.label for e in tests[lang]]
            rows.append((lang, system_name(cfg), evaluate(gold, [p.label for p in preds])))
            merged_gold += gold
            merged_pred += [p.label for p in preds]
            if out is not None:
                name = f"{run_dir.name}.{lang}.tsv"
                lines = [PREDICTION_HEADER] + [format_prediction(e.id, p) for e, p in zip(tests[lang], preds)]
                write_atomic(out / "predictions" / name, "".join(lines))
        if cfg.setup == 2 and len(langs) == 2:
            rows.append(("merged", system_name(cfg), evaluate(merged_gold, merged_pred)))

    if args.vote:
        committee = args.committee or [c for c in args.checkpoint if configs[c].setup == 1]
        for c in committee:
            if c not in predictions:
                raise UsageError(f"committee member {c} is not among --checkpoint")
        for lang in LANGUAGES:
            members = [c for c in committee if lang in predictions[c]]
            if not members:
                continue
            votes = [majority_vote([predictions[c][lang][i] for c in members]) for i in range(len(tests[lang]))]
            gold = [e.label for e in tests[lang]]
            rows.append((lang, f"majority vote ({len(members)} models)", evaluate(gold, votes)))
            if out is not None:
                lines = ["example_id\tlanguage\tlabel\n"]
                lines += [f"{e.id}\t{lang}\t{LABELS[v]}\n" for e, v in zip(tests[lang], votes)]
                write_atomic(out / "predictions" / f"vote.{lang}.tsv", "".join(lines))

    order = {"en": 0, "ar": 1, "merged": 2}
    rows.sort(key=lambda r: order[r[0]])
    table = results_table(rows)
    if out is not None:
        write_atomic(out / "results.txt", table)
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------- predict / tokenizer-train


def cmd_predict(args) -> int:
    model, cfg = load_run(args.checkpoint)
    if isinstance(model, EnsembleModel):
        model.route(args.language)
    elif args.language not in run_languages(model, cfg):
        raise UnknownLanguage(f"{args.checkpoint} was trained on {cfg.language!r}, not {args.language!r}")
    items = encode_examples(model, [Example("input", args.text, args.language, 0)], cfg.max_seq_len)
    (pred,), _ = predict(model, items)
    sys.stdout.write(PREDICTION_HEADER + format_prediction("input", pred))
    return 0


def cmd_tokenizer_train(args) -> int:
    texts = []
    for path in args.input:
        if args.format == "semeval":
            texts += [e.text for e in load_semeval(path)]
        elif args.format == "astd":
            texts += [e.text for e in load_astd(path)]
        else:
            p = Path(path)
            if not p.is_file():
                raise MissingData(f"{p}: no such file")
            texts += [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
    vocab = train_bpe([clean_text(t) for t in texts], args.vocab_size)
    save_vocab(vocab, args.out)
    print(f"{len(vocab)} tokens, {len(vocab.merges)} merges, tag {vocab.tag} -> {args.out}")
    return 0


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="miniens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"miniens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("prepare", help="load, clean, merge and split the raw corpora")
    p.add_argument("--raw", help="directory laid out like fixtures/ (en/, ar/)")
    p.add_argument("--en-train", nargs="+", help="SemEval 2013-2016 English files")
    p.add_argument("--en-dev", nargs="+", help="SemEval 2013/2014 English test files (dev set)")
    p.add_argument("--en-test", help="SemEval 2017 English test file")
    p.add_argument("--ar-semeval", nargs="+", help="SemEval-17 Arabic train files (subtasks A/B/D)")
    p.add_argument("--astd", help="ASTD file (text<TAB>label)")
    p.add_argument("--ar-test", help="SemEval-17 Arabic subtask A test file")
    p.add_argument("--seed", type=int, default=13, help=f"Arabic split seed (${SEED_ENV} overrides)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one model of setup 1, 2 or 3")
    p.add_argument("--setup", type=int, choices=(1, 2, 3))
    p.add_argument("--model", help="mini-mbert | mini-xlmr | mini-arabert | mini-roberta | ensemble-a | ensemble-b")
    p.add_argument("--language", choices=("ar", "en", "merged"))
    p.add_argument("--config", action="append", help="config file or key=value[,key=value]; repeatable")
    p.add_argument("--data", required=True, help="directory written by 'prepare'")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on the test sets")
    p.add_argument("--checkpoint", nargs="+", required=True, help="run directories")
    p.add_argument("--data", help="directory written by 'prepare'")
    p.add_argument("--test", help="a single SemEval-format test file")
    p.add_argument("--language", choices=LANGUAGES, help="language of --test")
    p.add_argument("--vote", action="store_true", help="add majority-vote rows")
    p.add_argument("--committee", nargs="+", help="voting members (default: the setup-1 checkpoints)")
    p.add_argument("--out", help="directory for results.txt and prediction TSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--language", required=True, choices=LANGUAGES)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("tokenizer-train", help="learn a BPE vocabulary")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--format", choices=("semeval", "astd", "text"), default="semeval")
    p.add_argument("--vocab-size", type=int, default=2048)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenizer_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MiniensError as exc:
        print(f"miniens: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # e.g. a vocabulary size too small for the byte alphabet
        print(f"miniens: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
