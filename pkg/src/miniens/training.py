"""Model construction, fine-tuning loops for the three setups, and run storage."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import LANGUAGES
from . import autograd as ag
from .autograd import Adam, Tensor
from .config import ExperimentConfig
from .data import DatasetBundle, Example
from .encoder import ENCODER_LANGUAGES, NUM_CLASSES, ClassifierModel, Encoder, EncoderConfig
from .ensemble import (
    LANGUAGE_ENCODERS,
    SHARED_ENCODER,
    EnsembleModel,
    Prediction,
    predictions_from_logits,
)
from .errors import CheckpointMismatch, ConfigMismatch, MissingData
from .metrics import MetricsReport, evaluate
from .preprocess import clean_text
from .tokenizer import BpeVocab, TokenizedInput, load_vocab, save_vocab, stack, train_bpe

EVAL_BATCH = 64


# ---------------------------------------------------------------- construction


def encoder_names_for(cfg: ExperimentConfig) -> list[str]:
    if cfg.setup == 1:
        return [cfg.model]
    return sorted({*LANGUAGE_ENCODERS.values(), SHARED_ENCODER})


def train_tokenizers(names: Sequence[str], train_texts: dict[str, list[str]], vocab_size: int) -> dict[str, BpeVocab]:
    """One BPE vocabulary per encoder, learned from the languages that encoder covers."""
    vocabs = {}
    for name in names:
        corpus = [clean_text(t) for lang in ENCODER_LANGUAGES[name] for t in train_texts.get(lang, [])]
        vocabs[name] = train_bpe(corpus, vocab_size)
    return vocabs


def build_model(cfg: ExperimentConfig, vocabs: dict[str, BpeVocab]):
    rng = np.random.default_rng(cfg.seed)

    def make(name: str) -> Encoder:
        enc_cfg = EncoderConfig(
            name=name,
            vocab_size=len(vocabs[name]),
            d_model=cfg.d_model,
            n_heads=cfg.n_heads,
            n_layers=cfg.n_layers,
            d_ff=cfg.d_ff,
            max_positions=max(cfg.max_seq_len, 256),
            dropout_p=cfg.dropout,
        )
        return Encoder(enc_cfg, vocabs[name], rng)

    if cfg.setup == 1:
        return ClassifierModel(make(cfg.model), rng)
    encoders = {name: make(name) for name in encoder_names_for(cfg)}
    lang = {lang: encoders[name] for lang, name in LANGUAGE_ENCODERS.items()}
    return EnsembleModel(lang, encoders[SHARED_ENCODER], cfg.variant, rng)


# ---------------------------------------------------------------- data feeding


@dataclass
class Encoded:
    """An example tokenized once per encoder that will see it."""

    example: Example
    tokens: dict[str, TokenizedInput]


def encode_examples(model, examples: Sequence[Example], max_seq_len: int) -> list[Encoded]:
    out = []
    for ex in examples:
        text = clean_text(ex.text)
        if isinstance(model, EnsembleModel):
            lang_enc, shared = model.route(ex.language)
            needed = (lang_enc, shared)
        else:
            needed = (model.encoder,)
        out.append(Encoded(ex, {enc.name: enc.vocab.encode(text, max_seq_len) for enc in needed}))
    return out


def forward(model, items: Sequence[Encoded]) -> Tensor:
    """Logits for a batch; ensemble batches must be monolingual."""
    if isinstance(model, EnsembleModel):
        languages = {it.example.language for it in items}
        if len(languages) != 1:
            raise ValueError(f"ensemble batches must be monolingual, got {sorted(languages)}")
        language = languages.pop()
        lang_enc, shared = model.route(language)
        return model(
            stack([it.tokens[lang_enc.name] for it in items]),
            stack([it.tokens[shared.name] for it in items]),
            language,
        )
    return model(stack([it.tokens[model.encoder.name] for it in items]))


def loss_fn(name: str, logits: Tensor, labels: np.ndarray) -> Tensor:
    if name == "bce_logits":
        return ag.bce_with_logits(logits, np.eye(NUM_CLASSES)[labels])
    if name == "cross_entropy":
        return ag.cross_entropy(logits, labels)
    raise ConfigMismatch(f"unknown loss {name!r}")


def monolingual_batches(
    items: Sequence[Encoded], batch_size: int, rng: np.random.Generator
) -> list[list[Encoded]]:
    """Shuffle within each language, cut into single-language batches, and lay
    the language blocks out one after the other in a seeded order."""
    by_lang = {lang: [it for it in items if it.example.language == lang] for lang in LANGUAGES}
    present = [lang for lang in LANGUAGES if by_lang[lang]]
    batches = []
    for lang in rng.permutation(present):
        group = by_lang[str(lang)]
        order = rng.permutation(len(group))
        batches.extend(
            [group[j] for j in order[i : i + batch_size]] for i in range(0, len(group), batch_size)
        )
    return batches


def shuffled_batches(items: Sequence[Encoded], batch_size: int, rng: np.random.Generator) -> list[list[Encoded]]:
    order = rng.permutation(len(items))
    return [[items[j] for j in order[i : i + batch_size]] for i in range(0, len(items), batch_size)]


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    loss: float
    report: MetricsReport
    predictions: list[Prediction]


def predict(model, items: Sequence[Encoded], loss: str | None = None) -> tuple[list[Prediction], float]:
    """Predictions in input order (eval mode), plus the mean loss if ``loss`` is given."""
    was_training = model.training
    model.eval()
    preds: list[Prediction | None] = [None] * len(items)
    total = 0.0
    try:
        with ag.no_grad():
            groups = (
                {lang: [i for i, it in enumerate(items) if it.example.language == lang] for lang in LANGUAGES}
                if isinstance(model, EnsembleModel)
                else {"all": list(range(len(items)))}
            )
            for idx in groups.values():
                for start in range(0, len(idx), EVAL_BATCH):
                    chunk = idx[start : start + EVAL_BATCH]
                    batch = [items[i] for i in chunk]
                    logits = forward(model, batch)
                    if loss is not None:
                        labels = np.array([it.example.label for it in batch])
                        total += loss_fn(loss, logits, labels).item() * len(batch)
                    langs = [it.example.language for it in batch]
                    for i, p in zip(chunk, predictions_from_logits(logits.data, langs)):
                        preds[i] = p
    finally:
        model.train(was_training)
    return preds, (total / len(items) if items else 0.0)


def evaluate_items(model, items: Sequence[Encoded], loss: str) -> EvalResult:
    preds, mean_loss = predict(model, items, loss)
    rep = evaluate([it.example.label for it in items], [p.label for p in preds])
    return EvalResult(mean_loss, rep, preds)


# ---------------------------------------------------------------- logs


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_loss: float
    dev: MetricsReport
    dev_by_language: dict[str, tuple[float, MetricsReport]] = field(default_factory=dict)


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)
    seconds: float = 0.0
    test: dict[str, MetricsReport] = field(default_factory=dict)

    HEADER = "epoch\ttrain_loss\tdev_loss\tacc\twP\twR\tmacroF1\n"

    @staticmethod
    def _row(epoch: int, train_loss: float, dev_loss: float, rep: MetricsReport) -> str:
        nums = (train_loss, dev_loss, *rep.as_row())
        return f"{epoch}\t" + "\t".join(f"{x:.17g}" for x in nums) + "\n"

    def to_tsv(self, language: str | None = None) -> str:
        """Per-epoch rows; with ``language``, the dev columns are that language's slice."""
        rows = [self.HEADER]
        for e in self.epochs:
            if language is None:
                rows.append(self._row(e.epoch, e.train_loss, e.dev_loss, e.dev))
            else:
                dev_loss, rep = e.dev_by_language[language]
                rows.append(self._row(e.epoch, e.train_loss, dev_loss, rep))
        return "".join(rows)

    def test_tsv(self) -> str:
        rows = ["scope\tacc\twP\twR\tmacroF1\n"]
        for scope, rep in self.test.items():
            rows.append(scope + "\t" + "\t".join(f"{x:.17g}" for x in rep.as_row()) + "\n")
        return "".join(rows)


# ---------------------------------------------------------------- loops


def _fit(model, train: list[Encoded], dev: list[Encoded], cfg: ExperimentConfig, batcher) -> TrainLog:
    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(model.parameters(), lr=cfg.lr)
    log = TrainLog()
    started = time.perf_counter()
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        seen = 0
        total = 0.0
        for batch in batcher(train, cfg.batch_size, rng):
            labels = np.array([it.example.label for it in batch])
            loss = loss_fn(cfg.loss, forward(model, batch), labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            seen += len(batch)
        entry = _dev_entry(model, epoch, total / seen, dev, cfg.loss)
        log.epochs.append(entry)
    opt.zero_grad()
    log.seconds = time.perf_counter() - started
    return log


def _dev_entry(model, epoch: int, train_loss: float, dev: list[Encoded], loss: str) -> EpochLog:
    result = evaluate_items(model, dev, loss)
    by_lang = {}
    for lang in LANGUAGES:
        part = [it for it in dev if it.example.language == lang]
        if part and len(part) != len(dev):
            r = evaluate_items(model, part, loss)
            by_lang[lang] = (r.loss, r.report)
    return EpochLog(epoch, train_loss, result.loss, result.report, by_lang)


def _need(examples: Sequence[Example], what: str) -> None:
    if not examples:
        raise MissingData(f"{what} is empty")


def train_single(model: ClassifierModel, bundle: DatasetBundle, cfg: ExperimentConfig, enforce_pairing: bool = True):
    """Setup 1: one encoder + linear head on one language.

    With ``bce_logits`` the three logits are trained one-vs-all against
    one-hot targets and inference takes their argmax.
    """
    cfg.validate(enforce_pairing)
    if cfg.setup != 1:
        raise ConfigMismatch(f"train_single runs setup 1, config has setup {cfg.setup}")
    _need(bundle.train, "train split")
    train = encode_examples(model, bundle.train, cfg.max_seq_len)
    dev = encode_examples(model, bundle.dev, cfg.max_seq_len)
    log = _fit(model, train, dev, cfg, shuffled_batches)
    if bundle.test:
        log.test[cfg.language] = evaluate_items(model, encode_examples(model, bundle.test, cfg.max_seq_len), cfg.loss).report
    return model, log


def train_ensemble_merged(
    model: EnsembleModel, bundle_ar: DatasetBundle, bundle_en: DatasetBundle, cfg: ExperimentConfig
):
    """Setup 2: both languages pooled, monolingual batches in language blocks."""
    cfg.validate()
    if cfg.setup != 2:
        raise ConfigMismatch(f"train_ensemble_merged runs setup 2, config has setup {cfg.setup}")
    train = encode_examples(model, bundle_en.train + bundle_ar.train, cfg.max_seq_len)
    _need(train, "merged train split")
    dev = encode_examples(model, bundle_en.dev + bundle_ar.dev, cfg.max_seq_len)
    log = _fit(model, train, dev, cfg, monolingual_batches)
    test = encode_examples(model, bundle_en.test + bundle_ar.test, cfg.max_seq_len)
    if test:
        log.test["merged"] = evaluate_items(model, test, cfg.loss).report
        for lang in ("en", "ar"):
            part = [it for it in test if it.example.language == lang]
            if part:
                log.test[lang] = evaluate_items(model, part, cfg.loss).report
    return model, log


def train_ensemble_perlang(model: EnsembleModel, bundle: DatasetBundle, language: str, cfg: ExperimentConfig):
    """Setup 3: the ensemble trained and evaluated on a single language."""
    cfg.validate()
    if cfg.setup != 3:
        raise ConfigMismatch(f"train_ensemble_perlang runs setup 3, config has setup {cfg.setup}")
    model.route(language)
    for split in (bundle.train, bundle.dev, bundle.test):
        if any(ex.language != language for ex in split):
            raise ConfigMismatch(f"setup 3 bundle must be all {language}")
    _need(bundle.train, "train split")
    train = encode_examples(model, bundle.train, cfg.max_seq_len)
    dev = encode_examples(model, bundle.dev, cfg.max_seq_len)
    log = _fit(model, train, dev, cfg, monolingual_batches)
    if bundle.test:
        log.test[language] = evaluate_items(model, encode_examples(model, bundle.test, cfg.max_seq_len), cfg.loss).report
    return model, log


# ---------------------------------------------------------------- run storage


def save_run(run_dir, model, cfg: ExperimentConfig, log: TrainLog | None = None) -> dict[str, Path]:
    """model.ckpt + config.cfg + tokenizers/<encoder>/ + trainlog TSVs; returns the paths written."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = {"checkpoint": run_dir / "model.ckpt", "config": run_dir / "config.cfg"}
    ag.save_parameters(paths["checkpoint"], model.named_parameters())
    paths["config"].write_text(cfg.to_text(), encoding="utf-8")
    for name, enc in model.encoders.items():
        save_vocab(enc.vocab, run_dir / "tokenizers" / name)
    if log is not None:
        paths["trainlog"] = run_dir / "trainlog.tsv"
        paths["trainlog"].write_text(log.to_tsv(), encoding="utf-8")
        langs = sorted({lang for e in log.epochs for lang in e.dev_by_language})
        for lang in langs:
            paths[f"trainlog.{lang}"] = run_dir / f"trainlog.{lang}.tsv"
            paths[f"trainlog.{lang}"].write_text(log.to_tsv(lang), encoding="utf-8")
        if log.test:
            paths["test_metrics"] = run_dir / "test_metrics.tsv"
            paths["test_metrics"].write_text(log.test_tsv(), encoding="utf-8")
    return paths


def load_run(run_dir):
    """Rebuild a trained model from a run directory written by :func:`save_run`."""
    from .config import coerce, parse_config_text

    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.cfg"
    if not cfg_path.is_file() or not (run_dir / "model.ckpt").is_file():
        raise CheckpointMismatch(f"{run_dir} is not a run directory (config.cfg / model.ckpt missing)")
    cfg = ExperimentConfig(**coerce(parse_config_text(cfg_path.read_text(encoding="utf-8"), str(cfg_path))))
    vocabs = {name: load_vocab(run_dir / "tokenizers" / name) for name in encoder_names_for(cfg)}
    model = build_model(cfg, vocabs)
    try:
        model.load_state_dict(ag.load_parameters(run_dir / "model.ckpt"))
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatch(f"{run_dir}: {exc}") from None
    model.eval()
    return model, cfg
