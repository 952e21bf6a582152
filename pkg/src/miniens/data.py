"""SemEval/ASTD loaders, label harmonisation, Arabic merge and split building.

File formats (UTF-8, one row per line, blank lines ignored):

* SemEval: ``id<TAB>label<TAB>text`` with label positive/negative/neutral
  (any case). The text may itself contain tabs.
* ASTD: ``text<TAB>label`` with label OBJ/POS/NEG/NEUTRAL. OBJ rows are
  dropped and ids are synthesised as ``astd-<line>``.
"""

from __future__ import annotations

import random
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import LABELS
from .errors import DuplicateTestLeak, MalformedRow, MissingData, UnknownLabel
from .preprocess import clean_text

SEMEVAL_LABELS = {"positive": 0, "negative": 1, "neutral": 2}
ASTD_LABELS = {"POS": 0, "NEG": 1, "NEUTRAL": 2, "OBJ": None}


@dataclass(frozen=True)
class Example:
    id: str
    text: str
    language: str
    label: int
    source: str = ""

    @property
    def label_name(self) -> str:
        return LABELS[self.label]


@dataclass
class DatasetBundle:
    train: list[Example]
    dev: list[Example]
    test: list[Example]
    provenance: dict[str, str] = field(default_factory=dict)

    def splits(self) -> dict[str, list[Example]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def _rows(path) -> Iterable[tuple[int, str]]:
    path = Path(path)
    if not path.is_file():
        raise MissingData(f"{path}: no such file")
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield lineno, line


def load_semeval(path, language: str = "en") -> list[Example]:
    source = Path(path).name
    out = []
    for lineno, line in _rows(path):
        parts = line.split("\t", 2)
        if len(parts) < 3 or not parts[0].strip():
            raise MalformedRow(path, lineno, "expected id<TAB>label<TAB>text")
        ident, label, text = parts
        key = label.strip().lower()
        if key not in SEMEVAL_LABELS:
            raise UnknownLabel(path, lineno, label)
        out.append(Example(ident.strip(), text, language, SEMEVAL_LABELS[key], source))
    return out


def load_astd(path) -> list[Example]:
    source = Path(path).name
    out = []
    for lineno, line in _rows(path):
        if "\t" not in line:
            raise MalformedRow(path, lineno, "expected text<TAB>label")
        text, label = line.rsplit("\t", 1)
        key = label.strip().upper()
        if key not in ASTD_LABELS:
            raise UnknownLabel(path, lineno, label)
        if ASTD_LABELS[key] is None:
            continue
        out.append(Example(f"astd-{lineno}", text, "ar", ASTD_LABELS[key], source))
    return out


def dedup_key(text: str) -> str:
    """Cleaned text with Latin letters lowercased; other scripts untouched."""
    return "".join(
        ch.lower() if unicodedata.name(ch, "").startswith("LATIN") else ch for ch in clean_text(text)
    )


def _check_leak(train: Sequence[Example], dev: Sequence[Example], test: Sequence[Example]) -> None:
    test_keys = {dedup_key(ex.text): ex.id for ex in test}
    leaks = [
        f"{ex.id}~{test_keys[dedup_key(ex.text)]}"
        for ex in [*train, *dev]
        if dedup_key(ex.text) in test_keys
    ]
    if leaks:
        raise DuplicateTestLeak(f"{len(leaks)} train/dev texts duplicate test texts: {', '.join(leaks[:5])}")


def _unique_ids(examples: Iterable[Example]) -> list[Example]:
    seen: set[str] = set()
    out = []
    for ex in examples:
        ident = ex.id
        if ident in seen:
            ident = f"{Path(ex.source).stem}:{ex.id}"
            n = 2
            while ident in seen:
                ident = f"{Path(ex.source).stem}:{ex.id}#{n}"
                n += 1
            ex = Example(ident, ex.text, ex.language, ex.label, ex.source)
        seen.add(ident)
        out.append(ex)
    return out


def split_dev(examples: Sequence[Example], seed: int, dev_fraction: float = 0.1) -> tuple[list, list]:
    """Seeded shuffle, then the first floor(fraction * N) examples become dev."""
    shuffled = list(examples)
    random.Random(seed).shuffle(shuffled)
    n_dev = int(len(shuffled) * round(dev_fraction * 100)) // 100
    return shuffled[n_dev:], shuffled[:n_dev]


def build_arabic_bundle(semeval_ar_paths: Sequence, astd_path, test_path, seed: int) -> DatasetBundle:
    """SemEval Arabic train files + ASTD, deduplicated, shuffled, split 90/10; official test kept apart."""
    merged: list[Example] = []
    for p in semeval_ar_paths:
        merged.extend(load_semeval(p, "ar"))
    merged.extend(load_astd(astd_path))
    seen: set[str] = set()
    unique = []
    for ex in merged:
        key = dedup_key(ex.text)
        if key not in seen:
            seen.add(key)
            unique.append(ex)
    unique = _unique_ids(unique)
    train, dev = split_dev(unique, seed)
    test = load_semeval(test_path, "ar")
    _check_leak(train, dev, test)
    return DatasetBundle(train, dev, test, {ex.id: ex.source for ex in [*train, *dev, *test]})


def build_english_bundle(train_paths: Sequence, dev_paths: Sequence, test_path) -> DatasetBundle:
    """Train on the 2013-2016 files minus the dev (2013/2014 test) files; test on 2017."""
    dev_resolved = {Path(p).resolve() for p in dev_paths}
    dev: list[Example] = []
    for p in dev_paths:
        dev.extend(load_semeval(p, "en"))
    dev = _unique_ids(dev)
    dev_ids = {ex.id for ex in dev}
    train: list[Example] = []
    train_ids: set[str] = set()
    for p in train_paths:
        if Path(p).resolve() in dev_resolved:
            continue
        for ex in load_semeval(p, "en"):
            if ex.id in dev_ids or ex.id in train_ids:
                continue
            train_ids.add(ex.id)
            train.append(ex)
    test = load_semeval(test_path, "en")
    _check_leak(train, dev, test)
    return DatasetBundle(train, dev, test, {ex.id: ex.source for ex in [*train, *dev, *test]})


def write_split(examples: Sequence[Example], path, clean: bool = True) -> None:
    """SemEval row format; text is cleaned unless ``clean`` is False."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            text = clean_text(ex.text) if clean else ex.text
            fh.write(f"{ex.id}\t{LABELS[ex.label].lower()}\t{text}\n")
