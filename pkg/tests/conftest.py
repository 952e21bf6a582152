import numpy as np
import pytest

from miniens.data import load_semeval
from miniens.tokenizer import train_bpe
from miniens.preprocess import clean_text
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def en_texts():
    return [clean_text(e.text) for e in load_semeval(FIXTURES / "en" / "twitter-2013train.tsv")]


@pytest.fixture(scope="session")
def small_vocab(en_texts):
    return train_bpe(en_texts, 400)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS):
            terminalreporter.write_line(line)
