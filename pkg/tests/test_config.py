from pathlib import Path

import pytest

from miniens.config import ExperimentConfig, load_config, parse_config_text, preset
from miniens.errors import ConfigError, ConfigMismatch

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# learning rate, sequence length, and batch size / epochs for each setup, as stated for the experiments
EXPECTED = {1: ("bce_logits", 16, 3), 2: ("cross_entropy", 24, 2), 3: ("cross_entropy", 24, 2)}


@pytest.mark.parametrize("setup,language", [(1, "en"), (1, "ar"), (2, "merged"), (3, "en"), (3, "ar")])
def test_presets_audit(setup, language):
    loss, batch, epochs = EXPECTED[setup]
    for cfg in (preset(setup, language), load_config(sources=[str(CONFIGS / f"setup{setup}-{language}.cfg")], env={})):
        assert cfg.lr == 2e-5
        assert cfg.max_seq_len == 256
        assert (cfg.setup, cfg.language, cfg.loss, cfg.batch_size, cfg.epochs) == (setup, language, loss, batch, epochs)
        cfg.validate()


def test_shipped_config_files():
    assert sorted(p.name for p in CONFIGS.glob("*.cfg")) == [
        "setup1-ar.cfg", "setup1-en.cfg", "setup2-merged.cfg", "setup3-ar.cfg", "setup3-en.cfg",
    ]


def test_parse_grammar():
    text = "# comment\n\nsetup = 2  # trailing\nlr=0.001\nlr = 0.002\n"
    assert parse_config_text(text) == {"setup": "2", "lr": "0.002"}
    with pytest.raises(ConfigError, match=":1:"):
        parse_config_text("setup 2\n")


def test_load_config_layers(tmp_path):
    f = tmp_path / "a.cfg"
    f.write_text("setup = 1\nlanguage = ar\nepochs = 5\n", encoding="utf-8")
    cfg = load_config(model="mini-arabert", sources=[str(f), "epochs=7,lr=0.001"], env={})
    assert (cfg.setup, cfg.language, cfg.model, cfg.epochs, cfg.lr) == (1, "ar", "mini-arabert", 7, 0.001)
    assert cfg.batch_size == 16


def test_seed_env_wins():
    cfg = load_config(setup=1, sources=["seed=3"], env={"MINIENS_SEED": "99"})
    assert cfg.seed == 99
    with pytest.raises(ConfigError):
        load_config(setup=1, env={"MINIENS_SEED": "x"})


def test_config_errors():
    with pytest.raises(ConfigMismatch):
        load_config(setup=1, sources=["bogus=1"], env={})
    with pytest.raises(ConfigMismatch):
        load_config(setup=1, sources=["epochs=many"], env={})
    with pytest.raises(ConfigMismatch):
        load_config(setup=2, sources=["setup=1"], env={})
    with pytest.raises(ConfigError):
        load_config(env={})
    with pytest.raises(ConfigError):
        load_config(setup=1, sources=["not-a-file"], env={})


@pytest.mark.parametrize(
    "changes",
    [
        {"loss": "cross_entropy"},
        {"batch_size": 24},
        {"model": "ensemble-b"},
        {"language": "merged"},
        {"max_seq_len": 512},
        {"setup": 4},
    ],
)
def test_pairing_violations(changes):
    with pytest.raises(ConfigMismatch):
        preset(1, "en").replace(**changes).validate()


def test_desk_overrides_allowed():
    preset(2, "merged").replace(epochs=1, lr=1e-3, max_seq_len=32).validate()
    preset(1, "en").replace(loss="cross_entropy").validate(enforce_pairing=False)
    with pytest.raises(ConfigMismatch):
        preset(3, "merged").validate()


def test_to_text_round_trip():
    cfg = preset(3, "ar", "ensemble-a").replace(lr=1e-3)
    back = load_config(sources=[cfg.to_text().replace("\n", ",")], env={})
    assert back == cfg
    assert isinstance(back, ExperimentConfig)
