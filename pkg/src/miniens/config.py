"""Experiment configuration: flat ``key = value`` files and the three setups.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines
are ignored; keys are lowercase identifiers; values are bare tokens. Later
assignments override earlier ones.
"""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass
from pathlib import Path

from .encoder import ENCODER_NAMES
from .errors import ConfigError, ConfigMismatch

DEFAULT_LR = 2e-5
DEFAULT_MAX_SEQ_LEN = 256
SETUP_LOSS = {1: "bce_logits", 2: "cross_entropy", 3: "cross_entropy"}
SETUP_BATCH_SIZE = {1: 16, 2: 24, 3: 24}
SETUP_EPOCHS = {1: 3, 2: 2, 3: 2}
ENSEMBLE_MODELS = ("ensemble-a", "ensemble-b")
LOSSES = ("bce_logits", "cross_entropy")
SEED_ENV = "MINIENS_SEED"

_LINE = re.compile(r"^\s*([a-z_][a-z0-9_]*)\s*=\s*(\S+)\s*$")


@dataclass(frozen=True)
class ExperimentConfig:
    setup: int
    model: str
    language: str
    loss: str
    lr: float = DEFAULT_LR
    batch_size: int = 16
    epochs: int = 3
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN
    seed: int = 13
    vocab_size: int = 2048
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.1

    def validate(self, enforce_pairing: bool = True) -> "ExperimentConfig":
        """Raise ConfigMismatch unless the setup, model, language, loss and batch size agree.

        ``epochs``, ``lr`` and ``max_seq_len`` may be overridden for desk-scale runs.
        """
        if self.setup not in SETUP_LOSS:
            raise ConfigMismatch(f"setup must be 1, 2 or 3, got {self.setup}")
        if self.loss not in LOSSES:
            raise ConfigMismatch(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.setup == 1:
            if self.model not in ENCODER_NAMES:
                raise ConfigMismatch(f"setup 1 trains a single encoder {ENCODER_NAMES}, got {self.model!r}")
            if self.language not in ("ar", "en"):
                raise ConfigMismatch(f"setup 1 trains per language (ar|en), got {self.language!r}")
        else:
            if self.model not in ENSEMBLE_MODELS:
                raise ConfigMismatch(f"setup {self.setup} trains {ENSEMBLE_MODELS}, got {self.model!r}")
            wanted = ("merged",) if self.setup == 2 else ("ar", "en")
            if self.language not in wanted:
                raise ConfigMismatch(f"setup {self.setup} needs language in {wanted}, got {self.language!r}")
        if enforce_pairing:
            if self.loss != SETUP_LOSS[self.setup]:
                raise ConfigMismatch(
                    f"setup {self.setup} uses loss {SETUP_LOSS[self.setup]}, config says {self.loss}"
                )
            if self.batch_size != SETUP_BATCH_SIZE[self.setup]:
                raise ConfigMismatch(
                    f"setup {self.setup} uses batch size {SETUP_BATCH_SIZE[self.setup]}, config says {self.batch_size}"
                )
        if self.max_seq_len < 3 or self.max_seq_len > DEFAULT_MAX_SEQ_LEN:
            raise ConfigMismatch(f"max_seq_len must lie in [3, {DEFAULT_MAX_SEQ_LEN}], got {self.max_seq_len}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigMismatch("epochs, batch_size and lr must be positive")
        return self

    @property
    def variant(self) -> str | None:
        return self.model[-1] if self.model in ENSEMBLE_MODELS else None

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n".replace("'", "") for f in dataclasses.fields(self))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        values[m.group(1)] = m.group(2)
    return values


def coerce(values: dict[str, str]) -> dict:
    out = {}
    for key, raw in values.items():
        if key not in _FIELDS:
            raise ConfigMismatch(f"unknown config key {key!r}")
        kind = _FIELDS[key].type
        try:
            out[key] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw
        except ValueError:
            raise ConfigMismatch(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return out


def preset(setup: int, language: str, model: str | None = None) -> ExperimentConfig:
    """Preset hyperparameters for ``setup``."""
    if model is None:
        model = "mini-mbert" if setup == 1 else "ensemble-b"
    return ExperimentConfig(
        setup=setup,
        model=model,
        language=language,
        loss=SETUP_LOSS[setup],
        batch_size=SETUP_BATCH_SIZE[setup],
        epochs=SETUP_EPOCHS[setup],
    )


def load_config(setup: int | None = None, model: str | None = None, sources=(), env=None) -> ExperimentConfig:
    """Merge preset <- config files / ``key=value`` items <- CLI flags <- $MINIENS_SEED."""
    env = os.environ if env is None else env
    values: dict[str, str] = {}
    for src in sources:
        path = Path(src)
        if path.is_file():
            values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
        elif "=" in src:
            values.update(parse_config_text(src.replace(",", "\n"), "--config"))
        else:
            raise ConfigError(f"config {src!r} is neither a file nor key=value")
    merged = coerce(values)
    if setup is not None:
        if "setup" in merged and merged["setup"] != setup:
            raise ConfigMismatch(f"--setup {setup} contradicts config setup = {merged['setup']}")
        merged["setup"] = setup
    if model is not None:
        merged["model"] = model
    if "setup" not in merged:
        raise ConfigError("no setup given (use --setup or 'setup = N' in the config)")
    s = merged["setup"]
    if s not in SETUP_LOSS:
        raise ConfigMismatch(f"setup must be 1, 2 or 3, got {s}")
    language = merged.get("language", "merged" if s == 2 else "en")
    base = preset(s, language, merged.get("model"))
    cfg = dataclasses.replace(base, **merged)
    if env.get(SEED_ENV):
        try:
            cfg = cfg.replace(seed=int(env[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"${SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg
