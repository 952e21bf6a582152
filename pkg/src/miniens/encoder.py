"""Miniature pre-norm transformer encoders with a tanh CLS pooler."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import IdOutOfRange, VocabMismatch
from .nn import INIT_STD, LayerNorm, Linear, Module, MultiHeadAttention, parameter
from .tokenizer import BpeVocab, TokenBatch

ENCODER_NAMES = ("mini-arabert", "mini-roberta", "mini-mbert", "mini-xlmr")
NUM_CLASSES = 3

# Which training languages feed each encoder's tokenizer.
ENCODER_LANGUAGES = {
    "mini-arabert": ("ar",),
    "mini-roberta": ("en",),
    "mini-mbert": ("ar", "en"),
    "mini-xlmr": ("ar", "en"),
}


@dataclass(frozen=True)
class EncoderConfig:
    name: str
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    max_positions: int = 256
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.name not in ENCODER_NAMES:
            raise ValueError(f"unknown encoder {self.name!r}; expected one of {ENCODER_NAMES}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def expected_parameter_count(cfg: EncoderConfig) -> int:
    d, f = cfg.d_model, cfg.d_ff
    embeddings = cfg.vocab_size * d + cfg.max_positions * d + 2 * d
    block = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d)
    return embeddings + cfg.n_layers * block + 2 * d + (d * d + d)


@dataclass
class EncoderOutput:
    sequence_output: Tensor  # [batch, seq, d_model]
    pooler_output: Tensor  # [batch, d_model]


class Block(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.ln_attn = LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.ln_ff = LayerNorm(cfg.d_model)
        self.ff_in = Linear(cfg.d_model, cfg.d_ff, rng)
        self.ff_out = Linear(cfg.d_ff, cfg.d_model, rng)

    def __call__(self, x: Tensor, mask: np.ndarray, dropout) -> Tensor:
        h = self.ln_attn(x)
        x = x + dropout(self.attn(h, h, h, mask))
        h = self.ff_out(ag.gelu(self.ff_in(self.ln_ff(x))))
        return x + dropout(h)


class Encoder(Module):
    """Token + learned position embeddings, ``n_layers`` pre-norm blocks, pooler.

    Each encoder owns exactly one BPE vocabulary; batches tokenized with any
    other vocabulary are rejected.
    """

    def __init__(self, cfg: EncoderConfig, vocab: BpeVocab, rng: np.random.Generator):
        if cfg.vocab_size != len(vocab):
            raise VocabMismatch(f"config vocab_size {cfg.vocab_size} != tokenizer size {len(vocab)}")
        self.config = cfg
        self.vocab = vocab
        self.vocab_tag = vocab.tag
        self.token_embedding = parameter(rng.normal(0.0, INIT_STD, (cfg.vocab_size, cfg.d_model)))
        self.position_embedding = parameter(rng.normal(0.0, INIT_STD, (cfg.max_positions, cfg.d_model)))
        self.embed_ln = LayerNorm(cfg.d_model)
        self.blocks = [Block(cfg, rng) for _ in range(cfg.n_layers)]
        self.final_ln = LayerNorm(cfg.d_model)
        self.pooler = Linear(cfg.d_model, cfg.d_model, rng)
        self.dropout_rng = np.random.default_rng(int(rng.integers(2**63)))

    @property
    def name(self) -> str:
        return self.config.name

    def _dropout(self, x: Tensor) -> Tensor:
        return ag.dropout(x, self.config.dropout_p, self.training, self.dropout_rng)

    def embed(self, input_ids: np.ndarray) -> Tensor:
        ids = np.asarray(input_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise IdOutOfRange(f"token ids must lie in [0, {self.config.vocab_size})")
        seq = ids.shape[1]
        if seq > self.config.max_positions:
            raise IdOutOfRange(f"sequence length {seq} exceeds max_positions {self.config.max_positions}")
        x = ag.embedding(self.token_embedding, ids) + self.position_embedding[:seq]
        return self._dropout(self.embed_ln(x))

    def __call__(self, batch: TokenBatch) -> EncoderOutput:
        if batch.vocab_tag != self.vocab_tag:
            raise VocabMismatch(
                f"{self.name} expects vocab {self.vocab_tag}, batch was tokenized with {batch.vocab_tag}"
            )
        x = self.embed(batch.input_ids)
        for block in self.blocks:
            x = block(x, batch.attention_mask, self._dropout)
        seq = self.final_ln(x)
        pooled = ag.tanh(self.pooler(seq[:, 0, :]))
        return EncoderOutput(seq, pooled)


class ClassifierModel(Module):
    """A single encoder with a linear head on its pooler output."""

    kind = "single"

    def __init__(self, encoder: Encoder, rng: np.random.Generator):
        self.encoder = encoder
        self.head = Linear(encoder.config.d_model, NUM_CLASSES, rng)

    def __call__(self, batch: TokenBatch) -> Tensor:
        return self.head(self.encoder(batch).pooler_output)

    classify_single = __call__

    @property
    def encoders(self) -> dict[str, Encoder]:
        return {self.encoder.name: self.encoder}
