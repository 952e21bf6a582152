"""Dual-encoder ensembles (plain FFN head and MHA variant) and majority voting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoder import NUM_CLASSES, Encoder
from .errors import EmptyPredictionList, ShapeMismatch, UnknownLanguage
from .nn import Linear, Module, MultiHeadAttention
from .tokenizer import TokenBatch

LANGUAGE_ENCODERS = {"ar": "mini-arabert", "en": "mini-roberta"}
SHARED_ENCODER = "mini-mbert"
VARIANTS = ("a", "b")


@dataclass(frozen=True)
class Prediction:
    probs: tuple[float, float, float]
    label: int
    language: str

    def __post_init__(self):
        p = np.asarray(self.probs)
        if p.shape != (NUM_CLASSES,) or (p < 0).any() or abs(p.sum() - 1.0) >= 1e-9:
            raise ValueError(f"invalid probability vector {self.probs}")
        if self.label != int(np.argmax(p)):
            raise ValueError(f"label {self.label} is not the argmax of {self.probs}")


def predictions_from_logits(logits: np.ndarray, languages: Sequence[str]) -> list[Prediction]:
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    return [
        Prediction(tuple(float(x) for x in row), int(np.argmax(row)), lang)
        for row, lang in zip(probs, languages)
    ]


class Fusion(Module):
    """Concatenated poolers -> linear -> GELU."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.proj = Linear(d_in, d_out, rng)

    def __call__(self, pooler_lang: Tensor, pooler_shared: Tensor) -> Tensor:
        if pooler_lang.shape[0] != pooler_shared.shape[0]:
            raise ShapeMismatch(f"fuse: batch sizes differ, {pooler_lang.shape} vs {pooler_shared.shape}")
        joined = ag.concat_last_dim([pooler_lang, pooler_shared])
        if joined.shape[-1] != self.proj.weight.shape[0]:
            raise ShapeMismatch(f"fuse: input width {joined.shape[-1]} != {self.proj.weight.shape[0]}")
        return ag.gelu(self.proj(joined))


class FeedForwardHead(Module):
    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.hidden = Linear(d_in, d_hidden, rng)
        self.out = Linear(d_hidden, NUM_CLASSES, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(ag.gelu(self.hidden(x)))


class EnsembleModel(Module):
    """Language-specific encoder + shared multilingual encoder, fused poolers, FFN head.

    Variant ``"b"`` sends the fusion output straight to the head. Variant
    ``"a"`` splits the fusion output into two half-width tokens, runs one
    multi-head self-attention over that 2-token sequence, and mean-pools
    the result before the head.
    """

    kind = "ensemble"

    def __init__(
        self,
        lang_encoders: dict[str, Encoder],
        shared_encoder: Encoder,
        variant: str,
        rng: np.random.Generator,
        d_fusion: int = 64,
        d_hidden: int = 64,
        attention_heads: int = 4,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if set(lang_encoders) != set(LANGUAGE_ENCODERS):
            raise UnknownLanguage(f"need encoders for {sorted(LANGUAGE_ENCODERS)}, got {sorted(lang_encoders)}")
        for lang, enc in lang_encoders.items():
            if enc.name != LANGUAGE_ENCODERS[lang]:
                raise ValueError(f"{lang} must be served by {LANGUAGE_ENCODERS[lang]}, got {enc.name}")
        if shared_encoder.name != SHARED_ENCODER:
            raise ValueError(f"shared encoder must be {SHARED_ENCODER}, got {shared_encoder.name}")
        widths = {enc.config.d_model for enc in lang_encoders.values()}
        if len(widths) != 1:
            raise ShapeMismatch(f"language encoders disagree on d_model: {sorted(widths)}")
        self.variant = variant
        self.lang_encoders = dict(lang_encoders)
        self.shared_encoder = shared_encoder
        d_in = widths.pop() + shared_encoder.config.d_model
        self.fusion = Fusion(d_in, d_fusion, rng)
        if variant == "a":
            if d_fusion % 2:
                raise ValueError("variant a needs an even d_fusion")
            self.mha = MultiHeadAttention(d_fusion // 2, attention_heads, rng)
            self.head = FeedForwardHead(d_fusion // 2, d_hidden, rng)
        else:
            self.mha = None
            self.head = FeedForwardHead(d_fusion, d_hidden, rng)

    @property
    def encoders(self) -> dict[str, Encoder]:
        out = {enc.name: enc for enc in self.lang_encoders.values()}
        out[self.shared_encoder.name] = self.shared_encoder
        return out

    def route(self, language: str) -> tuple[Encoder, Encoder]:
        """The language-specific encoder for ``language``, plus the shared one."""
        try:
            return self.lang_encoders[language], self.shared_encoder
        except KeyError:
            raise UnknownLanguage(f"unsupported language {language!r}; expected ar or en") from None

    def fuse(self, pooler_lang: Tensor, pooler_shared: Tensor) -> Tensor:
        return self.fusion(pooler_lang, pooler_shared)

    def head_input(self, tokens_lang: TokenBatch, tokens_shared: TokenBatch, language: str) -> Tensor:
        lang_encoder, shared = self.route(language)
        fused = self.fuse(lang_encoder(tokens_lang).pooler_output, shared(tokens_shared).pooler_output)
        if self.mha is None:
            return fused
        b, width = fused.shape
        pair = fused.reshape(b, 2, width // 2)
        return ag.mean(self.mha(pair, pair, pair), axis=1)

    def __call__(self, tokens_lang: TokenBatch, tokens_shared: TokenBatch, language: str) -> Tensor:
        """Class logits [batch, 3]; the softmax lives in the loss / predictions."""
        return self.head(self.head_input(tokens_lang, tokens_shared, language))

    def predict(self, tokens_lang: TokenBatch, tokens_shared: TokenBatch, language: str) -> list[Prediction]:
        with ag.no_grad():
            logits = self(tokens_lang, tokens_shared, language)
        return predictions_from_logits(logits.data, [language] * len(tokens_lang))

    def forward_variant_a(self, tokens_lang, tokens_shared, language) -> list[Prediction]:
        if self.variant != "a":
            raise ValueError("this ensemble was built as variant b")
        return self.predict(tokens_lang, tokens_shared, language)

    def forward_variant_b(self, tokens_lang, tokens_shared, language) -> list[Prediction]:
        if self.variant != "b":
            raise ValueError("this ensemble was built as variant a")
        return self.predict(tokens_lang, tokens_shared, language)


def majority_vote(predictions: Sequence[Prediction]) -> int:
    """Modal label; ties go to the larger summed probability, then the lower index."""
    if not predictions:
        raise EmptyPredictionList("majority_vote needs at least one prediction")
    votes = Counter(p.label for p in predictions)
    top = max(votes.values())
    tied = [c for c in range(NUM_CLASSES) if votes.get(c, 0) == top]
    if len(tied) == 1:
        return tied[0]
    mass = {c: sum(p.probs[c] for p in predictions) for c in tied}
    best = max(mass.values())
    return min(c for c in tied if mass[c] == best)
