"""Finite-difference gradient check for the three architectures at desk config.

The model is built normally, then its parameters are redrawn at unit-ish
scale so that every gradient is well above the finite-difference noise
floor (with the 0.02 training init, attention query/key gradients are
around 1e-10 and central differences cannot resolve them).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from miniens.config import preset
from miniens.data import Example
from miniens.tokenizer import stack
from miniens.training import build_model, encode_examples, encoder_names_for, forward, loss_fn, train_tokenizers

from oracles import EnsembleReplica, SingleReplica, finite_difference_grads, relative_error

ARCHITECTURES = ("single", "ensemble-a", "ensemble-b")
CORPUS = [
    "good movie", "bad game", "the phone", "good day", "bad news today", "the game",
    "love it", "hate it", "so good", "so bad", "at noon", "this week",
]
# one- and two-word texts: sequences of 3 and 4 tokens, so the batch has padding
BATCH = [("g1", "good", 0), ("g2", "bad game", 1), ("g3", "the", 2), ("g4", "game", 0)]


@dataclass
class GradcheckResult:
    architecture: str
    errors: dict[str, float] = field(default_factory=dict)
    unused_rows_zero: bool = True
    seconds: float = 0.0

    @property
    def worst(self) -> float:
        return max(self.errors.values())


def rescale(model, seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    for name, p in model.named_parameters().items():
        if name.endswith(("token_embedding", "position_embedding")):
            p.data = rng.normal(0.0, 1.0, p.shape)
        elif name.endswith("gain"):
            p.data = 1.0 + rng.normal(0.0, 0.2, p.shape)
        elif p.data.ndim == 2:
            p.data = rng.normal(0.0, 1.0 / np.sqrt(p.shape[0]), p.shape)
        else:
            p.data = rng.normal(0.0, 0.2, p.shape)


def build(architecture: str, n_layers: int = 2):
    if architecture == "single":
        cfg = preset(1, "en", "mini-roberta")
    else:
        cfg = preset(2, "merged", architecture)
    cfg = cfg.replace(n_layers=n_layers)
    vocabs = train_tokenizers(encoder_names_for(cfg), {"en": CORPUS, "ar": CORPUS}, 300)
    model = build_model(cfg, vocabs)
    model.eval()
    rescale(model)
    return cfg, model


def run_gradcheck(architecture: str, h: float = 1e-5, n_layers: int = 2) -> GradcheckResult:
    start = time.perf_counter()
    cfg, model = build(architecture, n_layers)
    batch = [Example(i, text, "en", label) for i, text, label in BATCH]
    items = encode_examples(model, batch, cfg.max_seq_len)
    labels = np.array([e.label for e in batch])
    loss = loss_fn(cfg.loss, forward(model, items), labels)
    loss.backward()
    named = model.named_parameters()
    values = {k: v.data for k, v in named.items()}

    if architecture == "single":
        replica = SingleReplica(values, cfg.n_layers, cfg.n_heads, cfg.loss, labels)
        inputs = {"encoder.": "mini-roberta"}
    else:
        replica = EnsembleReplica(
            values, cfg.n_layers, cfg.n_heads, cfg.loss, labels, language="en", variant=architecture[-1]
        )
        inputs = {"lang_encoders.en.": "mini-roberta", "shared_encoder.": "mini-mbert"}
    for prefix, enc in inputs.items():
        tb = stack([it.tokens[enc] for it in items])
        replica.set_encoder_input(prefix, tb.input_ids, tb.attention_mask)

    numeric = finite_difference_grads(replica, h=h)
    result = GradcheckResult(architecture)
    for name, fd in numeric.items():
        grad = named[name].grad
        grad = np.zeros(named[name].shape) if grad is None else grad
        prefix = name.rsplit(".", 1)[0] + "."
        if name.endswith("token_embedding") and prefix in replica.used_rows:
            rows = replica.used_rows[prefix]
            unused = np.setdiff1d(np.arange(grad.shape[0]), rows)
            result.unused_rows_zero &= bool(np.all(grad[unused] == 0.0))
            grad = grad[rows]
        elif name.endswith("position_embedding") and prefix in replica.used_rows:
            result.unused_rows_zero &= bool(np.all(grad[fd.shape[0] :] == 0.0))
            grad = grad[: fd.shape[0]]
        if not np.any(grad) and not np.any(fd):
            # parameters off the active path (the other language's encoder)
            result.errors[name] = 0.0
            continue
        result.errors[name] = relative_error(grad, fd)
    result.seconds = time.perf_counter() - start
    return result
