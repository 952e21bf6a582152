"""Parameter containers and the layers shared by encoders and ensembles."""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ShapeMismatch

INIT_STD = 0.02
MASK_BIAS = -1e9


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Walks attributes in definition order to find parameters and submodules."""

    training = True

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for attr, value in vars(self).items():
            key = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, sub in enumerate(value):
                    out.update(sub.named_parameters(f"{key}.{i}."))
            elif isinstance(value, dict) and value and isinstance(next(iter(value.values())), Module):
                for name in sorted(value):
                    out.update(value[name].named_parameters(f"{key}.{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def modules(self):
        yield self
        for value in vars(self).values():
            children = []
            if isinstance(value, Module):
                children = [value]
            elif isinstance(value, (list, tuple)):
                children = [v for v in value if isinstance(v, Module)]
            elif isinstance(value, dict):
                children = [value[k] for k in sorted(value) if isinstance(value[k], Module)]
            for child in children:
                yield from child.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint {state[name].shape} vs model {p.shape}")
            p.data[...] = state[name]


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = parameter(rng.normal(0.0, INIT_STD, (n_in, n_out)))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gain, self.bias, self.eps)


def mask_bias(attention_mask: np.ndarray) -> np.ndarray:
    """[batch, seq] 0/1 mask -> additive [batch, 1, 1, seq] bias for attention scores."""
    m = np.asarray(attention_mask, dtype=np.float64)
    return ((1.0 - m) * MASK_BIAS)[:, None, None, :]


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``n_heads`` subspaces, re-projected.

    Masked key positions get a -1e9 bias before the softmax, which
    underflows their weight to exactly zero in float64.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.output = Linear(d_model, d_model, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        return x.reshape(b, s, self.n_heads, self.d_model // self.n_heads).transpose(1, 2)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, attention_mask=None) -> Tensor:
        if q.ndim != 3 or q.shape[-1] != self.d_model or k.shape != v.shape or k.shape[-1] != self.d_model:
            raise ShapeMismatch(
                f"attention expects [batch, seq, {self.d_model}] inputs, got {q.shape}, {k.shape}, {v.shape}"
            )
        b, s, _ = q.shape
        heads_q = self._split(self.query(q))
        heads_k = self._split(self.key(k))
        heads_v = self._split(self.value(v))
        scores = ag.scale(heads_q @ heads_k.transpose(-2, -1), 1.0 / math.sqrt(self.d_model // self.n_heads))
        if attention_mask is not None:
            scores = scores + mask_bias(attention_mask)
        weights = ag.softmax(scores, axis=-1)
        self.last_weights = weights.data
        context = (weights @ heads_v).transpose(1, 2).reshape(b, s, self.d_model)
        return self.output(context)
