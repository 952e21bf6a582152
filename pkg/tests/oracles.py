"""Independent reference implementations used as test oracles.

Nothing here imports the code paths it checks: the metric, softmax, BPE and
cleaning oracles are written from the definitions, and the finite-difference
engine re-implements the model forward pass in plain numpy so that it can
evaluate many perturbed copies of one parameter in a single vectorised call.
"""

from __future__ import annotations

import math
import re
import unicodedata

import numpy as np

# ---------------------------------------------------------------- small oracles


def triple_loop_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def softmax_list(xs):
    exps = [math.exp(x - max(xs)) for x in xs]
    total = sum(exps)
    return [e / total for e in exps]


def cross_entropy_list(rows, targets):
    total = 0.0
    for row, t in zip(rows, targets):
        m = max(row)
        total += -(row[t] - m - math.log(sum(math.exp(z - m) for z in row)))
    return total / len(rows)


def bce_list(rows, onehots):
    vals = []
    for row, trow in zip(rows, onehots):
        for z, t in zip(row, trow):
            # plain formula, branch on sign for stability
            if z >= 0:
                vals.append(z - z * t + math.log(1 + math.exp(-z)))
            else:
                vals.append(-z * t + math.log(1 + math.exp(z)))
    return sum(vals) / len(vals)


def brute_force_metrics(gold, pred, n_classes=3):
    """Metrics straight from the (gold, pred) pairs without a confusion matrix."""
    total = len(gold)
    precision, recall, f1, support = [], [], [], []
    for c in range(n_classes):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        predicted = sum(1 for p in pred if p == c)
        actual = sum(1 for g in gold if g == c)
        pr = tp / predicted if predicted else 0.0
        rc = tp / actual if actual else 0.0
        precision.append(pr)
        recall.append(rc)
        f1.append(2 * pr * rc / (pr + rc) if pr + rc else 0.0)
        support.append(actual)
    return {
        "accuracy": sum(1 for g, p in zip(gold, pred) if g == p) / total,
        "weighted_precision": sum(s * p for s, p in zip(support, precision)) / total,
        "weighted_recall": sum(s * r for s, r in zip(support, recall)) / total,
        "macro_f1": sum(f1) / n_classes,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "support": support,
    }


def clean_text_by_rules(raw: str) -> str:
    """Four cleaning rules applied one after another, each as its own pass."""
    step1 = re.sub(r"https?://\S+", "", raw)
    step1 = re.sub(r"www\.\S+", "", step1)
    invisible = {0x200B, 0x200C, 0x200D, 0x2060, 0xFEFF, 0x200E, 0x200F, 0x061C}
    invisible |= set(range(0x202A, 0x202F)) | set(range(0x2066, 0x206A))
    step2 = []
    for ch in step1:
        cp = ord(ch)
        if ch in "\t\n":
            step2.append(" ")
        elif cp <= 0x1F or 0x7F <= cp <= 0x9F or cp in invisible:
            continue
        else:
            step2.append(ch)
    step3 = [
        ch
        for ch in step2
        if ch in "@#_'’" or not (unicodedata.category(ch).startswith("S") or unicodedata.category(ch).startswith("P"))
    ]
    return re.sub(r"\s+", " ", "".join(step3)).strip()


def sequential_merge_oracle(word_symbols, merges):
    """Apply each learned merge in order over the whole symbol list."""
    symbols = list(word_symbols)
    for left, right in merges:
        out, i = [], 0
        while i < len(symbols):
            if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                out.append(left + right)
                i += 2
            else:
                out.append(symbols[i])
                i += 1
        symbols = out
    return symbols


def naive_bpe_merges(words, n_merges):
    """Recount every adjacent pair from scratch before each merge.

    ``words`` are symbol strings (one character per base symbol). Stops
    early when the best pair occurs fewer than two times.
    """
    corpus = [list(w) for w in words]
    merges = []
    for _ in range(n_merges):
        counts = {}
        for symbols in corpus:
            for pair in zip(symbols, symbols[1:]):
                counts[pair] = counts.get(pair, 0) + 1
        if not counts:
            break
        top = max(counts.values())
        if top < 2:
            break
        best = min(p for p, c in counts.items() if c == top)
        merges.append(best)
        corpus = [sequential_merge_oracle(symbols, [best]) for symbols in corpus]
    return merges


def mode_vote_oracle(labels, probs):
    """Brute-force tie-break: rank classes by (votes, summed prob, -index)."""
    scores = []
    for c in range(3):
        votes = sum(1 for l in labels if l == c)
        mass = sum(p[c] for p in probs)
        scores.append((votes, mass, -c))
    return max(range(3), key=lambda c: scores[c])


# ---------------------------------------------------------------- replica forward

GELU_C = math.sqrt(2.0 / math.pi)


def _gelu(x):
    t = x * x
    t *= x
    t *= 0.044715
    t += x
    t *= GELU_C
    np.tanh(t, out=t)
    t += 1.0
    t *= x
    t *= 0.5
    return t


def _layer_norm(x, g, b, eps=1e-5):
    xc = x - x.mean(axis=-1, keepdims=True)
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    var += eps
    xc /= np.sqrt(var)
    ones = (1,) * (x.ndim - 2)
    xc = xc * g.reshape((g.shape[0],) + ones + g.shape[1:])
    b = b.reshape((b.shape[0],) + ones + b.shape[1:])
    if b.shape[0] > xc.shape[0]:
        return xc + b
    xc += b
    return xc


def _linear(x, w, b):
    """x: [R|1, ..., in] @ w [in, out] + b [R|1, out], as one GEMM."""
    y = (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[-1],))
    b = b.reshape((b.shape[0],) + (1,) * (x.ndim - 2) + b.shape[1:])
    if b.shape[0] > y.shape[0]:
        return y + b
    y += b
    return y


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ReplicaModel:
    """Numpy re-implementation of a classifier or ensemble forward pass.

    ``losses((name, flat_idx, delta))`` evaluates R perturbed copies of the
    model, copy r having ``name.flat[flat_idx[r]] += delta[r]``, and returns
    the R losses.
    Token and position tables are reduced to the rows the batch reads.
    """

    def __init__(self, named_params: dict, n_layers: int, n_heads: int, loss: str, labels):
        self.params = {k: np.array(v, dtype=np.float64) for k, v in named_params.items()}
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.loss_name = loss
        self.labels = np.asarray(labels)
        self.inputs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.used_rows: dict[str, np.ndarray] = {}

    # inputs --------------------------------------------------------------
    def set_encoder_input(self, prefix: str, ids: np.ndarray, mask: np.ndarray):
        used = np.unique(ids)
        remap = {int(v): i for i, v in enumerate(used)}
        self.used_rows[prefix] = used
        self.params[prefix + "token_embedding"] = self.params[prefix + "token_embedding"][used]
        self.params[prefix + "position_embedding"] = self.params[prefix + "position_embedding"][: ids.shape[1]]
        self.inputs[prefix] = (np.vectorize(remap.get)(ids), np.asarray(mask, dtype=np.float64))

    def _p(self, name, ov):
        """Parameter ``name`` as [R|1, *shape], with the perturbation applied if it targets it."""
        base = self.params[name]
        if ov is None or ov[0] != name:
            return base[None]
        _, idx, delta = ov
        stack = np.repeat(base.reshape(1, -1), len(idx), axis=0)
        stack[np.arange(len(idx)), idx] += delta
        return stack.reshape((len(idx),) + base.shape)

    def _lin(self, x, pre, ov):
        """Linear layer ``pre``; a perturbed weight adds delta * x[..., i] to column j."""
        w = self.params[pre + "weight"]
        y = _linear(x, w, self._p(pre + "bias", ov))
        if ov is not None and ov[0] == pre + "weight":
            _, idx, delta = ov
            r = len(idx)
            rows, cols = np.divmod(idx, w.shape[1])
            y = np.array(np.broadcast_to(y, (r,) + y.shape[1:]))
            xt = np.moveaxis(np.broadcast_to(x, (r,) + x.shape[1:]), -1, 1)
            yt = np.moveaxis(y, -1, 1)
            extra = (1,) * (x.ndim - 2)
            yt[np.arange(r), cols] += delta.reshape((r,) + extra) * xt[np.arange(r), rows]
        return y

    # encoder ---------------------------------------------------------------
    # Stages: 0 = embeddings, then per block an attention half (1 + 2l) and a
    # feed-forward half (2 + 2l), then final norm + pooler (2L + 1).
    def _final_stage(self):
        return 2 * self.n_layers + 1

    def stage_of(self, prefix: str, name: str) -> int:
        rest = name[len(prefix) :]
        if rest.startswith("blocks."):
            _, layer, part = rest.split(".")[:3]
            return 1 + 2 * int(layer) + (part not in ("ln_attn", "attn"))
        if rest.startswith(("final_ln", "pooler")):
            return self._final_stage()
        return 0

    def _output_linear(self, prefix: str, stage: int) -> str | None:
        """Prefix of the linear layer that ends a block half (its input is cached)."""
        if stage == 0 or stage == self._final_stage():
            return None
        layer, half = divmod(stage - 1, 2)
        return f"{prefix}blocks.{layer}." + ("attn.output." if half == 0 else "ff_out.")

    def _attention_context(self, x, pre, mask_bias, ov):
        q = self._lin(x, pre + "query.", ov)
        k = self._lin(x, pre + "key.", ov)
        v = self._lin(x, pre + "value.", ov)
        r = max(q.shape[0], k.shape[0], v.shape[0])
        lead = x.shape[1:-2]
        s, d = x.shape[-2], x.shape[-1]
        h = self.n_heads

        def split(t):
            t = np.broadcast_to(t, (r,) + t.shape[1:])
            return np.swapaxes(t.reshape((r,) + lead + (s, h, d // h)), -3, -2)

        scores = split(q) @ np.swapaxes(split(k), -1, -2) / math.sqrt(d // h)
        if mask_bias is not None:
            scores = scores + mask_bias
        return np.swapaxes(_softmax(scores) @ split(v), -3, -2).reshape((r,) + lead + (s, d))

    def _attention(self, x, pre, mask_bias, ov):
        return self._lin(self._attention_context(x, pre, mask_bias, ov), pre + "output.", ov)

    def encoder_stage(self, prefix, stage, x, ov, inner=None):
        """Output of ``stage`` given its input ``x``; ``inner`` (a dict) receives
        the input of the stage's closing linear layer."""
        ids, mask = self.inputs[prefix]
        if stage == 0:
            tok = self._p(prefix + "token_embedding", ov)
            pos = self._p(prefix + "position_embedding", ov)
            x = tok[:, ids] + pos[:, None, :, :]
            return _layer_norm(x, self._p(prefix + "embed_ln.gain", ov), self._p(prefix + "embed_ln.bias", ov))
        if stage < self._final_stage():
            layer, half = divmod(stage - 1, 2)
            pre = f"{prefix}blocks.{layer}."
            if half == 0:
                bias = ((1.0 - mask) * -1e9)[None, :, None, None, :]
                h = _layer_norm(x, self._p(pre + "ln_attn.gain", ov), self._p(pre + "ln_attn.bias", ov))
                h = self._attention_context(h, pre + "attn.", bias, ov)
                out = pre + "attn.output."
                if layer == self.n_layers - 1:
                    # only the CLS position reaches the pooler from here on
                    h, x = h[..., :1, :], x[..., :1, :]
            else:
                h = _layer_norm(x, self._p(pre + "ln_ff.gain", ov), self._p(pre + "ln_ff.bias", ov))
                h = _gelu(self._lin(h, pre + "ff_in.", ov))
                out = pre + "ff_out."
            if inner is not None:
                inner[stage] = h
            return x + self._lin(h, out, ov)
        seq = _layer_norm(x, self._p(prefix + "final_ln.gain", ov), self._p(prefix + "final_ln.bias", ov))
        return np.tanh(self._lin(seq[:, :, 0, :], prefix + "pooler.", ov))

    def encoder_cache(self, prefix):
        """Unperturbed input of every stage (last entry = pooler output) and the
        input of each stage's closing linear layer."""
        acts, inner = [None], {}
        x = None
        for stage in range(self._final_stage() + 1):
            x = self.encoder_stage(prefix, stage, x, None, inner)
            acts.append(x)
        return acts, inner

    def _shifted_output(self, base, h, ov, n_out):
        """``base`` plus the change a perturbed closing linear makes: one output
        column per replica moves by delta * h[..., i] (weight) or delta (bias)."""
        name, idx, delta = ov
        r = len(idx)
        y = np.array(np.broadcast_to(base, (r,) + base.shape[1:]))
        yt = np.moveaxis(y, -1, 1)
        extra = (1,) * (base.ndim - 2)
        if name.endswith("weight"):
            rows, cols = np.divmod(idx, n_out)
            ht = np.moveaxis(np.broadcast_to(h, (r,) + h.shape[1:]), -1, 1)
            yt[np.arange(r), cols] += delta.reshape((r,) + extra) * ht[np.arange(r), rows]
        else:
            yt[np.arange(r), idx] += delta.reshape((r,) + extra)
        return y

    def pooler(self, prefix, ov, cache):
        acts, inner = cache
        if ov is None or not ov[0].startswith(prefix):
            return acts[-1]
        start = self.stage_of(prefix, ov[0])
        closing = self._output_linear(prefix, start)
        if closing is not None and ov[0].startswith(closing):
            n_out = self.params[closing + "weight"].shape[1]
            x = self._shifted_output(acts[start + 1], inner[start], ov, n_out)
            start += 1
        else:
            x = acts[start]
        for stage in range(start, self._final_stage() + 1):
            x = self.encoder_stage(prefix, stage, x, ov)
        return x

    # losses ----------------------------------------------------------------
    def loss_from_logits(self, logits):
        y = self.labels
        if self.loss_name == "cross_entropy":
            z = logits - logits.max(axis=-1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
            return -logp[:, np.arange(len(y)), y].mean(axis=-1)
        t = np.eye(3)[y][None]
        vals = np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
        return vals.reshape(vals.shape[0], -1).mean(axis=-1)


class SingleReplica(ReplicaModel):
    prefix = "encoder."

    def prepare(self):
        self.cache = self.encoder_cache(self.prefix)

    def losses(self, ov=None):
        pooled = self.pooler(self.prefix, ov, self.cache)
        return self.loss_from_logits(self._lin(pooled, "head.", ov))


class EnsembleReplica(ReplicaModel):
    def __init__(self, *args, language: str, variant: str, **kwargs):
        super().__init__(*args, **kwargs)
        self.lang_prefix = f"lang_encoders.{language}."
        self.shared_prefix = "shared_encoder."
        self.variant = variant

    def prepare(self):
        self.caches = {p: self.encoder_cache(p) for p in (self.lang_prefix, self.shared_prefix)}

    def losses(self, ov=None):
        pl = self.pooler(self.lang_prefix, ov, self.caches[self.lang_prefix])
        ps = self.pooler(self.shared_prefix, ov, self.caches[self.shared_prefix])
        r = max(pl.shape[0], ps.shape[0])
        joined = np.concatenate(
            [np.broadcast_to(pl, (r,) + pl.shape[1:]), np.broadcast_to(ps, (r,) + ps.shape[1:])], axis=-1
        )
        fused = _gelu(self._lin(joined, "fusion.proj.", ov))
        if self.variant == "a":
            rr, b, w = fused.shape
            pair = fused.reshape(rr, b, 2, w // 2)
            fused = self._attention(pair, "mha.", None, ov).mean(axis=-2)
        hidden = _gelu(self._lin(fused, "head.hidden.", ov))
        return self.loss_from_logits(self._lin(hidden, "head.out.", ov))


def finite_difference_grads(replica: ReplicaModel, h: float = 1e-5, chunk: int = 1024) -> dict[str, np.ndarray]:
    """Central differences for every element of every (reduced) parameter."""
    replica.prepare()
    grads = {}
    for name, value in replica.params.items():
        flat = value.reshape(-1)
        out = np.empty(flat.size)
        for start in range(0, flat.size, chunk):
            idx = np.arange(start, min(start + chunk, flat.size))
            k = len(idx)
            delta = np.concatenate([np.full(k, h), np.full(k, -h)])
            losses = np.broadcast_to(replica.losses((name, np.concatenate([idx, idx]), delta)), (2 * k,))
            out[idx] = (losses[:k] - losses[k:]) / (2 * h)
        grads[name] = out.reshape(value.shape)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Norm-wise relative error ||a - n|| / max(||a|| + ||n||, floor).

    The floor keeps gradients that are identically zero in exact arithmetic
    (attention key biases, which shift every score of a query equally) from
    turning finite-difference round-off into a relative error of 1.
    """
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor))
