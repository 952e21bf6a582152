"""Byte-level BPE: training, fixed-length encoding, decoding, two-file storage.

Text is split on whitespace; every word after the first keeps its leading
space byte (GPT-2 convention), so decoding can restore word boundaries.
Bytes are shown through the printable byte-to-unicode table so that every
token is a whitespace-free string that fits on one line of ``vocab.txt``.
"""

from __future__ import annotations

import hashlib
import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus, IdOutOfRange

# The angle brackets lie outside the byte-to-unicode table, so no learned
# token can ever collide with a special.
SPECIAL_TOKENS = ("⟨pad⟩", "⟨unk⟩", "⟨cls⟩", "⟨sep⟩")
PAD, UNK, CLS, SEP = 0, 1, 2, 3


@lru_cache(maxsize=1)
def byte_to_unicode() -> dict[int, str]:
    printable = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    mapping = {b: chr(b) for b in printable}
    offset = 0
    for b in range(256):
        if b not in mapping:
            mapping[b] = chr(256 + offset)
            offset += 1
    return mapping


@lru_cache(maxsize=1)
def unicode_to_byte() -> dict[str, int]:
    return {c: b for b, c in byte_to_unicode().items()}


def pre_tokenize(text: str) -> list[str]:
    """Whitespace split, then each word's UTF-8 bytes as mapped characters."""
    table = byte_to_unicode()
    words = []
    for i, word in enumerate(text.split()):
        raw = word.encode("utf-8") if i == 0 else b" " + word.encode("utf-8")
        words.append("".join(table[b] for b in raw))
    return words


@dataclass(frozen=True)
class BpeVocab:
    tokens: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)
    ranks: dict[tuple[str, str], int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ValueError("vocab must start with the four special tokens")
        object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.tokens)})
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocab")
        object.__setattr__(self, "ranks", {pair: i for i, pair in enumerate(self.merges)})
        for left, right in self.merges:
            if left + right not in self.token_to_id:
                raise ValueError(f"merge result {left + right!r} missing from vocab")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def tag(self) -> str:
        """Content hash; batches carry it so encoders never mix vocabularies."""
        h = hashlib.sha256()
        h.update("\n".join(self.tokens).encode("utf-8"))
        h.update(b"\x00")
        h.update("\n".join(f"{a} {b}" for a, b in self.merges).encode("utf-8"))
        return h.hexdigest()[:16]

    def encode(self, text: str, max_seq_len: int) -> "TokenizedInput":
        return encode(text, self, max_seq_len)

    def decode(self, ids: Iterable[int]) -> str:
        return decode(ids, self)


@dataclass(frozen=True)
class TokenizedInput:
    input_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    vocab_tag: str


@dataclass(frozen=True)
class TokenBatch:
    input_ids: np.ndarray  # [batch, seq] int64
    attention_mask: np.ndarray  # [batch, seq] float64 of 0/1
    vocab_tag: str

    def __len__(self) -> int:
        return self.input_ids.shape[0]


def stack(items: Sequence[TokenizedInput], trim: bool = True) -> TokenBatch:
    """Stack encodings into a batch; ``trim`` drops columns that are PAD in every row."""
    tags = {item.vocab_tag for item in items}
    if len(tags) != 1:
        raise ValueError(f"cannot batch encodings from different vocabularies: {sorted(tags)}")
    ids = np.array([item.input_ids for item in items], dtype=np.int64)
    mask = np.array([item.attention_mask for item in items], dtype=np.float64)
    if trim:
        width = int(mask.sum(axis=1).max())
        ids, mask = ids[:, :width], mask[:, :width]
    return TokenBatch(ids, mask, tags.pop())


def train_bpe(corpus: Iterable[str], vocab_size: int) -> BpeVocab:
    """Learn merges by repeatedly fusing the most frequent adjacent pair.

    Stops at ``vocab_size`` tokens or once no pair occurs at least twice.
    Equal counts go to the lexicographically smallest ``(left, right)``.
    """
    word_freq = Counter()
    for text in corpus:
        word_freq.update(pre_tokenize(text))
    if not word_freq:
        raise EmptyCorpus("corpus has no non-empty text")

    alphabet = sorted({ch for w in word_freq for ch in w}, key=lambda c: unicode_to_byte()[c])
    min_size = len(SPECIAL_TOKENS) + len(alphabet)
    if vocab_size < min_size:
        raise ValueError(f"vocab_size {vocab_size} < specials + alphabet = {min_size}")

    tokens = list(SPECIAL_TOKENS) + alphabet
    known = set(tokens)
    merges: list[tuple[str, str]] = []

    words = [list(w) for w in sorted(word_freq)]
    freqs = [word_freq[w] for w in sorted(word_freq)]
    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, (symbols, freq) in enumerate(zip(words, freqs)):
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += freq
            where[pair].add(idx)
    heap = [(-count, pair[0], pair[1]) for pair, count in pair_counts.items()]
    heapq.heapify(heap)

    while len(tokens) < vocab_size:
        best = None
        while heap:
            neg, left, right = heapq.heappop(heap)
            if pair_counts.get((left, right), 0) == -neg:
                best = (left, right)
                break
        if best is None or pair_counts[best] < 2:
            break
        left, right = best
        merged = left + right
        merges.append(best)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)

        touched = Counter()
        for idx in sorted(where.pop(best, ())):
            symbols = words[idx]
            if len(symbols) < 2:
                continue
            new = _merge_pair(symbols, left, right)
            if len(new) == len(symbols):
                continue
            freq = freqs[idx]
            for pair in zip(symbols, symbols[1:]):
                touched[pair] -= freq
            for pair in zip(new, new[1:]):
                touched[pair] += freq
                where[pair].add(idx)
            words[idx] = new
        for pair, delta in touched.items():
            if delta == 0:
                continue
            pair_counts[pair] += delta
            if pair_counts[pair] <= 0:
                del pair_counts[pair]
            else:
                heapq.heappush(heap, (-pair_counts[pair], pair[0], pair[1]))
        pair_counts.pop(best, None)

    return BpeVocab(tuple(tokens), tuple(merges))


def _merge_pair(symbols: list[str], left: str, right: str) -> list[str]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _apply_merges(word: str, ranks: dict[tuple[str, str], int]) -> list[str]:
    symbols = list(word)
    while len(symbols) > 1:
        best = min(zip(symbols, symbols[1:]), key=lambda p: ranks.get(p, len(ranks)))
        if best not in ranks:
            break
        symbols = _merge_pair(symbols, *best)
    return symbols


def tokenize(text: str, vocab: BpeVocab) -> list[int]:
    """Token ids for ``text`` without specials or padding."""
    ids = []
    for word in pre_tokenize(text):
        ids.extend(vocab.token_to_id.get(sym, UNK) for sym in _apply_merges(word, vocab.ranks))
    return ids


def encode(text: str, vocab: BpeVocab, max_seq_len: int) -> TokenizedInput:
    if max_seq_len < 3:
        raise ValueError("max_seq_len must be at least 3")
    body = tokenize(text, vocab)[: max_seq_len - 2]
    ids = [CLS, *body, SEP]
    n_real = len(ids)
    ids += [PAD] * (max_seq_len - n_real)
    mask = [1] * n_real + [0] * (max_seq_len - n_real)
    return TokenizedInput(tuple(ids), tuple(mask), vocab.tag)


def decode(ids: Iterable[int], vocab: BpeVocab) -> str:
    """Inverse of :func:`encode` up to UNK and truncation; specials are dropped."""
    lookup = unicode_to_byte()
    out = bytearray()
    for i in ids:
        i = int(i)
        if i < 0 or i >= len(vocab):
            raise IdOutOfRange(f"token id {i} outside vocab of size {len(vocab)}")
        if i in (PAD, CLS, SEP):
            continue
        if i == UNK:
            out.extend("�".encode("utf-8"))
            continue
        out.extend(lookup[ch] for ch in vocab.tokens[i])
    return out.decode("utf-8", errors="replace")


def save_vocab(vocab: BpeVocab, directory) -> None:
    """Write ``vocab.txt`` (line number = id) and ``merges.txt`` (``left right`` per line)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "vocab.txt").write_text("".join(t + "\n" for t in vocab.tokens), encoding="utf-8")
    (directory / "merges.txt").write_text(
        "".join(f"{a} {b}\n" for a, b in vocab.merges), encoding="utf-8"
    )


def load_vocab(directory) -> BpeVocab:
    directory = Path(directory)
    tokens = (directory / "vocab.txt").read_text(encoding="utf-8").split("\n")[:-1]
    lines = (directory / "merges.txt").read_text(encoding="utf-8").split("\n")[:-1]
    merges = tuple(tuple(line.split(" ")) for line in lines)
    return BpeVocab(tuple(tokens), merges)
