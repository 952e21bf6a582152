"""Tweet text cleaning: URLs, invisible characters, symbols, whitespace."""

import re
import unicodedata

URL_RE = re.compile(r"(?:https?://|www\.)\S+")

# Mentions and hashtags carry sentiment signal, so their markers survive.
KEPT_SYMBOLS = frozenset("@#_'’")

_ZERO_WIDTH = {0x200B, 0x200C, 0x200D, 0x2060, 0xFEFF}
_DIRECTIONAL = {0x061C, 0x200E, 0x200F, *range(0x202A, 0x202F), *range(0x2066, 0x206A)}
_INVISIBLE = _ZERO_WIDTH | _DIRECTIONAL


def is_invisible(ch: str) -> bool:
    cp = ord(ch)
    if ch in "\t\n":
        return False
    return cp < 0x20 or 0x7F <= cp <= 0x9F or cp in _INVISIBLE


def is_removed_symbol(ch: str) -> bool:
    return ch not in KEPT_SYMBOLS and unicodedata.category(ch)[0] in "SP"


def clean_text(raw: str) -> str:
    """Strip URLs, invisible characters and symbols, then normalise whitespace.

    Tabs and newlines become spaces before collapsing so that word
    boundaries survive. Emoji fall under the symbol rule and are dropped.
    No case folding is applied.
    """
    text = URL_RE.sub("", raw)
    text = "".join(
        " " if ch in "\t\n" else ch
        for ch in text
        if not is_invisible(ch) and not is_removed_symbol(ch)
    )
    return " ".join(text.split())
