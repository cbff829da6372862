"""Whitespace tokenizer with reserved specials and per-character digits.

Conventions the rest of the stack leans on:

* Special tokens occupy fixed ids 0..4: ``[PAD] [UNK] [CLS] [SEP]
  [MASK]``.  Generation and masking hardcode these ids.
* The ten ASCII digits are always present at ids 5..14, each digit a
  token of its own.  Any digit character inside a chunk is split out
  individually ("474858." -> 4 7 4 8 5 8 .), so numbers round-trip
  through small vocabularies and constrained decoding can whitelist
  exactly the digit ids.
* Raw newline characters are not encodable; ``encode`` replaces each
  with the separator token (default ``\\n``, i.e. the two characters
  backslash backslash followed by n) padded with spaces.  Corpora that
  want line structure must therefore spell the separator explicitly or
  contain real newlines — both encode identically.
* ``[CLS]``/``[SEP]`` insertion is opt-in via flags; nothing in this
  stack prepends ``[CLS]`` by default.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
DIGIT_TOKENS = tuple("0123456789")
NEWLINE_TOKEN = "\\" + "\\" + "n"  # literal two backslashes + n
_ASCII_DIGITS = frozenset("0123456789")


@dataclass
class Vocabulary:
    """Token/id tables with the reserved prefix described above."""

    token_to_id: dict[str, int]
    id_to_token: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.id_to_token:
            self.id_to_token = [None] * len(self.token_to_id)
            for tok, i in self.token_to_id.items():
                self.id_to_token[i] = tok
        for i, tok in enumerate(SPECIAL_TOKENS):
            if self.id_to_token[i] != tok:
                raise ValueError(
                    f"special token {tok} must sit at id {i}, found "
                    f"{self.id_to_token[i]!r}")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def digit_ids(self) -> list[int]:
        """Ids of the digit tokens '0'..'9' (in digit order)."""
        return [self.token_to_id[d] for d in DIGIT_TOKENS
                if d in self.token_to_id]

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def _split_chunk(chunk: str) -> list[str]:
    """Split one whitespace-delimited chunk, peeling digit characters
    into their own tokens."""
    if not any(c in _ASCII_DIGITS for c in chunk):
        return [chunk]
    out: list[str] = []
    buf: list[str] = []
    for ch in chunk:
        if ch in _ASCII_DIGITS:
            if buf:
                out.append("".join(buf))
                buf = []
            out.append(ch)
        else:
            buf.append(ch)
    if buf:
        out.append("".join(buf))
    return out


def split_text(text: str, newline_token: str = NEWLINE_TOKEN) -> list[str]:
    """Normalize newlines to the separator token and split into tokens."""
    text = text.replace("\n", f" {newline_token} ")
    tokens: list[str] = []
    for chunk in text.split():
        tokens.extend(_split_chunk(chunk))
    return tokens


def build_vocab(corpus: Iterable[str], max_size: int,
                newline_token: str = NEWLINE_TOKEN) -> Vocabulary:
    """Frequency-ranked vocabulary over a line corpus.

    Ids are assigned as: specials (0..4), digits (5..14), then corpus
    tokens by descending count with lexicographic tie-break, truncated
    to ``max_size``.
    """
    if max_size < 16:
        raise ValueError(f"max_size must be at least 16, got {max_size}")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(split_text(line, newline_token))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    reserved = set(SPECIAL_TOKENS) | set(DIGIT_TOKENS)
    ranked = sorted(
        (tok for tok in counts if tok not in reserved),
        key=lambda tok: (-counts[tok], tok))
    tokens = list(SPECIAL_TOKENS) + list(DIGIT_TOKENS) + ranked
    tokens = tokens[:max_size]
    return Vocabulary({tok: i for i, tok in enumerate(tokens)})


def encode(text: str, vocab: Vocabulary, add_cls: bool = False,
           add_sep: bool = False,
           newline_token: str = NEWLINE_TOKEN) -> list[int]:
    """Text to ids; unknown tokens map to ``[UNK]``."""
    ids = [vocab.id_of(tok) for tok in split_text(text, newline_token)]
    if add_cls:
        ids.insert(0, CLS_ID)
    if add_sep:
        ids.append(SEP_ID)
    return ids


def encode_with_word_boundaries(
        text: str, vocab: Vocabulary,
        newline_token: str = NEWLINE_TOKEN
) -> tuple[list[int], list[tuple[int, int]]]:
    """Encode and report, per whitespace word, the half-open token range
    it occupies (multi-token words arise from digit splitting).

    The ranges partition the id list in order — word-aware scoring
    relies on that.
    """
    text = text.replace("\n", f" {newline_token} ")
    ids: list[int] = []
    bounds: list[tuple[int, int]] = []
    for chunk in text.split():
        start = len(ids)
        for tok in _split_chunk(chunk):
            ids.append(vocab.id_of(tok))
        bounds.append((start, len(ids)))
    return ids, bounds


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Ids to text: specials are dropped, tokens joined by one space."""
    words = []
    for raw in ids:
        i = int(raw)
        if i < 0 or i >= vocab.size:
            raise ValueError(f"id {i} outside vocabulary of size {vocab.size}")
        if i < len(SPECIAL_TOKENS):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)


def save_vocab(vocab: Vocabulary, path) -> None:
    """One token per line; the line number is the id."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.id_to_token:
            fh.write(tok + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    if tokens[:5] != list(SPECIAL_TOKENS):
        raise ValueError(
            f"{path}: first five lines must be {' '.join(SPECIAL_TOKENS)}")
    return Vocabulary({tok: i for i, tok in enumerate(tokens)})
