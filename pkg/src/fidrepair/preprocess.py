"""Deterministic word-level tokenization with byte fallback, and segmentation."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import SPECIAL_TOKENS

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
NODE = "<NODE>"
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
NODE_ID = 8
RESERVED = (PAD, BOS, EOS, UNK, *SPECIAL_TOKENS, NODE)
BYTE_OFFSET = len(RESERVED)
_SPACE_BYTE = 0x20

PROVENANCES = ("code", "ast", "knowledge")
SEGMENT_KINDS = ("code", "ast", "cwe_name", "example_pair")

_OPERATORS = (
    ">>=", "<<=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=",
    "&&", "||", "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=", "::", "##",
)
_TOKEN_RE = re.compile(
    "|".join(
        [re.escape(t) for t in (*SPECIAL_TOKENS, NODE)]
        + [r"\w+"]
        + [re.escape(op) for op in _OPERATORS]
        + [r"\S"]
    )
)
_BASE_SYMBOLS = [chr(c) for c in range(0x21, 0x7F) if not chr(c).isalnum() and chr(c) != "_"]


def pre_tokenize(text: str) -> list[str]:
    """Split text into surface tokens on whitespace and punctuation classes."""
    return _TOKEN_RE.findall(text)


def _byte_token(b: int) -> str:
    return f"<0x{b:02X}>"


class Vocabulary:
    """Frequency-ranked token list; the position of a token is its id.

    Layout: ids 0-3 pad/bos/eos/unk, 4-7 the localization and modification
    tokens, 8 the AST node boundary, then 256 byte-fallback tokens, the ASCII
    punctuation set and finally corpus words by descending frequency.
    """

    def __init__(self, words: Iterable[str] = ()):
        self.tokens: list[str] = [*RESERVED, *(_byte_token(b) for b in range(256))]
        self.index: dict[str, int] = {}
        for t in self.tokens:
            self.index[t] = len(self.index)
        for w in (*_BASE_SYMBOLS, *words):
            self.add(w)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def is_byte(self, token_id: int) -> bool:
        return BYTE_OFFSET <= token_id < BYTE_OFFSET + 256

    @classmethod
    def build(cls, texts: Iterable[str], max_size: int | None = None, min_freq: int = 1) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for text in texts:
            counts.update(pre_tokenize(text))
        vocab = cls()
        ranked = sorted(
            (w for w, c in counts.items() if c >= min_freq and w not in vocab),
            key=lambda w: (-counts[w], w),
        )
        for w in ranked:
            if max_size is not None and len(vocab) >= max_size:
                break
            vocab.add(w)
        return vocab

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = fh.read().split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        expected = [*RESERVED, *(_byte_token(b) for b in range(256))]
        if tokens[: len(expected)] != expected:
            raise ValueError(f"{path}: reserved token block does not match the expected layout")
        return cls(tokens[len(expected):])


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...] = ()
    provenance: str = "code"

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class Segment:
    tokens: tuple[int, ...] = ()
    index: int = 0
    kind: str = "code"

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")

    def __len__(self):
        return len(self.tokens)


def tokenize(text: str, vocab: Vocabulary, provenance: str = "code") -> TokenSeq:
    ids: list[int] = []
    prev_was_bytes = False
    for piece in pre_tokenize(text):
        tid = vocab.index.get(piece)
        if tid is not None:
            ids.append(tid)
            prev_was_bytes = False
            continue
        if prev_was_bytes:
            # keep adjacent fallback words apart after detokenization
            ids.append(BYTE_OFFSET + _SPACE_BYTE)
        ids.extend(BYTE_OFFSET + b for b in piece.encode("utf-8"))
        prev_was_bytes = True
    return TokenSeq(ids, provenance)


def detokenize(t: TokenSeq | Sequence[int], vocab: Vocabulary) -> str:
    ids = t.tokens if isinstance(t, TokenSeq) else t
    pieces: list[str] = []
    buf = bytearray()
    for tid in ids:
        if vocab.is_byte(tid):
            buf.append(tid - BYTE_OFFSET)
            continue
        if buf:
            pieces.append(buf.decode("utf-8", errors="replace"))
            buf.clear()
        pieces.append(vocab.tokens[tid] if 0 <= tid < len(vocab) else UNK)
    if buf:
        pieces.append(buf.decode("utf-8", errors="replace"))
    return " ".join(pieces)


def segment_tokens(t: TokenSeq | Sequence[int], L: int, kind: str = "code") -> list[Segment]:
    """Cut a token sequence into disjoint windows of at most ``L`` tokens.

    An empty sequence still yields one (empty) segment.
    """
    if L < 1:
        raise ValueError(f"segment length must be >= 1, got {L}")
    ids = t.tokens if isinstance(t, TokenSeq) else tuple(t)
    if not ids:
        return [Segment((), 0, kind)]
    return [Segment(ids[i : i + L], n, kind) for n, i in enumerate(range(0, len(ids), L))]


class CodeTokenizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` builds the vocabulary, ``transform`` maps texts to id lists."""

    def __init__(self, max_vocab: int | None = None, min_freq: int = 1):
        self.max_vocab = max_vocab
        self.min_freq = min_freq

    def fit(self, X, y=None):
        self.vocab_ = Vocabulary.build(X, max_size=self.max_vocab, min_freq=self.min_freq)
        return self

    def transform(self, X) -> list[TokenSeq]:
        check_is_fitted(self, "vocab_")
        return [tokenize(text, self.vocab_) for text in X]

    def inverse_transform(self, X) -> list[str]:
        check_is_fitted(self, "vocab_")
        return [detokenize(t, self.vocab_) for t in X]
