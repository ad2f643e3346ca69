"""Tokenization, sentence segmentation, bigrams and IDF statistics.

Everything here is a pure function of its inputs. Token normalization for
matching is lowercasing only.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from importlib import resources
from typing import Iterable, Sequence

PUNCT_CHARS = frozenset('.,!?;:"\'()[]')
TERMINATORS = frozenset(".!?")
_CLOSERS = frozenset('.!?"\')]')

_WS = re.compile(r"\S+")


@lru_cache(maxsize=None)
def load_stopwords(path: str | None = None) -> frozenset[str]:
    """Read a stopword file (one word per line, UTF-8); defaults to the bundled list."""
    if path is None:
        text = resources.files("grndsum.data").joinpath("stopwords.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


STOPWORDS = load_stopwords()


def is_punct(text: str) -> bool:
    return bool(text) and all(ch in PUNCT_CHARS for ch in text)


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int
    is_stopword: bool = False

    @property
    def norm(self) -> str:
        return self.text.lower()


@dataclass(frozen=True)
class Document:
    raw: str
    tokens: tuple[Token, ...] = ()
    sentences: tuple[tuple[int, int], ...] = field(default=())

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]

    @property
    def norms(self) -> list[str]:
        return [t.norm for t in self.tokens]

    def sentence_tokens(self, i: int) -> tuple[Token, ...]:
        a, b = self.sentences[i]
        return self.tokens[a:b]

    def sentence_text(self, i: int) -> str:
        toks = self.sentence_tokens(i)
        return self.raw[toks[0].char_start:toks[-1].char_end]


def tokenize(raw: str) -> Document:
    """Whitespace split, then peel punctuation characters off as single tokens."""
    tokens: list[Token] = []
    for m in _WS.finditer(raw):
        start = m.start()
        word = m.group()
        buf_start = None
        for i, ch in enumerate(word):
            if ch in PUNCT_CHARS:
                if buf_start is not None:
                    tokens.append(_make_token(raw, start + buf_start, start + i))
                    buf_start = None
                tokens.append(_make_token(raw, start + i, start + i + 1))
            elif buf_start is None:
                buf_start = i
        if buf_start is not None:
            tokens.append(_make_token(raw, start + buf_start, start + len(word)))
    return Document(raw=raw, tokens=tuple(tokens), sentences=())


def _make_token(raw: str, a: int, b: int) -> Token:
    text = raw[a:b]
    return Token(text, a, b, text.lower() in STOPWORDS)


def segment_sentences(doc: Document) -> Document:
    """Split after . ! ? (plus trailing closers) unless the next token starts lowercase."""
    toks = doc.tokens
    n = len(toks)
    spans: list[tuple[int, int]] = []
    start = 0
    k = 0
    while k < n:
        if toks[k].text in TERMINATORS:
            end = k + 1
            while end < n and toks[end].text in _CLOSERS:
                end += 1
            nxt = toks[end].text if end < n else ""
            if nxt and nxt[0].islower():
                k = end
                continue
            spans.append((start, end))
            start = end
            k = end
            continue
        k += 1
    if start < n:
        spans.append((start, n))
    return Document(raw=doc.raw, tokens=doc.tokens, sentences=tuple(spans))


def parse(raw: str) -> Document:
    return segment_sentences(tokenize(raw))


def document_from_tokens(texts: Sequence[str]) -> Document:
    """Build a segmented Document by space-joining token texts with punctuation attached."""
    return parse(detokenize(texts))


def detokenize(texts: Sequence[str]) -> str:
    out: list[str] = []
    for t in texts:
        if out and out[-1] not in ("(", "[") and not (is_punct(t) and t not in ("(", "[")):
            out.append(" ")
        out.append(t)
    return "".join(out)


@dataclass(frozen=True)
class Bigram:
    first: str
    second: str


def extract_bigrams(tokens: Sequence[Token], stopwords: frozenset[str] = STOPWORDS) -> dict[Bigram, int]:
    """Unique bigrams mapped to the slice-relative index of their first occurrence.

    Bigrams touching a punctuation-only token and bigrams made only of
    stopwords are skipped.
    """
    found: dict[Bigram, int] = {}
    norms = [t.text.lower() for t in tokens]
    for i in range(len(norms) - 1):
        a, b = norms[i], norms[i + 1]
        if is_punct(a) or is_punct(b):
            continue
        if a in stopwords and b in stopwords:
            continue
        bg = Bigram(a, b)
        if bg not in found:
            found[bg] = i
    return found


@dataclass(frozen=True)
class IdfTable:
    scores: dict[str, float]
    doc_count: int

    @cached_property
    def max_idf(self) -> float:
        return max(self.scores.values(), default=1.0)

    def idf(self, word: str) -> float:
        return self.scores.get(word.lower(), self.max_idf)

    def __getitem__(self, word: str) -> float:
        return self.idf(word)


def build_idf(corpus: Iterable[Document]) -> IdfTable:
    """Smoothed IDF: ln((1 + N) / (1 + df)) + 1."""
    docs = list(corpus)
    if not docs:
        raise ValueError("build_idf: empty corpus, IDF statistics are unusable")
    df: dict[str, int] = {}
    for doc in docs:
        for w in {t.norm for t in doc.tokens if not is_punct(t.text)}:
            df[w] = df.get(w, 0) + 1
    n = len(docs)
    scores = {w: math.log((1 + n) / (1 + c)) + 1.0 for w, c in sorted(df.items())}
    return IdfTable(scores=scores, doc_count=n)
