"""Position-biased summary-to-chunk alignment and training labels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .chunker import Chunk
from .textproc import Bigram, Document, Token, extract_bigrams

FALLBACK_NONE = "none"
FALLBACK_FIRST = "first_chunk"
FALLBACK_PREVIOUS = "previous_chunk"


@dataclass(frozen=True)
class AlignmentConfig:
    gamma: float = 1.0
    min_shared_bigrams: int = 4
    importance_positive_fraction: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"alignment.gamma must lie in [0, 1], got {self.gamma}")
        if self.min_shared_bigrams < 0:
            raise ValueError("alignment.min_shared_bigrams must be non-negative")
        if not 0.0 < self.importance_positive_fraction <= 1.0:
            raise ValueError("alignment.importance_positive_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class BigramMatch:
    bigram: Bigram
    pos: int
    weight: float


@dataclass
class GroundingAlignment:
    gold_chunks: list[int]
    scores: list[float]
    fallbacks: list[str]
    switch_labels: list[list[bool]]
    importance_labels: list[bool]
    segments: list[tuple[int, int]] = field(default_factory=list)

    @property
    def flat_switch_labels(self) -> list[bool]:
        return [b for seg in self.switch_labels for b in seg]


def bigram_matches(chunk_tokens: Sequence[Token], segment_tokens: Sequence[Token], gamma: float) -> list[BigramMatch]:
    """Segment bigrams that occur in the chunk, with their decayed weights."""
    chunk_bigrams = extract_bigrams(chunk_tokens)
    size = len(chunk_tokens)
    out = []
    for bg in extract_bigrams(segment_tokens):
        pos = chunk_bigrams.get(bg)
        if pos is not None:
            out.append(BigramMatch(bg, pos, 1.0 - gamma * pos / size))
    return out


def coverage_score(chunk_tokens: Sequence[Token], segment_tokens: Sequence[Token], gamma: float) -> float:
    return _score(extract_bigrams(chunk_tokens), len(chunk_tokens), extract_bigrams(segment_tokens), gamma)


def _score(chunk_bigrams: dict[Bigram, int], size: int, seg_bigrams: dict[Bigram, int], gamma: float) -> float:
    if not seg_bigrams:
        return 0.0
    total = 0.0
    for bg in seg_bigrams:
        pos = chunk_bigrams.get(bg)
        if pos is not None:
            total += 1.0 - gamma * pos / size
    return total / len(seg_bigrams)


def shared_bigrams(a: Sequence[Token], b: Sequence[Token]) -> int:
    return len(extract_bigrams(a).keys() & extract_bigrams(b).keys())


def label_switch_points(summary: Document) -> list[list[bool]]:
    """Per sentence, True only at the sentence's final token."""
    return [[i == b - 1 for i in range(a, b)] for a, b in summary.sentences]


def label_importance(chunks: Sequence[Chunk], transcript: Document, summary: Document,
                     cfg: AlignmentConfig) -> list[bool]:
    if not chunks:
        raise ValueError("label_importance: no chunks")
    scores = [coverage_score(c.tokens(transcript), summary.tokens, cfg.gamma) for c in chunks]
    return top_fraction(scores, cfg.importance_positive_fraction)


def top_fraction(scores: Sequence[float], fraction: float) -> list[bool]:
    k = math.ceil(fraction * len(scores))
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    chosen = set(ranked[:k])
    return [i in chosen for i in range(len(scores))]


def align_summary(chunks: Sequence[Chunk], transcript: Document, summary: Document,
                  cfg: AlignmentConfig = AlignmentConfig()) -> GroundingAlignment:
    if not chunks:
        raise ValueError("align_summary: empty chunk list")
    chunk_toks = [c.tokens(transcript) for c in chunks]
    chunk_bgs = [extract_bigrams(ct) for ct in chunk_toks]
    gold: list[int] = []
    scores: list[float] = []
    fallbacks: list[str] = []
    segments = [(a, b) for a, b in summary.sentences if b > a]
    for a, b in segments:
        seg = extract_bigrams(summary.tokens[a:b])
        row = [_score(cb, len(ct), seg, cfg.gamma) for cb, ct in zip(chunk_bgs, chunk_toks)]
        best = max(range(len(row)), key=lambda i: (row[i], -i))
        if len(seg.keys() & chunk_bgs[best].keys()) >= cfg.min_shared_bigrams:
            gold.append(best)
            scores.append(row[best])
            fallbacks.append(FALLBACK_NONE)
        elif not gold:
            gold.append(0)
            scores.append(row[0])
            fallbacks.append(FALLBACK_FIRST)
        else:
            gold.append(gold[-1])
            scores.append(row[gold[-1]])
            fallbacks.append(FALLBACK_PREVIOUS)
    return GroundingAlignment(
        gold_chunks=gold,
        scores=scores,
        fallbacks=fallbacks,
        switch_labels=label_switch_points(summary),
        importance_labels=label_importance(chunks, transcript, summary, cfg),
        segments=segments,
    )
