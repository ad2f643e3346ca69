"""Sliding-window transcript chunking over whole sentences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from .textproc import Document


@dataclass(frozen=True)
class ChunkingConfig:
    unit: Literal["tokens", "sentences"] = "sentences"
    window: int = 3
    stride: int = 3

    def __post_init__(self):
        if self.unit not in ("tokens", "sentences"):
            raise ValueError(f"chunking.unit must be 'tokens' or 'sentences', got {self.unit!r}")
        if self.window < 1 or self.stride < 1:
            raise ValueError(f"chunking.window and chunking.stride must be positive, got {self.window}/{self.stride}")
        if self.stride > self.window:
            raise ValueError(f"chunking.stride ({self.stride}) > chunking.window ({self.window}) would skip content")

    @property
    def overlapping(self) -> bool:
        return self.stride < self.window


@dataclass(frozen=True)
class Chunk:
    index: int
    sentence_range: tuple[int, int]
    token_range: tuple[int, int]

    @property
    def token_count(self) -> int:
        return self.token_range[1] - self.token_range[0]

    def tokens(self, doc: Document):
        return doc.tokens[self.token_range[0]:self.token_range[1]]


def chunk(doc: Document, cfg: ChunkingConfig) -> list[Chunk]:
    sents = doc.sentences
    if not sents:
        raise ValueError("chunk: document has no sentences")
    n = len(sents)
    ranges: list[tuple[int, int]] = []
    if cfg.unit == "sentences":
        start = 0
        while start < n:
            end = min(start + cfg.window, n)
            ranges.append((start, end))
            if end == n:
                break
            start += cfg.stride
    else:
        start = 0
        while True:
            end = start + 1
            used = sents[start][1] - sents[start][0]
            while end < n:
                extra = sents[end][1] - sents[end][0]
                if used + extra > cfg.window:
                    break
                used += extra
                end += 1
            ranges.append((start, end))
            if end == n:
                break
            target = sents[start][0] + cfg.stride
            nxt = start + 1
            while nxt < end and sents[nxt][0] < target:
                nxt += 1
            # never jump past the current chunk's end, or sentences would be skipped
            start = nxt
    return [
        Chunk(i, (a, b), (sents[a][0], sents[b - 1][1]))
        for i, (a, b) in enumerate(ranges)
    ]
