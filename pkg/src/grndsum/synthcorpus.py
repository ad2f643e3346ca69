"""Seeded synthetic episodes with planted groundings.

Each chunk of a transcript draws its words from its own vocabulary band
(band ``c`` for chunk ``c``), so the grounding of a summary segment is
unambiguous unless noise says otherwise. Summary segment ``j`` copies the
first sentence of its planted chunk, with each word replaced by a random
vocabulary word at rate ``noise_rate``.

With ``transcript_pool = k > 0`` only ``k`` transcripts are drawn and episode
``e`` reuses transcript ``e mod k`` with its own planted order, so the same
gold prefix can continue to different chunks across episodes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .textproc import STOPWORDS, Document, parse

_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_episodes: int = 50
    chunks_per_episode: int = 4
    sentences_per_chunk: int = 3
    vocab_size: int = 400
    summary_segments: int = 4
    noise_rate: float = 0.0
    sentence_len: tuple[int, int] = (8, 10)
    zigzag_rate: float = 0.0
    transcript_pool: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError(f"synth.noise_rate must lie in [0, 1), got {self.noise_rate}")
        if not 0.0 <= self.zigzag_rate <= 1.0:
            raise ValueError(f"synth.zigzag_rate must lie in [0, 1], got {self.zigzag_rate}")
        if not 1 <= self.summary_segments <= self.chunks_per_episode:
            raise ValueError("synth.summary_segments must lie in [1, chunks_per_episode]")
        if self.transcript_pool < 0:
            raise ValueError(f"synth.transcript_pool must be >= 0, got {self.transcript_pool}")
        if self.n_episodes < 1 or self.sentences_per_chunk < 1:
            raise ValueError("synth.n_episodes and synth.sentences_per_chunk must be positive")
        lo, hi = self.sentence_len
        if not 2 <= lo <= hi:
            raise ValueError("synth.sentence_len must be (lo, hi) with 2 <= lo <= hi")
        if self.vocab_size // self.chunks_per_episode < hi:
            raise ValueError("synth.vocab_size too small: each chunk band needs at least sentence_len[1] words")
        object.__setattr__(self, "sentence_len", (int(lo), int(hi)))


@dataclass
class SynthEpisode:
    id: str
    transcript: Document
    summary: Document
    planted_chunks: list[int]
    planted_switch_labels: list[bool] = field(default_factory=list)

    @property
    def transcript_text(self) -> str:
        return self.transcript.raw

    @property
    def summary_text(self) -> str:
        return self.summary.raw


def word_list(n: int) -> list[str]:
    """n distinct capitalized pseudo-words (none of them stopwords), deterministic."""
    syll = [o + v for o, v in itertools.product(_ONSETS, _VOWELS)]
    out: list[str] = []
    for k in (2, 3):
        for combo in itertools.product(syll, repeat=k):
            w = "".join(combo)
            if w in STOPWORDS:
                continue
            out.append(w.capitalize())
            if len(out) == n:
                return out
    raise ValueError(f"cannot build {n} pseudo-words")


def planted_order(rng: np.random.Generator, cfg: SynthConfig) -> list[int]:
    m, n = cfg.chunks_per_episode, cfg.summary_segments
    if n == m:
        order = list(range(m))
    else:
        order = [0] + sorted(int(c) for c in rng.choice(np.arange(1, m), size=n - 1, replace=False))
    if n >= 3 and rng.random() < cfg.zigzag_rate:
        i = int(rng.integers(1, n - 1))
        order[i], order[i + 1] = order[i + 1], order[i]
    return order


def generate_corpus(cfg: SynthConfig) -> list[SynthEpisode]:
    rng = np.random.default_rng(cfg.seed)
    words = word_list(cfg.vocab_size)
    band = cfg.vocab_size // cfg.chunks_per_episode
    bands = [words[c * band:(c + 1) * band] for c in range(cfg.chunks_per_episode)]
    lo, hi = cfg.sentence_len
    width = len(str(cfg.n_episodes - 1))

    def draw_chunks() -> list[list[list[str]]]:
        chunks = []
        for c in range(cfg.chunks_per_episode):
            sents = []
            for _ in range(cfg.sentences_per_chunk):
                k = int(rng.integers(lo, hi + 1))
                sents.append([bands[c][i] for i in rng.choice(band, size=k, replace=False)])
            chunks.append(sents)
        return chunks

    pool = [draw_chunks() for _ in range(cfg.transcript_pool)]
    episodes = []
    for e in range(cfg.n_episodes):
        chunks = pool[e % len(pool)] if pool else draw_chunks()
        order = planted_order(rng, cfg)
        segments = []
        for c in order:
            seg = list(chunks[c][0])
            for i in range(len(seg)):
                if rng.random() < cfg.noise_rate:
                    seg[i] = words[int(rng.integers(cfg.vocab_size))]
            segments.append(seg)
        transcript = parse(" ".join(" ".join(s) + "." for ch in chunks for s in ch))
        summary = parse(" ".join(" ".join(s) + "." for s in segments))
        labels = [b for s in segments for b in [False] * len(s) + [True]]
        episodes.append(SynthEpisode(f"synth-{e:0{width}d}", transcript, summary, order, labels))
    return episodes
