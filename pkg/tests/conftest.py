import time
from dataclasses import dataclass

import numpy as np
import pytest

from grndsum.aligner import AlignmentConfig, align_summary
from grndsum.chunker import ChunkingConfig, chunk
from grndsum.decode import GroundedSummary
from grndsum.model import ModelConfig
from grndsum.synthcorpus import SynthConfig, generate_corpus
from grndsum.training import GroundedModel, build_vocab, episode_tensors, train

CHUNKING = ChunkingConfig("sentences", 3, 3)


def checked(summary: GroundedSummary, n_chunks: int) -> GroundedSummary:
    """Every decode in the suite goes through here, so the grounding contract is asserted on all of them."""
    summary.check(n_chunks)
    assert all(s.tokens or s.text == "" for s in summary.segments)
    return summary


@dataclass
class SynthSetup:
    episodes: list
    chunks: list
    alignments: list
    model: GroundedModel
    tensors: list
    train_seconds: float = 0.0


def synth_setup(synth: SynthConfig, model_cfg: ModelConfig, steps: int = 0, seed: int = 0) -> SynthSetup:
    episodes = generate_corpus(synth)
    chunks = [chunk(e.transcript, CHUNKING) for e in episodes]
    alignments = [align_summary(c, e.transcript, e.summary, AlignmentConfig()) for e, c in zip(episodes, chunks)]
    vocab = build_vocab([d for e in episodes for d in (e.transcript, e.summary)])
    model = GroundedModel.create(vocab, model_cfg)
    tensors = [episode_tensors(vocab, e.transcript, e.summary, c, a)
               for e, c, a in zip(episodes, chunks, alignments)]
    t0 = time.perf_counter()
    if steps:
        train(model, tensors, steps=steps, seed=seed)
    return SynthSetup(episodes, chunks, alignments, model, tensors, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def overfit():
    """The 50-episode noisy synthetic corpus, trained for 2,000 steps."""
    return synth_setup(SynthConfig(seed=0, n_episodes=50, noise_rate=0.05), ModelConfig(learning_rate=1e-3),
                       steps=2000)


@pytest.fixture(scope="session")
def tiny():
    """A miniature untrained model on a few synthetic episodes."""
    return synth_setup(SynthConfig(seed=3, n_episodes=4, vocab_size=80, chunks_per_episode=4),
                       ModelConfig(d_model=16, attention_heads=2, ffn_dim=16, lowrank_r=4, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])
