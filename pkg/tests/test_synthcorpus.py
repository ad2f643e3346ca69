import pytest

from grndsum.aligner import AlignmentConfig, align_summary
from grndsum.chunker import chunk
from grndsum.synthcorpus import SynthConfig, generate_corpus, word_list
from grndsum.textproc import STOPWORDS

from conftest import CHUNKING


def recovery(cfg):
    hits = total = 0
    for e in generate_corpus(cfg):
        al = align_summary(chunk(e.transcript, CHUNKING), e.transcript, e.summary, AlignmentConfig())
        hits += sum(a == b for a, b in zip(al.gold_chunks, e.planted_chunks))
        total += len(e.planted_chunks)
    return hits / total


def test_deterministic():
    a, b = generate_corpus(SynthConfig(seed=4, n_episodes=3)), generate_corpus(SynthConfig(seed=4, n_episodes=3))
    assert [e.summary_text for e in a] == [e.summary_text for e in b]
    assert [e.transcript_text for e in a] == [e.transcript_text for e in b]
    assert a[0].transcript_text != generate_corpus(SynthConfig(seed=5, n_episodes=1))[0].transcript_text


def test_full_coverage_order():
    for e in generate_corpus(SynthConfig(n_episodes=5)):
        assert e.planted_chunks == [0, 1, 2, 3]


def test_partial_coverage_starts_at_zero_and_increases():
    for e in generate_corpus(SynthConfig(n_episodes=20, summary_segments=3)):
        assert e.planted_chunks[0] == 0 and e.planted_chunks == sorted(e.planted_chunks)


def test_zigzag_produces_backward_moves():
    eps = generate_corpus(SynthConfig(n_episodes=30, summary_segments=3, zigzag_rate=1.0))
    assert all(any(b < a for a, b in zip(e.planted_chunks, e.planted_chunks[1:])) for e in eps)


def test_shape_and_labels():
    cfg = SynthConfig(n_episodes=2)
    e = generate_corpus(cfg)[0]
    assert len(e.transcript.sentences) == cfg.chunks_per_episode * cfg.sentences_per_chunk
    assert len(e.planted_switch_labels) == len(e.summary.tokens)
    assert sum(e.planted_switch_labels) == cfg.summary_segments


def test_ids_are_sortable():
    ids = [e.id for e in generate_corpus(SynthConfig(n_episodes=12))]
    assert ids == sorted(ids) and ids[0] == "synth-00"


def test_transcript_pool_reuse():
    eps = generate_corpus(SynthConfig(n_episodes=6, transcript_pool=2, summary_segments=3))
    assert eps[0].transcript_text == eps[2].transcript_text == eps[4].transcript_text
    assert eps[0].transcript_text != eps[1].transcript_text


def test_word_list():
    words = word_list(500)
    assert len(set(words)) == 500 and not {x.lower() for x in words} & STOPWORDS


@pytest.mark.parametrize("kw", [dict(noise_rate=1.0), dict(zigzag_rate=2.0), dict(summary_segments=5),
                                dict(transcript_pool=-1), dict(n_episodes=0), dict(sentence_len=(5, 3)),
                                dict(vocab_size=20)])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def test_alignment_recovers_noise_free_plants():
    assert recovery(SynthConfig(seed=1, n_episodes=30)) == 1.0


@pytest.mark.parametrize("noise", [0.05, 0.1])
def test_alignment_recovers_noisy_plants(noise):
    assert recovery(SynthConfig(seed=2, n_episodes=40, noise_rate=noise)) >= 0.95
