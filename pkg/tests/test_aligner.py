import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grndsum.aligner import (
    FALLBACK_FIRST,
    FALLBACK_NONE,
    FALLBACK_PREVIOUS,
    AlignmentConfig,
    align_summary,
    bigram_matches,
    coverage_score,
    label_importance,
    label_switch_points,
    top_fraction,
)
from grndsum.chunker import ChunkingConfig, chunk
from grndsum.textproc import parse, tokenize

ONE_SENTENCE_CHUNKS = ChunkingConfig("sentences", 1, 1)


def toks(text):
    return tokenize(text).tokens


def test_coverage_worked_example():
    chunk_toks = toks("the cat sat down")
    seg = toks("the cat sat dog ran")
    # segment bigrams: (the,cat) (cat,sat) (sat,dog) (dog,ran); only the first two are in the chunk
    assert coverage_score(chunk_toks, seg, 1.0) == pytest.approx((1 + 0.75) / 4, abs=1e-12)


def test_coverage_weights():
    matches = bigram_matches(toks("the cat sat down"), toks("the cat sat"), 1.0)
    assert [(m.pos, m.weight) for m in matches] == [(0, 1.0), (1, 0.75)]


def test_coverage_no_overlap():
    assert coverage_score(toks("alpha beta gamma"), toks("delta epsilon zeta"), 1.0) == 0.0


def test_coverage_empty_segment():
    assert coverage_score(toks("alpha beta"), toks("the"), 0.5) == 0.0


seqs = st.lists(st.sampled_from("a b c d e f the of".split()), max_size=12).map(" ".join)


@given(seqs, seqs, st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=300, deadline=None)
def test_coverage_bounds_and_gamma_monotone(c, s, g1, g2):
    lo, hi = sorted((g1, g2))
    a = coverage_score(toks(c), toks(s), lo)
    b = coverage_score(toks(c), toks(s), hi)
    assert 0.0 <= b <= a + 1e-15 <= 1.0 + 1e-15


def test_gamma_out_of_range():
    with pytest.raises(ValueError, match="gamma"):
        AlignmentConfig(gamma=1.5)


def _align(transcript, summary, **kw):
    doc = parse(transcript)
    chunks = chunk(doc, ONE_SENTENCE_CHUNKS)
    return align_summary(chunks, doc, parse(summary), AlignmentConfig(**kw))


def test_tie_goes_to_earlier_chunk():
    s = "Aa Bb Cc Dd Ee Ff."
    al = _align(f"{s} Zz Yy Xx Ww. {s}", s)
    assert al.gold_chunks == [0] and al.fallbacks == [FALLBACK_NONE]


def test_first_segment_fallback():
    al = _align("Qq Rr. Aa Bb Cc Dd. Ss Tt.", "Aa Bb Cc Dd Ee.")
    # three shared bigrams with chunk 1 is below the threshold of four
    assert al.gold_chunks == [0] and al.fallbacks == [FALLBACK_FIRST]


def test_later_segment_reuses_previous_chunk():
    al = _align("Qq Rr. Ss Tt. Uu Vv. Aa Bb Cc Dd Ee Ff.", "Aa Bb Cc Dd Ee Ff. Pp Oo Ii.")
    assert al.gold_chunks == [3, 3]
    assert al.fallbacks == [FALLBACK_NONE, FALLBACK_PREVIOUS]


def test_alignment_emits_labels():
    al = _align("Aa Bb Cc Dd Ee. Ff Gg Hh Ii Jj.", "Ff Gg Hh Ii Jj. Aa Bb Cc Dd Ee.")
    assert al.gold_chunks == [1, 0]
    assert al.switch_labels == [[False] * 5 + [True], [False] * 5 + [True]]
    assert sum(al.importance_labels) == 1
    assert al.segments == [(0, 6), (6, 12)]


def test_empty_chunk_list():
    with pytest.raises(ValueError):
        align_summary([], parse("a."), parse("a."))


def test_switch_labels():
    assert label_switch_points(parse("Hi. Bye.")) == [[False, True], [False, True]]
    assert label_switch_points(parse("One two three")) == [[False, False, True]]
    assert label_switch_points(parse("")) == []


@pytest.mark.parametrize("m,positives", [(8, 2), (1, 1), (4, 1), (5, 2)])
def test_importance_count(m, positives):
    assert sum(top_fraction([0.0] * m, 0.25)) == positives


def test_importance_ranking_example():
    assert top_fraction([0.9, 0.9, 0.1, 0.0], 0.25) == [True, False, False, False]


def test_label_importance_prefers_covering_chunk():
    doc = parse("Qq Rr Ss. Aa Bb Cc Dd. Tt Uu Vv.")
    chunks = chunk(doc, ONE_SENTENCE_CHUNKS)
    assert label_importance(chunks, doc, parse("Aa Bb Cc Dd."), AlignmentConfig()) == [False, True, False]
