"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed immediately (visible with ``-s``) and repeated in the
terminal summary by conftest.py.
"""
import itertools
import json
import time
from fractions import Fraction
from html.parser import HTMLParser

import numpy as np

from grndsum.aligner import FALLBACK_NONE, AlignmentConfig, align_summary, coverage_score
from grndsum.chunker import ChunkingConfig, chunk
from grndsum.cli import main
from grndsum.corpusio import GroundedRecord
from grndsum.datafilter import FilterConfig, classify_unit, filter_summary_sentences
from grndsum.decode import DecodeConfig, generate, predict_selection
from grndsum.evalkit import backward_transitions, lcs_length, ngram_reuse, rouge_l, rouge_n, selection_metrics
from grndsum.model import EpisodeTensors, ModelConfig, episode_forward, init_params, regularizer_value
from grndsum.report import render_episode_html
from grndsum.synthcorpus import SynthConfig, word_list
from grndsum.textproc import IdfTable, parse, tokenize

from conftest import checked, synth_setup
from gradcheck_util import check_op, check_params
from test_datafilter import _accept
from test_diffkernel import OP_CASES

RESULTS: dict[int, str] = {}
DECODED: list = []  # (episode id, summary, transcript, chunks) for the anchor check


def report(n, title, ok, detail=""):
    line = f"acceptance {n:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    RESULTS[n] = line
    print(line)
    assert ok, line


# 1 -------------------------------------------------------------------------

WORDS = word_list(20)


def brute_alignment(chunk_sents, seg):
    """Exact-fraction argmax of the position-biased coverage score, earliest chunk on ties."""
    seg_bigrams = set(zip(seg, seg[1:]))
    best, best_score, best_shared = None, None, 0
    for c, words in enumerate(chunk_sents):
        size = len(words) + 1  # the closing period counts towards the chunk length
        total = Fraction(0)
        shared = 0
        for bg in seg_bigrams:
            hits = [i for i in range(len(words) - 1) if (words[i], words[i + 1]) == bg]
            if hits:
                shared += 1
                total += 1 - Fraction(hits[0], size)
        score = total / len(seg_bigrams) if seg_bigrams else Fraction(0)
        if best is None or score > best_score:
            best, best_score, best_shared = c, score, shared
    return best, best_shared


def random_instance(rng):
    m = int(rng.integers(1, 9))
    chunk_sents = [list(rng.choice(WORDS, size=int(rng.integers(4, 13)))) for _ in range(m)]
    segs = []
    for _ in range(int(rng.integers(1, 7))):
        if rng.random() < 0.8:
            src = chunk_sents[int(rng.integers(m))]
            a = int(rng.integers(0, max(1, len(src) - 4)))
            seg = list(src[a:a + int(rng.integers(5, 10))])
            seg = [w if rng.random() > 0.1 else str(rng.choice(WORDS)) for w in seg]
        else:
            seg = list(rng.choice(WORDS, size=int(rng.integers(2, 9))))
        segs.append(seg)
    return chunk_sents, segs


def test_acceptance_1_alignment_oracle():
    rng = np.random.default_rng(2024)
    agree = total = fallbacks = 0
    t0 = time.perf_counter()
    for _ in range(1000):
        chunk_sents, segs = random_instance(rng)
        transcript = parse(" ".join(" ".join(s) + "." for s in chunk_sents))
        summary = parse(" ".join(" ".join(s) + "." for s in segs))
        chunks = chunk(transcript, ChunkingConfig("sentences", 1, 1))
        al = align_summary(chunks, transcript, summary, AlignmentConfig())
        for seg, got, fb in zip(segs, al.gold_chunks, al.fallbacks):
            want, shared = brute_alignment(chunk_sents, seg)
            if shared < 4:
                fallbacks += 1
                agree += fb != FALLBACK_NONE
                total += 1
                continue
            total += 1
            agree += fb == FALLBACK_NONE and got == want
    elapsed = time.perf_counter() - t0
    report(1, "alignment matches exhaustive argmax", agree == total and elapsed < 10,
           f"{agree}/{total} segments agree, {fallbacks} fallbacks, {elapsed:.1f}s")


# 2 -------------------------------------------------------------------------

def test_acceptance_2_coverage_hand_cases():
    chunk_toks = tokenize("the cat sat down").tokens
    seg = tokenize("the cat sat . dog ran").tokens  # bigrams (the,cat) (cat,sat) (dog,ran)
    g1, g0 = coverage_score(chunk_toks, seg, 1.0), coverage_score(chunk_toks, seg, 0.0)
    report(2, "coverage worked example", abs(g1 - 7 / 12) <= 1e-12 and abs(g0 - 2 / 3) <= 1e-12,
           f"gamma=1 -> {g1!r}, gamma=0 -> {g0!r}")


# 3 -------------------------------------------------------------------------

def quarter_rows(m):
    """All distributions over m chunks with probabilities in steps of 1/4."""
    return [np.array(c) / 4 for c in itertools.product(range(5), repeat=m) if sum(c) == 4]


def test_acceptance_3_regularizer_suite():
    monotone_cases = worst = 0
    for m in (2, 3, 4):
        rows = quarter_rows(m)
        cdfs = [np.cumsum(r) for r in rows]
        for n in (2, 3):
            for idx in itertools.product(range(len(rows)), repeat=n):
                if all(np.all(cdfs[b] <= cdfs[a]) for a, b in zip(idx, idx[1:])):
                    monotone_cases += 1
                    worst = max(worst, regularizer_value(np.stack([rows[i] for i in idx])))
    hand = regularizer_value(np.array([[0.0, 1.0], [1.0, 0.0]]))
    rng = np.random.default_rng(3)
    bounded = True
    for _ in range(10000):
        m, n = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        p = rng.dirichlet(np.full(m, 0.3), size=n)
        r = regularizer_value(p)
        bounded &= 0.0 <= r <= m
    ok = worst == 0.0 and hand == 0.5 and bounded
    report(3, "regularizer zero on monotone grid, 0.5 on hand case, bounded on random inputs", ok,
           f"{monotone_cases} monotone sequences, max R {worst}, hand {hand}, bounded {bounded}")


# 4 -------------------------------------------------------------------------

GC_CFG = ModelConfig(vocab_size=12, d_model=8, attention_heads=2, ffn_dim=8, lowrank_r=2, max_positions=16,
                     alpha=0.7, seed=3)
GC_EPISODE = EpisodeTensors(chunk_ids=[[4, 5, 6, 7], [8, 9, 10]], summary_ids=[8, 9, 11, 4, 5, 11],
                            segments=[(0, 3), (3, 6)], gold_chunks=[1, 0],
                            switch_labels=[False, False, True, False, False, True], importance_labels=[False, True])


def test_acceptance_4_gradient_checks():
    op_errors = {name: check_op(op, *[a.copy() for a in arrays]) for name, op, arrays in OP_CASES}
    worst_op = max(op_errors, key=op_errors.get)
    P = init_params(GC_CFG)
    full, _ = check_params(lambda: episode_forward(P, GC_CFG, GC_EPISODE, 2, 3).total, P)
    ok = op_errors[worst_op] < 1e-6 and full < 1e-4
    report(4, "finite differences agree with backward", ok,
           f"{len(op_errors)} ops, worst {worst_op} {op_errors[worst_op]:.1e}; full loss {full:.1e}")


# 5 -------------------------------------------------------------------------

def words(tokens):
    return [t.lower() for t in tokens if t not in ".,!?;:"]


def test_acceptance_5_overfit(overfit):
    pred_c, gold_c, pred_s, gold_s = [], [], [], []
    for ep in overfit.tensors:
        pr = predict_selection(overfit.model, ep)
        pred_c.append(pr.chunks)
        gold_c.append(ep.gold_chunks)
        pred_s.append(pr.switch)
        gold_s.append(ep.switch_labels)
    stats = selection_metrics(pred_c, gold_c, pred_s, gold_s)
    t0 = time.perf_counter()
    rouge = []
    for e, ch in zip(overfit.episodes, overfit.chunks):
        out = checked(generate(overfit.model, e.transcript, ch), len(ch))
        DECODED.append((e.id, out, e.transcript, ch))
        cand = [t for s in out.segments for t in s.tokens]
        rouge.append(rouge_n(words(cand), words(e.summary.texts), 1).f1)
    wall = overfit.train_seconds + time.perf_counter() - t0
    r1 = float(np.mean(rouge))
    ok = stats.chunk_accuracy >= 0.95 and stats.switch_f1 >= 0.90 and r1 >= 0.90 and wall < 900
    report(5, "end-to-end overfit on 50 noisy synthetic episodes", ok,
           f"chunk acc {stats.chunk_accuracy:.3f}, switch F1 {stats.switch_f1:.3f}, ROUGE-1 F {r1:.3f}, "
           f"{wall:.0f}s")


# 6 -------------------------------------------------------------------------

ZIGZAG = SynthConfig(seed=0, n_episodes=40, transcript_pool=8, zigzag_rate=0.5, summary_segments=3, noise_rate=0.0)


def mean_backward(alpha):
    setup = synth_setup(ZIGZAG, ModelConfig(learning_rate=1e-3, alpha=alpha, seed=0), steps=1500, seed=0)
    back = []
    for e, ch in zip(setup.episodes, setup.chunks):
        out = checked(generate(setup.model, e.transcript, ch), len(ch))
        DECODED.append((f"{e.id}-a{alpha}", out, e.transcript, ch))
        back.append(backward_transitions(out.chunk_sequence))
    gold = np.mean([backward_transitions(a.gold_chunks) for a in setup.alignments])
    return float(np.mean(back)), float(gold), len(back)


def test_acceptance_6_regularizer_effect():
    off, gold, n = mean_backward(0.0)
    on, _, _ = mean_backward(1.0)
    report(6, "alpha=1 decodes fewer backward transitions than alpha=0", on < off,
           f"{n} episodes, mean backward transitions alpha=0 {off:.3f}, alpha=1 {on:.3f}, gold {gold:.3f}")


# 7 -------------------------------------------------------------------------

def test_acceptance_7_filter_boundaries():
    cfg = FilterConfig()
    length = classify_unit("a" * 25, cfg) is None and classify_unit("b" * 26, cfg) == "overlong"
    idf = IdfTable(scores={"keep": 10.0, "drop": 9.99}, doc_count=10)
    doc, _ = filter_summary_sentences(parse("Keep. Drop."), idf)
    salience = doc.raw == "Keep."
    tokens = _accept(9, 3) == (False, "too_short") and _accept(10, 3) == (True, None)
    bigrams = _accept(10, 2) == (False, "weak_grounding")
    report(7, "filter boundary cases", length and salience and tokens and bigrams,
           f"token length {length}, salience {salience}, summary length {tokens}, shared bigrams {bigrams}")


# 8 -------------------------------------------------------------------------

def brute_rouge_n(cand, ref, n):
    cg = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    rg = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
    pool, overlap = list(rg), 0
    for g in cg:
        if g in pool:
            pool.remove(g)
            overlap += 1
    return overlap, len(cg), len(rg)


def is_subsequence(sub, seq):
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def brute_lcs(a, b):
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        if len(sub) > best and is_subsequence(sub, b):
            best = len(sub)
    return best


def prf(overlap, nc, nr):
    p = overlap / nc if nc else 0.0
    r = overlap / nr if nr else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def brute_reuse(summary, sources, n):
    grams = [summary[i:i + n] for i in range(len(summary) - n + 1)]
    if not grams:
        return 0.0
    hit = sum(any(src[j:j + n] == g for src in sources for j in range(len(src) - n + 1)) for g in grams)
    return 100.0 * hit / len(grams)


def test_acceptance_8_metric_oracles():
    rng = np.random.default_rng(8)
    vocab = list("abcdef")
    worst = 0.0
    for _ in range(1000):
        a = list(rng.choice(vocab, size=int(rng.integers(0, 11))))
        b = list(rng.choice(vocab, size=int(rng.integers(0, 11))))
        for n in (1, 2):
            got = rouge_n(a, b, n)
            worst = max(worst, *np.abs(np.subtract((got.precision, got.recall, got.f1), prf(*brute_rouge_n(a, b, n)))))
        lcs = brute_lcs(a, b)
        got = rouge_l(a, b)
        worst = max(worst, abs(lcs_length(a, b) - lcs),
                    *np.abs(np.subtract((got.precision, got.recall, got.f1), prf(lcs, len(a), len(b)))))
        cut = int(rng.integers(0, len(b) + 1))
        for n in (1, 2, 3):
            worst = max(worst, abs(ngram_reuse(a, [b[:cut], b[cut:]], n) - brute_reuse(a, [b[:cut], b[cut:]], n)))
    report(8, "ROUGE-1/2/L and n-gram reuse match brute force", worst <= 1e-12, f"max deviation {worst:.1e}")


# 9 -------------------------------------------------------------------------

class Anchors(HTMLParser):
    def __init__(self, text):
        super().__init__()
        self.ids, self.hrefs = set(), []
        self.feed(text)

    def handle_starttag(self, tag, attrs):
        a = dict(attrs)
        if "id" in a:
            self.ids.add(a["id"])
        if tag == "a" and a.get("href", "").startswith("#"):
            self.hrefs.append(a["href"][1:])


def test_acceptance_9_grounding_contract(tiny):
    decoded = list(DECODED)
    for seed in range(5):
        setup = synth_setup(SynthConfig(seed=10 + seed, n_episodes=3, vocab_size=80),
                            ModelConfig(d_model=16, attention_heads=2, ffn_dim=16, lowrank_r=4, seed=seed))
        for e, ch in zip(setup.episodes, setup.chunks):
            for tau in (0.2, 0.5, 0.9):
                out = checked(generate(setup.model, e.transcript, ch,
                                       DecodeConfig(beam_size=2, switch_threshold=tau, max_summary_tokens=20)), len(ch))
                decoded.append((f"{e.id}-s{seed}-t{tau}", out, e.transcript, ch))
    broken = links = 0
    for eid, out, transcript, ch in decoded:
        try:
            out.check(len(ch))
        except AssertionError:
            broken += 1
            continue
        rec = GroundedRecord(eid, tuple({"text": s.text, "chunk": s.chunk_index, "sent_range": list(s.sent_range)}
                                        for s in out.segments))
        page = Anchors(render_episode_html(rec, transcript, ch))
        links += len(page.hrefs)
        broken += len(page.hrefs) != len(out.segments) or not set(page.hrefs) <= page.ids
    report(9, "grounding contract and resolvable anchors", broken == 0 and links > 0,
           f"{len(decoded)} decodes, {links} segment links, {broken} violations")


# 10 ------------------------------------------------------------------------

PIPELINE = ["--synth.n_episodes", "6", "--synth.seed", "7", "--synth.noise_rate", "0.05",
            "--model.d_model", "16", "--model.ffn_dim", "16", "--model.attention_heads", "2",
            "--model.lowrank_r", "4", "--train.steps", "60", "--train.pretrain_steps", "20",
            "--decode.max_summary_tokens", "40", "--chunking.window", "3", "--chunking.stride", "3"]


def test_acceptance_10_determinism(tmp_path):
    outputs = []
    for run in ("first", "second"):
        wd = tmp_path / run
        for stage in ("synth", "filter", "align", "pretrain", "train", "generate", "eval"):
            assert main([stage, "--workdir", str(wd), *PIPELINE]) == 0
        outputs.append((wd / "metrics.json").read_bytes())
    n_eps = json.loads(outputs[0])["n_episodes"]
    report(10, "repeated pipeline gives byte-identical metrics", outputs[0] == outputs[1] and n_eps > 0,
           f"{len(outputs[0])} bytes, {n_eps} episodes")
