"""Corpus generator contracts: determinism, formats, and occupancy
rates (counting oracles computed inline)."""

import numpy as np
import pytest

from mlmgen.corpora import (CorpusSpec, IDIOM, MENTION_QUESTION,
                            NEEDLE_ANSWER_PREFIX, NEEDLE_FACT_PREFIX,
                            NEEDLE_PREAMBLE, NEEDLE_QUESTION, SEP_TEXT,
                            SOURCE_WORDS, WORD_MAPPING, make_corpus)
from mlmgen.tokenizer import NEWLINE_TOKEN, split_text


def test_spec_validation():
    with pytest.raises(ValueError):
        CorpusSpec(kind="prose", size=10)
    with pytest.raises(ValueError):
        CorpusSpec(kind="grammar_sentences", size=0)
    with pytest.raises(ValueError):
        CorpusSpec(kind="idiom_injected", size=10, idiom_rate=1.5)


def test_same_spec_same_lines():
    spec = CorpusSpec(kind="grammar_sentences", size=50, seed=9, qa_rate=0.4)
    assert make_corpus(spec) == make_corpus(spec)
    other = make_corpus(CorpusSpec(kind="grammar_sentences", size=50,
                                   seed=10, qa_rate=0.4))
    assert other != make_corpus(spec)


def test_idiom_rate_within_band_over_10k_lines():
    lines = make_corpus(CorpusSpec(kind="idiom_injected", size=10_000,
                                   seed=3, idiom_rate=0.1))
    hits = sum(1 for l in lines if IDIOM in l)
    assert 0.08 <= hits / len(lines) <= 0.12


def test_idiom_words_are_exclusive_to_the_idiom():
    lines = make_corpus(CorpusSpec(kind="idiom_injected", size=2000, seed=4))
    for line in lines:
        for w in IDIOM.split():
            if w in line.split():
                assert IDIOM in line
    # every line ends with a "went" sentence
    assert all(" went " in l for l in lines)


def test_parallel_pairs_are_token_wise_mapping():
    lines = make_corpus(CorpusSpec(kind="parallel_pairs", size=300, seed=5))
    stacked = 0
    for line in lines:
        segments = line.split(SEP_TEXT)
        assert len(segments) in (1, 2)
        stacked += len(segments) == 2
        for seg in segments:
            assert seg.startswith("SRC: ") and " TGT: " in seg
            src, tgt = seg[5:].split(" TGT: ")
            s, t = src.split(), tgt.split()
            assert len(s) == len(t)
            assert t == [WORD_MAPPING[w] for w in s]
            assert all(w in SOURCE_WORDS for w in s)
    # a meaningful share stack two pairs like a one-shot prompt
    assert 0.25 < stacked / len(lines) < 0.45


def test_digit_fact_lines_carry_fact_question_answer():
    spec = CorpusSpec(kind="digit_facts", size=300, seed=6,
                      truncate_rate=0.3)
    lines = make_corpus(spec)
    truncated = 0
    for line in lines:
        toks = split_text(line)
        assert len(toks) <= spec.max_tokens
        assert line.startswith(NEEDLE_PREAMBLE)
        assert NEEDLE_QUESTION in line
        fact_at = line.index(NEEDLE_FACT_PREFIX)
        digits = line[fact_at:].split()[4:10]
        assert all(d.isdigit() and len(d) == 1 for d in digits)
        assert digits[0] != "0"  # needles start at 100000
        answer_at = line.index(NEEDLE_ANSWER_PREFIX)
        tail = line[answer_at + len(NEEDLE_ANSWER_PREFIX):].split()
        if tail == digits + ["."]:
            continue
        truncated += 1
        assert tail == digits[:len(tail)]  # cut inside the echoed needle
    assert 0.15 < truncated / len(lines) < 0.45


def test_digit_fact_needle_depth_varies():
    lines = make_corpus(CorpusSpec(kind="digit_facts", size=200, seed=7))
    positions = [l.index(NEEDLE_FACT_PREFIX) / len(l) for l in lines]
    assert min(positions) < 0.25 and max(positions) > 0.45


def test_mention_questions_are_answer_consistent():
    lines = make_corpus(CorpusSpec(kind="grammar_sentences", size=2000,
                                   seed=8, qa_rate=0.5))
    qa = [l for l in lines if MENTION_QUESTION in l]
    assert 0.4 < len(qa) / len(lines) < 0.6
    for line in qa:
        passage, question, answer = line.rsplit(f" {NEWLINE_TOKEN} ", 2)
        word = question.split()[-2]
        mentioned = word in passage.split()
        assert answer == ("answer : yes" if mentioned else "answer : no")


def test_lines_never_contain_raw_newlines():
    for kind in ("grammar_sentences", "parallel_pairs", "digit_facts",
                 "idiom_injected"):
        for line in make_corpus(CorpusSpec(kind=kind, size=50, seed=1)):
            assert "\n" not in line
