"""Scoring and ranking tests.

Every scoring kind is checked against a brute-force oracle that builds
the masked inputs by hand and reads log-softmax rows directly from the
model, with agreement required to 1e-9.  The statistical effect of the
extended mask (wider windows lower per-token confidence on trained
text) is checked with a one-sided z test on a small trained model.
"""

import json

import numpy as np
import pytest

from mlmgen.corpora import CorpusSpec, make_corpus
from mlmgen.generation import GenerationConfig, next_token_dist
from mlmgen.model import ModelConfig, TransformerLM, init_weights
from mlmgen.ranking import (
    ScoringMethod,
    dump_scores,
    rank,
    score_completion,
)
from mlmgen.tokenizer import (
    MASK_ID,
    SEP_ID,
    build_vocab,
    encode,
    encode_with_word_boundaries,
)
from mlmgen.training import TrainConfig, train


def random_lm(seed, vocab_size=23):
    config = ModelConfig(vocab_size=vocab_size, layers=1, heads=2,
                         d_model=8, d_ff=16, num_buckets=8, max_distance=16)
    return TransformerLM(config, init_weights(config, seed))


def log_softmax_row(logits_row):
    shifted = logits_row - logits_row.max()
    return shifted - np.log(np.exp(shifted).sum())


def oracle_pll(model, context, completion, windows, *, trailing=0,
               append_sep=True):
    """Assemble each masked input by hand; windows[i] lists the masked
    completion-relative positions when scoring token i."""
    base = list(context) + list(completion) + [MASK_ID] * trailing
    if append_sep:
        base.append(SEP_ID)
    per_token = []
    for i, tok in enumerate(completion):
        ids = list(base)
        for j in windows[i]:
            ids[len(context) + j] = MASK_ID
        row = model.logits(ids)[len(context) + i]
        per_token.append(float(log_softmax_row(row)[tok]))
    return per_token


@pytest.fixture(scope="module")
def trained_grammar():
    lines = make_corpus(CorpusSpec(kind="grammar_sentences", size=400,
                                   seed=5))
    vocab = build_vocab(lines, 96)
    seqs = [encode(l, vocab, add_sep=True) for l in lines]
    config = ModelConfig(vocab_size=vocab.size, layers=1, heads=2,
                         d_model=32, d_ff=128, num_buckets=16,
                         max_distance=32, max_train_len=32)
    weights, _ = train(config, seqs, TrainConfig(steps=1200, seed=0))
    return TransformerLM(config, weights), vocab, lines


# ---------------------------------------------------------------------------
# oracle agreement


def test_exact_scoring_matches_hand_built_chain():
    model = random_lm(0)
    context = [5, 9, 14]
    completion = [7, 11, 6, 20]
    method = ScoringMethod(kind="exact_unidirectional")
    total, per_token = score_completion(model, context, completion, method)
    want = []
    for i, tok in enumerate(completion):
        seq = context + completion[:i] + [MASK_ID] * 3 + [SEP_ID]
        row = model.logits(seq)[len(context) + i]
        want.append(float(log_softmax_row(row)[tok]))
    np.testing.assert_allclose(per_token, want, atol=1e-9)
    assert total == pytest.approx(sum(want), abs=1e-9)


def test_exact_scoring_is_bit_equal_to_generation_chain():
    model = random_lm(1)
    context = [6, 8]
    completion = [10, 5, 17]
    method = ScoringMethod(kind="exact_unidirectional", n_pad_masks=2)
    _, per_token = score_completion(model, context, completion, method)
    cfg = GenerationConfig(n_pad_masks=2)
    for i, tok in enumerate(completion):
        probs = next_token_dist(model, context + completion[:i], cfg)
        assert per_token[i] == float(np.log(probs[tok]))


@pytest.mark.parametrize("m", [0, 1, 2, 3])
def test_pll_matches_hand_built_masking(m):
    model = random_lm(2)
    context = [5, 19]
    completion = [8, 8, 13, 6, 21]
    k = len(completion)
    method = ScoringMethod(kind="pll", n_extra_masks=m)
    total, per_token = score_completion(model, context, completion, method)
    windows = [list(range(i, min(i + m + 1, k))) for i in range(k)]
    want = oracle_pll(model, context, completion, windows)
    np.testing.assert_allclose(per_token, want, atol=1e-9)
    assert total == pytest.approx(sum(want), abs=1e-9)


def test_word_variants_match_hand_built_masking():
    model = random_lm(3)
    context = [5, 6]
    # completion of three words: [7 9] [12] [10 11 13]
    completion = [7, 9, 12, 10, 11, 13]
    spans = [(0, 2), (2, 3), (3, 6)]

    l2r_windows = [[0, 1], [1], [2], [3, 4, 5], [4, 5], [5]]
    whole_windows = [[0, 1], [0, 1], [2], [3, 4, 5], [3, 4, 5], [3, 4, 5]]

    for kind, windows in [("pll_word_l2r", l2r_windows),
                          ("pll_whole_word", whole_windows)]:
        method = ScoringMethod(kind=kind)
        _, per_token = score_completion(model, context, completion, method,
                                        word_spans=spans)
        want = oracle_pll(model, context, completion, windows)
        np.testing.assert_allclose(per_token, want, atol=1e-9)


def test_trailing_pad_masks_enter_the_assembly():
    model = random_lm(4)
    context = [5]
    completion = [9, 12]
    method = ScoringMethod(kind="pll", n_extra_masks=0,
                           n_trailing_pad_masks=2)
    _, per_token = score_completion(model, context, completion, method)
    windows = [[0], [1]]
    want = oracle_pll(model, context, completion, windows, trailing=2)
    np.testing.assert_allclose(per_token, want, atol=1e-9)
    # and they change the score relative to the unpadded assembly
    plain = ScoringMethod(kind="pll", n_extra_masks=0)
    _, unpadded = score_completion(model, context, completion, plain)
    assert per_token != pytest.approx(unpadded)


# ---------------------------------------------------------------------------
# structural properties


def test_single_token_completion_ignores_window_width():
    model = random_lm(5)
    context = [6, 7, 8]
    for m in (0, 2, 5):
        method = ScoringMethod(kind="pll", n_extra_masks=m)
        total, _ = score_completion(model, context, [11], method)
        base, _ = score_completion(model, context, [11],
                                   ScoringMethod(kind="pll",
                                                 n_extra_masks=0))
        assert total == base


def test_single_token_words_collapse_all_pll_variants():
    model = random_lm(6)
    context = [5, 14]
    completion = [7, 16, 9]
    spans = [(0, 1), (1, 2), (2, 3)]
    scores = []
    for kind in ("pll", "pll_word_l2r", "pll_whole_word"):
        method = ScoringMethod(kind=kind, n_extra_masks=0)
        total, _ = score_completion(model, context, completion, method,
                                    word_spans=spans)
        scores.append(total)
    assert scores[0] == scores[1] == scores[2]


def test_empty_completion_scores_zero():
    model = random_lm(7)
    total, per_token = score_completion(model, [5, 6], [],
                                        ScoringMethod(kind="pll"))
    assert total == 0.0
    assert per_token == []


def test_unnormalized_per_token_scores_are_log_probs():
    model = random_lm(8)
    for kind in ("exact_unidirectional", "pll"):
        total, per_token = score_completion(
            model, [5, 9], [6, 12, 7], ScoringMethod(kind=kind))
        assert all(p <= 0.0 for p in per_token)
        assert total == pytest.approx(sum(per_token), abs=1e-9)


def test_wider_masks_lower_trained_confidence(trained_grammar):
    """On in-distribution text, masking two extra right-neighbors must
    reduce per-token log-probability on average (one-sided z > 2.33)."""
    model, vocab, lines = trained_grammar
    diffs = []
    for line in lines[:280]:
        ids = encode(line, vocab)
        if len(ids) < 6:
            continue
        cut = max(len(ids) * 3 // 5, 1)
        context, completion = ids[:cut], ids[cut:cut + 8]
        narrow = ScoringMethod(kind="pll", n_extra_masks=0)
        wide = ScoringMethod(kind="pll", n_extra_masks=2)
        _, pt0 = score_completion(model, context, completion, narrow)
        _, pt2 = score_completion(model, context, completion, wide)
        diffs.extend(a - b for a, b in zip(pt0, pt2))
    diffs = np.asarray(diffs)
    assert diffs.size >= 1000
    z = diffs.mean() / (diffs.std(ddof=1) / np.sqrt(diffs.size))
    assert z > 2.33, f"z={z:.2f} over {diffs.size} tokens"


# ---------------------------------------------------------------------------
# normalization and ranking


def test_normalization_by_identical_context_gives_zero():
    model = random_lm(9)
    context = [5, 11, 7]
    method = ScoringMethod(kind="pll", normalize_by_unconditional=True,
                           answer_context=list(context))
    candidates = [[6, 9], [12], [8, 8, 8]]
    ranked = rank(model, context, candidates, method)
    assert all(c.score == pytest.approx(0.0, abs=1e-12) for c in ranked)
    assert [c.index for c in ranked] == [0, 1, 2]  # ties keep input order


def test_normalization_subtracts_baseline_per_token():
    model = random_lm(10)
    context = [5, 6, 7, 8]
    answer_context = [9, 10]
    completion = [11, 13]
    raw = ScoringMethod(kind="pll")
    norm = ScoringMethod(kind="pll", normalize_by_unconditional=True,
                         answer_context=answer_context)
    _, cond = score_completion(model, context, completion, raw)
    _, base = score_completion(model, answer_context, completion, raw)
    _, got = score_completion(model, context, completion, norm)
    np.testing.assert_allclose(got, [c - b for c, b in zip(cond, base)],
                               atol=1e-12)


def test_rank_orders_by_score_then_index():
    model = random_lm(12)
    context = [5, 6]
    candidates = [[9, 14], [7], [9, 14]]  # 0 and 2 identical => tie
    ranked = rank(model, context, candidates, ScoringMethod(kind="pll"))
    assert len(ranked) == 3
    assert sorted(c.score for c in ranked[::-1]) == [c.score
                                                     for c in ranked[::-1]]
    tied = [c.index for c in ranked if c.tokens == [9, 14]]
    assert tied == [0, 2]


def test_rank_validation_errors():
    model = random_lm(13)
    with pytest.raises(ValueError):
        rank(model, [5], [], ScoringMethod(kind="pll"))
    with pytest.raises(ValueError):
        rank(model, [5], [[6], [7]], ScoringMethod(kind="pll"),
             word_spans=[[(0, 1)]])
    with pytest.raises(ValueError):
        score_completion(model, [5], [6, 7],
                         ScoringMethod(kind="pll_whole_word"))
    with pytest.raises(ValueError):
        score_completion(model, [5], [6, 7],
                         ScoringMethod(kind="pll_whole_word"),
                         word_spans=[(0, 1)])  # does not cover token 1
    with pytest.raises(ValueError):
        # the normalized pass needs its baseline context by score time
        score_completion(model, [5], [6],
                         ScoringMethod(kind="pll",
                                       normalize_by_unconditional=True))
    with pytest.raises(ValueError):
        ScoringMethod(kind="made_up")
    with pytest.raises(ValueError):
        ScoringMethod(n_extra_masks=-1)


def test_word_boundaries_from_tokenizer_feed_word_scoring():
    model = random_lm(14, vocab_size=40)
    corpus = ["the cat sat on 42 mats"]
    vocab = build_vocab(corpus, 40)
    ids, spans = encode_with_word_boundaries("on 42 mats", vocab)
    assert [e - s for s, e in spans] == [1, 2, 1]  # 42 splits into 4, 2
    context = encode("the cat sat", vocab)
    method = ScoringMethod(kind="pll_whole_word")
    total, per_token = score_completion(model, context, ids, method,
                                        word_spans=spans)
    assert len(per_token) == len(ids)
    assert total == pytest.approx(sum(per_token), abs=1e-9)


def test_dump_scores_round_trips_json(tmp_path):
    model = random_lm(15)
    method = ScoringMethod(kind="pll")
    ranked = rank(model, [5, 6], [[7, 8], [9]], method)
    path = tmp_path / "scores.jsonl"
    dump_scores(path, ranked, method)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 2
    records = [json.loads(l) for l in lines]
    assert records[0]["score"] >= records[1]["score"]
    for rec, cand in zip(records, ranked):
        assert rec["index"] == cand.index
        assert rec["tokens"] == cand.tokens
        assert rec["method"] == "pll"
        assert rec["per_token"] == pytest.approx(cand.per_token)
