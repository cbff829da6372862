"""Masking statistics (counting oracles) and training behaviour."""

import numpy as np
import pytest

from mlmgen.corpora import CorpusSpec, make_corpus
from mlmgen.model import ModelConfig, init_weights
from mlmgen.tokenizer import MASK_ID, SEP_ID, build_vocab, encode
from mlmgen.training import (TrainConfig, TrainingDiverged, causal_nll,
                             sample_span_mask, train, unigram_nll,
                             write_loss_csv)


def content_ids(n, start=5):
    return np.arange(start, start + n) % 40 + 5


# ---------------------------------------------------------------- masking

def test_rate_zero_leaves_sequence_unchanged():
    rng = np.random.default_rng(0)
    ids = content_ids(20)
    corrupted, targets, plan = sample_span_mask(ids, rng, rate=0.0,
                                                vocab_size=60)
    np.testing.assert_array_equal(corrupted, ids)
    assert (targets == -100).all()
    assert plan.positions == [] and plan.span_lengths == []


def test_masked_count_within_one_token_of_budget():
    rng = np.random.default_rng(1)
    for trial in range(50):
        ids = content_ids(100)
        _, targets, plan = sample_span_mask(ids, rng, vocab_size=60)
        masked = int((targets != -100).sum())
        assert masked in (15, 16)
        assert masked == len(plan.positions)


def test_specials_never_masked_and_spans_stay_inside_segments():
    rng = np.random.default_rng(2)
    ids = np.concatenate([content_ids(9), [SEP_ID], content_ids(9),
                          [SEP_ID]])
    for _ in range(200):
        corrupted, targets, plan = sample_span_mask(ids, rng,
                                                    vocab_size=60)
        sep_positions = {9, 19}
        assert not sep_positions & set(plan.positions)
        assert (corrupted[list(sep_positions)] == SEP_ID).all()
        off = 0
        for length in plan.span_lengths:
            span = plan.positions[off:off + length]
            off += length
            assert span == list(range(span[0], span[0] + length))
            # a span never straddles a separator
            assert all(p < 9 for p in span) or all(9 < p < 19 for p in span)


def test_span_length_histogram_close_to_uniform():
    rng = np.random.default_rng(3)
    lengths = []
    while len(lengths) < 10_000:
        _, _, plan = sample_span_mask(content_ids(200), rng, vocab_size=60)
        lengths.extend(plan.span_lengths)
    counts = np.bincount(lengths, minlength=4)[1:4] / len(lengths)
    for k, freq in enumerate(counts, start=1):
        assert abs(freq - 1 / 3) < 0.03, f"span length {k}: {freq:.3f}"


def test_replacement_mixture_is_80_10_10():
    rng = np.random.default_rng(4)
    tallies = {"mask": 0, "random": 0, "keep": 0}
    checked = 0
    for _ in range(400):
        ids = content_ids(100)
        corrupted, _, plan = sample_span_mask(ids, rng, vocab_size=60)
        for pos, kind in zip(sorted(plan.positions), plan.replacements):
            tallies[kind] += 1
            checked += 1
            if kind == "mask":
                assert corrupted[pos] == MASK_ID
            elif kind == "keep":
                assert corrupted[pos] == ids[pos]
            else:
                assert 5 <= corrupted[pos] < 60
    total = sum(tallies.values())
    assert total == checked and total > 4000
    assert abs(tallies["mask"] / total - 0.8) < 0.03
    assert abs(tallies["random"] / total - 0.1) < 0.02
    assert abs(tallies["keep"] / total - 0.1) < 0.02


def test_masking_rejects_degenerate_sequences():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        sample_span_mask([5, 6, 7], rng, vocab_size=60)
    with pytest.raises(ValueError):
        sample_span_mask([0, 3, 3, 0, 1], rng, vocab_size=60)


# ---------------------------------------------------------------- training

def small_setup(kind="grammar_sentences", size=600, causal=False, **cfg_kw):
    lines = make_corpus(CorpusSpec(kind=kind, size=size, seed=11))
    vocab = build_vocab(lines, 96)
    seqs = [encode(l, vocab, add_sep=True) for l in lines]
    base = dict(vocab_size=vocab.size, layers=1, heads=2, d_model=32,
                d_ff=128, num_buckets=16, max_distance=32, max_train_len=32)
    base.update(cfg_kw)
    if causal:
        base["attention_mode"] = "causal"
    return ModelConfig(**base), seqs, vocab


def test_zero_steps_returns_untouched_init():
    cfg, seqs, _ = small_setup(size=50)
    weights, trace = train(cfg, seqs, TrainConfig(steps=0, seed=21))
    assert trace == []
    ref = init_weights(cfg, 21)
    for (n1, t1), (n2, t2) in zip(weights.items(), ref.items()):
        assert n1 == n2
        np.testing.assert_array_equal(t1.array, t2.array)


def test_training_is_bit_reproducible():
    cfg, seqs, _ = small_setup(size=80)
    tc = TrainConfig(steps=40, batch_size=8, seed=5)
    w1, tr1 = train(cfg, seqs, tc)
    w2, tr2 = train(cfg, seqs, tc)
    assert tr1 == tr2
    for (_, t1), (_, t2) in zip(w1.items(), w2.items()):
        assert np.abs(t1.array - t2.array).max() == 0.0


def test_mlm_loss_drops_thirty_percent_in_2000_steps():
    cfg, seqs, _ = small_setup(size=600)
    tc = TrainConfig(steps=2000, batch_size=8, lr=3e-3, seed=1)
    _, trace = train(cfg, seqs, tc)
    first = trace[0][1]
    final = float(np.mean([row[1] for row in trace[-50:]]))
    assert final <= 0.7 * first, f"loss {first:.3f} -> {final:.3f}"


def test_causal_model_beats_unigram_counting_oracle():
    cfg, seqs, vocab = small_setup(size=600, causal=True)
    held_out = seqs[:50]
    train_seqs = seqs[50:]
    tc = TrainConfig(steps=2000, batch_size=8, lr=3e-3, seed=2)
    weights, _ = train(cfg, train_seqs, tc)
    model_nll = causal_nll(cfg, weights, held_out)
    baseline = unigram_nll(train_seqs, held_out, vocab.size)
    assert model_nll < baseline, f"model {model_nll:.3f} vs unigram {baseline:.3f}"


def test_divergence_aborts_with_diagnostic():
    cfg, seqs, _ = small_setup(size=30)
    bad = init_weights(cfg, 0)
    bad["tok_emb"].array[3, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="step 0"):
        train(cfg, seqs, TrainConfig(steps=5, seed=0), initial_weights=bad)


def test_empty_corpus_rejected():
    cfg, _, _ = small_setup(size=10)
    with pytest.raises(ValueError):
        train(cfg, [], TrainConfig(steps=1))


def test_loss_csv_format(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_csv(path, [(0, 4.0, 0.001), (1, 3.5, 0.002)])
    lines = path.read_text().splitlines()
    assert lines[0] == "step,loss,lr"
    assert lines[1] == "0,4.00000000,0.00100000"
    assert len(lines) == 3


def test_warmup_schedule_recorded_in_trace():
    cfg, seqs, _ = small_setup(size=30)
    tc = TrainConfig(steps=5, batch_size=4, lr=1e-3, warmup_steps=4, seed=3)
    _, trace = train(cfg, seqs, tc)
    lrs = [row[2] for row in trace]
    np.testing.assert_allclose(
        lrs, [2.5e-4, 5e-4, 7.5e-4, 1e-3, 1e-3], atol=1e-12)
