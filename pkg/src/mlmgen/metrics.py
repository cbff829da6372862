"""Evaluation metrics for ranking and generation tasks.

All metrics return floats; the registry at the bottom maps the names
used in task definitions to corpus-level callables taking aligned
prediction and gold sequences.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence


def normalize_text(text: str) -> str:
    """Casefold and collapse whitespace — the equivalence used by exact
    match."""
    return " ".join(text.split()).casefold()


def accuracy(predictions: Sequence, golds: Sequence) -> float:
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds must align")
    if not golds:
        raise ValueError("accuracy of an empty set is undefined")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


def exact_match(prediction: str, gold: str) -> float:
    return float(normalize_text(prediction) == normalize_text(gold))


def macro_f1(predictions: Sequence, golds: Sequence) -> float:
    """Unweighted mean of per-label F1 over the union of labels seen in
    either list, so a degenerate always-majority predictor is punished
    on the minority label."""
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds must align")
    if not golds:
        raise ValueError("macro F1 of an empty set is undefined")
    labels = sorted(set(predictions) | set(golds), key=str)
    scores = []
    for label in labels:
        tp = sum(p == label and g == label
                 for p, g in zip(predictions, golds))
        fp = sum(p == label and g != label
                 for p, g in zip(predictions, golds))
        fn = sum(p != label and g == label
                 for p, g in zip(predictions, golds))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if precision + recall == 0.0:
            scores.append(0.0)
        else:
            scores.append(2 * precision * recall / (precision + recall))
    return sum(scores) / len(scores)


def _tokens(value) -> list:
    return value.split() if isinstance(value, str) else list(value)


def token_f1(prediction, gold) -> float:
    """Multiset-overlap F1 between two token sequences (strings are
    whitespace-split)."""
    pred, ref = _tokens(prediction), _tokens(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(ref)
    return 2 * precision * recall / (precision + recall)


def _ngram_counts(tokens: list, order: int) -> Counter:
    return Counter(tuple(tokens[i:i + order])
                   for i in range(len(tokens) - order + 1))


def corpus_bleu(hypotheses: Sequence, references: Sequence,
                max_order: int = 4) -> float:
    """Corpus BLEU on a 0–100 scale with brevity penalty.

    Orders with no possible hypothesis n-grams are dropped; an included
    order with zero matches gets the exponential smoothing
    ``1 / (2^k * total)`` with k growing per smoothed order, so short
    desk-scale corpora do not collapse to zero.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must align")
    if not hypotheses:
        raise ValueError("corpus BLEU of an empty set is undefined")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            matches[n - 1] += sum((hyp_counts & ref_counts).values())
            totals[n - 1] += sum(hyp_counts.values())
    if hyp_len == 0:
        return 0.0
    log_sum, orders, smooth_k = 0.0, 0, 1
    for n in range(max_order):
        if totals[n] == 0:
            continue
        orders += 1
        if matches[n] > 0:
            log_sum += math.log(matches[n] / totals[n])
        else:
            log_sum += math.log(1.0 / (2 ** smooth_k * totals[n]))
            smooth_k += 1
    if orders == 0:
        return 0.0
    geo_mean = math.exp(log_sum / orders)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * geo_mean * bp


def _mean_exact_match(predictions, golds) -> float:
    if len(predictions) != len(golds) or not golds:
        raise ValueError("predictions and golds must align and be non-empty")
    return sum(exact_match(p, g) for p, g in zip(predictions, golds)) \
        / len(golds)


def _mean_token_f1(predictions, golds) -> float:
    if len(predictions) != len(golds) or not golds:
        raise ValueError("predictions and golds must align and be non-empty")
    return sum(token_f1(p, g) for p, g in zip(predictions, golds)) \
        / len(golds)


METRICS = {
    "accuracy": accuracy,
    "macro_f1": macro_f1,
    "exact_match": _mean_exact_match,
    "token_f1": _mean_token_f1,
    "bleu": corpus_bleu,
}


def compute_metric(name: str, predictions, golds) -> float:
    try:
        fn = METRICS[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}") from None
    return fn(predictions, golds)
