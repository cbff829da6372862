"""Completion scoring and candidate ranking.

Two families of scores for a candidate completion in a context:

* ``exact_unidirectional`` — the chain-rule log-likelihood, obtained by
  re-running the mask-append construction once per completion token.
  This is exactly the quantity generation maximizes, computed through
  the same calls, so the two agree bit for bit.
* ``pll`` — pseudo-log-likelihood with an extended mask: scoring token
  i masks positions i..i+m (clipped at the completion end; context and
  the terminator are never masked).  ``m = 0`` is classic PLL, which
  overrates multi-token expressions because each token sees the others;
  widening the window removes that leak.  ``pll_word_l2r`` masks from i
  to the end of i's word, ``pll_whole_word`` masks i's entire word.

Scores can optionally be normalized by an unconditional pass: the same
completion scored in a caller-chosen ``answer_context`` is subtracted
per token, turning raw likelihood into a pointwise mutual-information
style preference.

Ranking sorts by score descending with the original candidate index as
tie-break, so equal scores keep submission order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .generation import GenerationConfig, next_token_dist
from .tokenizer import MASK_ID, SEP_ID

SCORING_KINDS = ("exact_unidirectional", "pll", "pll_word_l2r",
                 "pll_whole_word")


@dataclass
class ScoringMethod:
    kind: str = "pll"
    n_extra_masks: int = 2          # the m in pll: mask i..i+m
    n_pad_masks: int = 2            # mask-append padding for exact scoring
    n_trailing_pad_masks: int = 0   # masks appended after the completion
    append_sep: bool = True
    normalize_by_unconditional: bool = False
    answer_context: Optional[list[int]] = None

    def __post_init__(self):
        if self.kind not in SCORING_KINDS:
            raise ValueError(f"unknown scoring kind {self.kind!r}")
        if self.n_extra_masks < 0:
            raise ValueError("n_extra_masks must be >= 0")
        if self.n_pad_masks < 0:
            raise ValueError("n_pad_masks must be >= 0")
        if self.n_trailing_pad_masks < 0:
            raise ValueError("n_trailing_pad_masks must be >= 0")


@dataclass
class ScoredCandidate:
    index: int
    tokens: list[int]
    score: float
    per_token: list[float] = field(repr=False)


def _token_to_word(k: int, word_spans: Sequence[tuple[int, int]]
                   ) -> list[tuple[int, int]]:
    """Expand completion-relative word spans to a per-token lookup."""
    owner: list[Optional[tuple[int, int]]] = [None] * k
    for start, end in word_spans:
        if not 0 <= start < end <= k:
            raise ValueError(f"word span ({start}, {end}) out of range")
        for i in range(start, end):
            if owner[i] is not None:
                raise ValueError("word spans overlap")
            owner[i] = (start, end)
    if any(o is None for o in owner):
        raise ValueError("word spans must cover the whole completion")
    return owner  # type: ignore[return-value]


def _mask_window(i: int, k: int, method: ScoringMethod,
                 owner) -> range:
    if method.kind == "pll":
        return range(i, min(i + method.n_extra_masks + 1, k))
    if method.kind == "pll_word_l2r":
        return range(i, owner[i][1])
    return range(*owner[i])  # pll_whole_word


def _raw_per_token(model, context: Sequence[int], completion: Sequence[int],
                   method: ScoringMethod, word_spans) -> list[float]:
    context = list(context)
    completion = list(completion)
    k = len(completion)
    if k == 0:
        return []
    if method.kind == "exact_unidirectional":
        cfg = GenerationConfig(n_pad_masks=method.n_pad_masks,
                               append_sep=method.append_sep)
        out = []
        for i, tok in enumerate(completion):
            probs = next_token_dist(model, context + completion[:i], cfg)
            out.append(float(np.log(probs[tok])))
        return out

    owner = None
    if method.kind in ("pll_word_l2r", "pll_whole_word"):
        if word_spans is None:
            raise ValueError(f"{method.kind} scoring needs word spans")
        owner = _token_to_word(k, word_spans)
    base = context + completion + [MASK_ID] * method.n_trailing_pad_masks
    if method.append_sep:
        base.append(SEP_ID)
    out = []
    for i, tok in enumerate(completion):
        ids = list(base)
        for j in _mask_window(i, k, method, owner):
            ids[len(context) + j] = MASK_ID
        logits = model.logits(ids)
        row = np.ascontiguousarray(logits[len(context) + i][None, :])
        probs = kernels.softmax_fwd(row)[0]
        out.append(float(np.log(probs[tok])))
    return out


def score_completion(model, context: Sequence[int],
                     completion: Sequence[int], method: ScoringMethod,
                     word_spans: Optional[Sequence[tuple[int, int]]] = None
                     ) -> tuple[float, list[float]]:
    """Score one completion; returns (total, per-token log-probs)."""
    per_token = _raw_per_token(model, context, completion, method,
                               word_spans)
    if method.normalize_by_unconditional:
        if method.answer_context is None:
            raise ValueError(
                "normalize_by_unconditional needs an answer_context")
        baseline = _raw_per_token(model, method.answer_context, completion,
                                  method, word_spans)
        per_token = [c - b for c, b in zip(per_token, baseline)]
    return float(sum(per_token)), per_token


def rank(model, context: Sequence[int],
         candidates: Sequence[Sequence[int]], method: ScoringMethod,
         word_spans: Optional[Sequence[Optional[Sequence[tuple[int, int]]]]]
         = None) -> list[ScoredCandidate]:
    """Score every candidate and sort best-first (ties keep input order)."""
    if not candidates:
        raise ValueError("rank needs at least one candidate")
    if word_spans is not None and len(word_spans) != len(candidates):
        raise ValueError("word_spans must align with candidates")
    scored = []
    for idx, cand in enumerate(candidates):
        spans = word_spans[idx] if word_spans is not None else None
        total, per_token = score_completion(model, context, cand, method,
                                            spans)
        scored.append(ScoredCandidate(index=idx, tokens=list(cand),
                                      score=total, per_token=per_token))
    scored.sort(key=lambda c: (-c.score, c.index))
    return scored


def dump_scores(path, ranked: Sequence[ScoredCandidate],
                method: ScoringMethod) -> None:
    """One JSON object per line, best candidate first."""
    with open(path, "w", encoding="utf-8") as fh:
        for cand in ranked:
            fh.write(json.dumps({
                "index": cand.index,
                "tokens": cand.tokens,
                "method": method.kind,
                "score": cand.score,
                "per_token": cand.per_token,
            }) + "\n")
