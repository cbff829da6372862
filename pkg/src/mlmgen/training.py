"""Span-corruption training for the masked arm and next-token training
for the causal arm.

Masking follows the usual 15% recipe with short spans: span lengths are
drawn uniformly from {1..max_span}; a span is placed only on contiguous
non-special positions, so special tokens are never corrupted and no
span crosses a ``[SEP]``.  Each masked position is then independently
replaced by ``[MASK]`` (80%), a random non-special token (10%), or left
unchanged (10%).  The final span is clipped to the remaining budget, so
the masked count per sequence equals ``round(rate * n_eligible)``
exactly and the realized rate stays on budget.

The optimizer is AdamW with linear warmup and a global-norm gradient
clip, with the per-parameter update running through the fused kernel
backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from . import numerics as nm
from .model import ModelConfig, ModelWeights, forward, init_weights
from .tokenizer import MASK_ID, PAD_ID

N_SPECIALS = 5


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; training aborted."""


@dataclass
class MaskingPlan:
    """What a single masking draw did: every corrupted position, the
    chosen span lengths, and the per-position replacement kind
    ('mask' | 'random' | 'keep')."""

    positions: list[int] = field(default_factory=list)
    span_lengths: list[int] = field(default_factory=list)
    replacements: list[str] = field(default_factory=list)


def sample_span_mask(ids: Sequence[int], rng: np.random.Generator, *,
                     rate: float = 0.15, max_span: int = 3,
                     vocab_size: int,
                     ) -> tuple[np.ndarray, np.ndarray, MaskingPlan]:
    """Corrupt one sequence for masked-LM training.

    Returns (corrupted ids, targets, plan); targets hold the original
    id at corrupted positions and -100 elsewhere.
    """
    arr = np.asarray(ids, dtype=np.int64).copy()
    n = arr.size
    if n < 4:
        raise ValueError(f"sequence too short to mask ({n} < 4 tokens)")
    eligible = arr >= N_SPECIALS
    if not eligible.any():
        raise ValueError("sequence contains only special tokens")
    targets = np.full(n, nm.IGNORE_INDEX, dtype=np.int64)
    plan = MaskingPlan()
    budget = int(round(rate * int(eligible.sum())))
    if budget == 0:
        return arr, targets, plan

    open_slots = eligible.copy()
    remaining = budget
    while remaining > 0:
        length = min(int(rng.integers(1, max_span + 1)), remaining)
        while length > 1 and not _has_run(open_slots, length):
            length -= 1
        starts = _run_starts(open_slots, length)
        if starts.size == 0:
            break
        s = int(starts[rng.integers(starts.size)])
        open_slots[s:s + length] = False
        plan.span_lengths.append(length)
        plan.positions.extend(range(s, s + length))
        remaining -= length

    for pos in sorted(plan.positions):
        targets[pos] = arr[pos]
        roll = rng.random()
        if roll < 0.8 or vocab_size <= N_SPECIALS:
            arr[pos] = MASK_ID
            plan.replacements.append("mask")
        elif roll < 0.9:
            arr[pos] = int(rng.integers(N_SPECIALS, vocab_size))
            plan.replacements.append("random")
        else:
            plan.replacements.append("keep")
    return arr, targets, plan


def _run_starts(open_slots: np.ndarray, length: int) -> np.ndarray:
    if length > open_slots.size:
        return np.empty(0, dtype=np.int64)
    windows = sliding_window_view(open_slots, length)
    return np.flatnonzero(windows.all(axis=1))


def _has_run(open_slots: np.ndarray, length: int) -> bool:
    return _run_starts(open_slots, length).size > 0


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 16
    lr: float = 3e-3
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    mask_rate: float = 0.15
    max_span: int = 3
    seed: int = 0


def _pad_batch(rows: list[np.ndarray], tgts: list[np.ndarray]
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = max(r.size for r in rows)
    n = len(rows)
    ids = np.full((n, width), PAD_ID, dtype=np.int64)
    targets = np.full((n, width), nm.IGNORE_INDEX, dtype=np.int64)
    mask = np.zeros((n, width), dtype=bool)
    for i, (r, t) in enumerate(zip(rows, tgts)):
        ids[i, :r.size] = r
        targets[i, :t.size] = t
        mask[i, :r.size] = True
    return ids, targets, mask


def train(config: ModelConfig, sequences: list[Sequence[int]],
          tc: TrainConfig, initial_weights: ModelWeights | None = None
          ) -> tuple[ModelWeights, list[tuple[int, float, float]]]:
    """Train from a fresh seeded init (or ``initial_weights``, e.g. a
    loaded checkpoint); returns (weights, loss trace).

    The trace holds one ``(step, loss, lr)`` row per optimizer step.
    ``steps == 0`` returns the untouched init.  A non-finite loss
    aborts with :class:`TrainingDiverged`.
    """
    if not sequences:
        raise ValueError("empty training corpus")
    weights = initial_weights if initial_weights is not None \
        else init_weights(config, tc.seed)
    if tc.steps == 0:
        return weights, []
    rng = np.random.default_rng(tc.seed)
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    causal = config.attention_mode == "causal"
    if causal and any(s.size < 2 for s in seqs):
        raise ValueError("causal training needs sequences of >= 2 tokens")

    state = {name: (np.zeros(t.array.size), np.zeros(t.array.size))
             for name, t in weights.items()}
    trace: list[tuple[int, float, float]] = []

    for step in range(tc.steps):
        picks = rng.integers(0, len(seqs), size=tc.batch_size)
        rows, tgts = [], []
        for idx in picks:
            s = seqs[idx]
            if causal:
                rows.append(s[:-1])
                tgts.append(s[1:].copy())
            else:
                corrupted, targets, _ = sample_span_mask(
                    s, rng, rate=tc.mask_rate, max_span=tc.max_span,
                    vocab_size=config.vocab_size)
                rows.append(corrupted)
                tgts.append(targets)
        ids, targets, pad_mask = _pad_batch(rows, tgts)
        if causal:
            targets[~pad_mask] = nm.IGNORE_INDEX

        weights.zero_grad()
        logits = forward(ids, config, weights, train=True, rng=rng,
                         pad_mask=pad_mask)
        flat = nm.reshape(logits, (ids.size, config.vocab_size))
        try:
            loss = nm.cross_entropy(flat, targets.reshape(-1))
        except FloatingPointError as exc:
            raise TrainingDiverged(
                f"non-finite loss at step {step}: {exc}") from exc
        loss.backward()
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise TrainingDiverged(f"non-finite loss at step {step}")

        lr = tc.lr * min(1.0, (step + 1) / max(tc.warmup_steps, 1))
        _apply_updates(weights, state, tc, lr, step + 1)
        trace.append((step, loss_value, lr))
    return weights, trace


def _apply_updates(weights: ModelWeights, state: dict, tc: TrainConfig,
                   lr: float, t: int) -> None:
    grads = {}
    sq = 0.0
    for name, tensor in weights.items():
        if tensor.grad is None:
            continue
        g = tensor.grad.reshape(-1)
        grads[name] = g
        sq += float(g @ g)
    if tc.grad_clip > 0.0:
        norm = np.sqrt(sq)
        if norm > tc.grad_clip:
            scale = tc.grad_clip / norm
            for g in grads.values():
                g *= scale
    for name, g in grads.items():
        m, v = state[name]
        kernels.adamw_step(weights[name].array.reshape(-1),
                           np.ascontiguousarray(g), m, v, lr,
                           tc.beta1, tc.beta2, tc.eps, tc.weight_decay, t)


def write_loss_csv(path, trace: list[tuple[int, float, float]]) -> None:
    """Loss trace as ``step,loss,lr`` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,lr\n")
        for step, loss, lr in trace:
            fh.write(f"{step},{loss:.8f},{lr:.8f}\n")


def causal_nll(config: ModelConfig, weights: ModelWeights,
               sequences: list[Sequence[int]]) -> float:
    """Mean per-token next-token NLL under teacher forcing."""
    total, count = 0.0, 0
    for s in sequences:
        arr = np.asarray(s, dtype=np.int64)
        logits = forward(arr[:-1], config, weights).array
        logp = np.log(kernels.softmax_fwd(np.ascontiguousarray(logits)))
        total += float(-logp[np.arange(arr.size - 1), arr[1:]].sum())
        count += arr.size - 1
    return total / count


def unigram_nll(train_sequences: list[Sequence[int]],
                eval_sequences: list[Sequence[int]],
                vocab_size: int) -> float:
    """Counting-oracle baseline: add-one-smoothed unigram NLL."""
    counts = np.ones(vocab_size)
    for s in train_sequences:
        np.add.at(counts, np.asarray(s, dtype=np.int64), 1.0)
    logp = np.log(counts / counts.sum())
    total, n = 0.0, 0
    for s in eval_sequences:
        arr = np.asarray(s, dtype=np.int64)[1:]
        total += float(-logp[arr].sum())
        n += arr.size
    return total / n
