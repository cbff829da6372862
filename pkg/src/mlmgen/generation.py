"""Autoregressive generation from a masked language model.

The mask-append construction: to get a next-token distribution after a
prefix, run ``prefix + [MASK]*(1 + n_pad_masks) (+ [SEP])`` through the
model and read the softmax at the *first* mask.  The trailing pad masks
matter: with only one mask before ``[SEP]`` the model knows the
sequence ends immediately and shifts mass toward sentence-final tokens;
the extra masks (default two) absorb that end-of-sequence pressure so
mid-sequence continuations stay likely.

Decoding strategies share that primitive:

* greedy — argmax each step, lowest id on exact ties;
* beam — width-W, length-unnormalized by default.  Hypothesis scores
  sum the log-probabilities of exactly the emitted tokens; selecting a
  stop-token extension finishes a hypothesis without adding the stop
  term, which keeps the reported score equal to an independent
  re-scoring of the returned tokens;
* sample — temperature applied in log space, then top-k and nucleus
  filtering.  Both filters are prefixes of the same
  (descending-probability, ascending-id) order, so their intersection
  is the shorter prefix.

A constraint callable ``(step, tokens_so_far) -> allowed ids | None``
zeroes everything outside the allowed set and renormalizes; a
constraint that leaves no mass is an error, never a silent fallback.

``gibbs_generate`` is the non-autoregressive baseline: fixed-length
canvas, one uniformly chosen position re-sampled per iteration
(top-k/temperature during burn-in, argmax after).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .tokenizer import MASK_ID, SEP_ID

Constraint = Callable[[int, list[int]], Optional[Sequence[int]]]


class LengthError(ValueError):
    """Input too long for the configured cap."""


class ConstraintError(ValueError):
    """A constraint left no probability mass to renormalize."""


@dataclass
class GenerationConfig:
    n_pad_masks: int = 2
    append_sep: bool = True
    max_new_tokens: int = 32
    strategy: str = "greedy"          # greedy | beam | sample
    beam_width: int = 4
    top_k: int = 64                   # 0 disables the k filter
    top_p: float = 0.9
    temperature: float = 0.2
    stop_tokens: tuple[int, ...] = (SEP_ID,)
    constraint: Optional[Constraint] = None
    max_input_len: int = 2048
    length_normalize: bool = False    # beam: divide final scores by length

    def __post_init__(self):
        if self.n_pad_masks < 0:
            raise ValueError("n_pad_masks must be >= 0")
        if self.max_new_tokens < 0:
            raise ValueError("max_new_tokens must be >= 0")
        if self.strategy not in ("greedy", "beam", "sample"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.top_k < 0:
            raise ValueError("top_k must be >= 0 (0 disables)")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


def next_token_dist(model, prefix: Sequence[int],
                    cfg: GenerationConfig) -> np.ndarray:
    """Distribution over the next token after ``prefix`` (float64
    probabilities, length vocab)."""
    prefix = list(prefix)
    total = len(prefix) + 1 + cfg.n_pad_masks + (1 if cfg.append_sep else 0)
    if total > cfg.max_input_len:
        raise LengthError(
            f"mask-append input of {total} tokens exceeds the cap of "
            f"{cfg.max_input_len}")
    seq = prefix + [MASK_ID] * (1 + cfg.n_pad_masks)
    if cfg.append_sep:
        seq.append(SEP_ID)
    logits = model.logits(seq)
    row = np.ascontiguousarray(logits[len(prefix)][None, :])
    return kernels.softmax_fwd(row)[0]


def apply_constraint(probs: np.ndarray,
                     allowed: Optional[Sequence[int]]) -> np.ndarray:
    """Zero out disallowed ids and renormalize."""
    if allowed is None:
        return probs
    keep = np.zeros_like(probs)
    idx = np.asarray(list(allowed), dtype=np.int64)
    if idx.size:
        if idx.min() < 0 or idx.max() >= probs.size:
            raise ValueError("constraint id outside the vocabulary")
        keep[idx] = probs[idx]
    mass = keep.sum()
    if mass <= 0.0:
        raise ConstraintError(
            "constraint disallows every token with probability mass")
    return keep / mass


def _step_dist(model, prompt, tokens, step, cfg) -> np.ndarray:
    probs = next_token_dist(model, list(prompt) + tokens, cfg)
    if cfg.constraint is not None:
        probs = apply_constraint(probs, cfg.constraint(step, tokens))
    return probs


def _greedy(model, prompt, cfg) -> list[int]:
    out: list[int] = []
    for step in range(cfg.max_new_tokens):
        probs = _step_dist(model, prompt, out, step, cfg)
        tok = int(np.argmax(probs))  # first maximum -> lowest id on ties
        if tok in cfg.stop_tokens:
            break
        out.append(tok)
    return out


def _safe_log(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(probs > 0.0, np.log(probs), -np.inf)


def beam_search(model, prompt, cfg: GenerationConfig
                ) -> list[tuple[list[int], float]]:
    """All surviving hypotheses, best first.

    Scores are sums of emitted-token log-probabilities (no stop-token
    term, no length bonus); ties order lexicographically by token ids.
    With ``length_normalize`` the final ordering divides by hypothesis
    length, pruning still uses raw sums.
    """
    active: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for step in range(cfg.max_new_tokens):
        if not active:
            break
        if finished:
            best_done = max(s for _, s in finished)
            if all(s < best_done for _, s in active):
                break  # scores only decrease along a hypothesis
        candidates: list[tuple[float, float, list[int], int]] = []
        for tokens, score in active:
            probs = _step_dist(model, prompt, tokens, step, cfg)
            logp = _safe_log(probs)
            for tok in np.flatnonzero(probs > 0.0):
                candidates.append((score + logp[tok], score, tokens, int(tok)))
        candidates.sort(key=lambda c: (-c[0], c[2] + [c[3]]))
        active = []
        for ext_score, base_score, tokens, tok in candidates[:cfg.beam_width]:
            if tok in cfg.stop_tokens:
                # rank the stop extension by its full score, but report
                # only the emitted-token sum so re-scoring reproduces it
                finished.append((tokens, base_score))
            else:
                active.append((tokens + [tok], ext_score))
    pool = finished + active
    if not pool:
        pool = [([], 0.0)]

    def final_key(item):
        tokens, score = item
        if cfg.length_normalize and tokens:
            score = score / len(tokens)
        return (-score, tokens)

    return [(tokens, score) for tokens, score in sorted(pool, key=final_key)]


def filtered_distribution(probs: np.ndarray,
                          cfg: GenerationConfig) -> np.ndarray:
    """Temperature + top-k + nucleus filtering of one distribution."""
    logp = _safe_log(probs) / cfg.temperature
    logp -= logp.max()
    p = np.exp(logp)
    p /= p.sum()
    order = np.lexsort((np.arange(p.size), -p))  # desc prob, asc id
    cut = p.size
    if cfg.top_k:
        cut = min(cut, cfg.top_k)
    if cfg.top_p < 1.0:
        csum = np.cumsum(p[order])
        nucleus = int(np.searchsorted(csum, cfg.top_p) + 1)
        cut = min(cut, nucleus)
    keep = order[:cut]
    out = np.zeros_like(p)
    out[keep] = p[keep]
    out /= out.sum()
    return out


def _sample(model, prompt, cfg, rng: np.random.Generator) -> list[int]:
    out: list[int] = []
    for step in range(cfg.max_new_tokens):
        probs = _step_dist(model, prompt, out, step, cfg)
        probs = filtered_distribution(probs, cfg)
        tok = int(rng.choice(probs.size, p=probs))
        if tok in cfg.stop_tokens:
            break
        out.append(tok)
    return out


def generate(model, prompt: Sequence[int], cfg: GenerationConfig,
             rng: Optional[np.random.Generator] = None) -> list[int]:
    """Continuation token ids for a prompt (stop token not included)."""
    if cfg.strategy == "greedy":
        return _greedy(model, prompt, cfg)
    if cfg.strategy == "beam":
        return beam_search(model, prompt, cfg)[0][0]
    if rng is None:
        raise ValueError("strategy 'sample' needs an rng")
    return _sample(model, prompt, cfg, rng)


def gibbs_generate(model, prompt: Sequence[int], length: int, *,
                   iters: int = 500, burn_in: int = 250, top_k: int = 100,
                   temperature: float = 1.0, init: str = "mask",
                   append_sep: bool = True,
                   rng: Optional[np.random.Generator] = None) -> list[int]:
    """Fixed-length Gibbs resampling baseline.

    Starts from an all-``[MASK]`` canvas (or random non-special tokens
    with ``init='random'``), then repeatedly re-samples one uniformly
    chosen position conditioned on everything else.  The first
    ``burn_in`` iterations sample from the top-k/temperature-filtered
    conditional; later iterations take the argmax.  ``iters == 0``
    returns the untouched canvas.
    """
    if length <= 0:
        raise ValueError("canvas length must be positive")
    if init not in ("mask", "random"):
        raise ValueError(f"unknown init {init!r}")
    if rng is None:
        raise ValueError("gibbs_generate needs an rng")
    vocab = model.logits(list(prompt) + [MASK_ID]).shape[-1]
    if init == "mask":
        state = [MASK_ID] * length
    else:
        if vocab <= 5:
            raise ValueError("random init needs non-special vocabulary ids")
        state = [int(t) for t in rng.integers(5, vocab, size=length)]
    prompt = list(prompt)
    filt = GenerationConfig(top_k=top_k, top_p=1.0, temperature=temperature)
    for it in range(iters):
        pos = int(rng.integers(length))
        seq = prompt + state[:pos] + [MASK_ID] + state[pos + 1:]
        if append_sep:
            seq.append(SEP_ID)
        logits = model.logits(seq)
        row = np.ascontiguousarray(logits[len(prompt) + pos][None, :])
        probs = kernels.softmax_fwd(row)[0]
        if it < burn_in:
            probs = filtered_distribution(probs, filt)
            state[pos] = int(rng.choice(probs.size, p=probs))
        else:
            state[pos] = int(np.argmax(probs))
    return state


def digit_constraint(digit_ids: Sequence[int], span: int) -> Constraint:
    """Allow exactly ``span`` digit tokens, then force a stop."""
    digits = tuple(int(d) for d in digit_ids)

    def allowed(step: int, tokens: list[int]) -> Optional[Sequence[int]]:
        if len(tokens) < span:
            return digits
        return (SEP_ID,)

    return allowed
