"""Few-shot prompting harness and the haystack length benchmark.

Prompt templates use ``{$name}`` placeholders.  The candidate slot —
the placeholder the scored candidate or generated answer lands in —
must be the last thing in the template so that ranking can score
candidates as pure continuations and generation can simply decode past
the prompt.  Few-shot prompts join fully filled demonstration examples
with a separator, then the evaluation example rendered up to its
candidate slot.

``needle_grid`` measures retrieval over context length: a six-digit
number is embedded in filler text at a controlled depth, the prompt is
assembled to an exact token length, and the model must regenerate the
number under a digits-only constraint.  ``CopyOracle`` is a perfect
retriever used to self-test the assembly and decoding machinery: if
the oracle does not score 1.0 everywhere, the benchmark is broken, not
the model.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .corpora import (
    NEEDLE_ANSWER_PREFIX,
    NEEDLE_FACT_PREFIX,
    NEEDLE_PREAMBLE,
    NEEDLE_QUESTION,
    SEP_TEXT,
    plain_sentence,
    random_needle,
    spaced_digits,
)
from .generation import GenerationConfig, digit_constraint, generate
from .metrics import METRICS, compute_metric
from .ranking import ScoringMethod, rank
from .tokenizer import (
    MASK_ID,
    NEWLINE_TOKEN,
    SEP_ID,
    UNK_ID,
    Vocabulary,
    decode,
    encode,
    encode_with_word_boundaries,
)

_PLACEHOLDER = re.compile(r"\{\$(\w+)\}")


@dataclass
class PromptTemplate:
    body: str
    candidate_slot: str
    shot_separator: str = "\n\n"

    def __post_init__(self):
        names = self.variables()
        if self.candidate_slot not in names:
            raise ValueError(
                f"candidate slot {self.candidate_slot!r} does not appear "
                f"in the template")
        if names.count(self.candidate_slot) != 1:
            raise ValueError("candidate slot must appear exactly once")
        tail = self.body.split("{$" + self.candidate_slot + "}", 1)[1]
        if tail.strip():
            raise ValueError(
                "candidate slot must be terminal so candidates score as "
                "continuations")

    def variables(self) -> list[str]:
        return _PLACEHOLDER.findall(self.body)

    def _substitute(self, text: str, bindings: dict) -> str:
        missing = [n for n in _PLACEHOLDER.findall(text)
                   if n not in bindings]
        if missing:
            raise ValueError(f"unbound template variables: {missing}")
        return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), text)

    def fill(self, bindings: dict) -> str:
        """Render the template with every placeholder bound."""
        return self._substitute(self.body, bindings)

    def prefix(self, bindings: dict) -> str:
        """Render everything before the candidate slot."""
        head = self.body.split("{$" + self.candidate_slot + "}", 1)[0]
        return self._substitute(head, bindings)


def sample_shots(train_pool: Sequence[dict], n_shots: int,
                 rng: np.random.Generator,
                 exclude: Optional[dict] = None) -> list[dict]:
    """Draw demonstrations without replacement, never the held-out
    example itself."""
    pool = [ex for ex in train_pool if ex != exclude]
    if n_shots > len(pool):
        raise ValueError(
            f"asked for {n_shots} shots but only {len(pool)} candidates "
            f"remain in the pool")
    if n_shots == 0:
        return []
    picks = rng.choice(len(pool), size=n_shots, replace=False)
    return [pool[int(i)] for i in picks]


def assemble_fewshot(template: PromptTemplate, shots: Sequence[dict],
                     eval_bindings: dict) -> str:
    parts = [template.fill(shot) for shot in shots]
    parts.append(template.prefix(eval_bindings))
    return template.shot_separator.join(parts)


TASK_KINDS = ("ranking", "generation")


@dataclass
class TaskSpec:
    kind: str
    template: PromptTemplate
    metric: str
    examples: list[dict]
    train_pool: list[dict] = field(default_factory=list)
    n_shots: int = 0
    scoring: ScoringMethod = field(default_factory=ScoringMethod)
    answer_context_text: Optional[str] = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not self.examples:
            raise ValueError("a task needs at least one example")
        if self.n_shots < 0:
            raise ValueError("n_shots must be >= 0")
        slot = self.template.candidate_slot
        for i, ex in enumerate(self.examples):
            if slot not in ex:
                raise ValueError(f"example {i} lacks the gold {slot!r}")
            if self.kind == "ranking":
                cands = ex.get("candidates")
                if not cands:
                    raise ValueError(f"example {i} lacks candidates")
                if ex[slot] not in cands:
                    raise ValueError(
                        f"example {i}: gold answer missing from candidates")
        if (self.scoring.normalize_by_unconditional
                and self.scoring.answer_context is None
                and self.answer_context_text is None):
            raise ValueError(
                "normalized scoring needs answer_context_text")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "metric": self.metric,
            "n_shots": self.n_shots,
            "template": {
                "body": self.template.body,
                "candidate_slot": self.template.candidate_slot,
                "shot_separator": self.template.shot_separator,
            },
            "scoring": {
                "kind": self.scoring.kind,
                "n_extra_masks": self.scoring.n_extra_masks,
                "n_pad_masks": self.scoring.n_pad_masks,
                "n_trailing_pad_masks": self.scoring.n_trailing_pad_masks,
                "append_sep": self.scoring.append_sep,
                "normalize_by_unconditional":
                    self.scoring.normalize_by_unconditional,
            },
            "answer_context_text": self.answer_context_text,
            "examples": self.examples,
            "train_pool": self.train_pool,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        template = PromptTemplate(**data["template"])
        scoring = ScoringMethod(**data.get("scoring", {}))
        return cls(kind=data["kind"], template=template,
                   metric=data["metric"], examples=data["examples"],
                   train_pool=data.get("train_pool", []),
                   n_shots=data.get("n_shots", 0), scoring=scoring,
                   answer_context_text=data.get("answer_context_text"))


def save_task(path, spec: TaskSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)


def load_task(path) -> TaskSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return TaskSpec.from_dict(json.load(fh))


@dataclass
class TaskResult:
    metric: str
    score: float
    predictions: list[str]
    golds: list[str]
    records: list[dict]


RECORD_FIELDS = ("example_id", "prediction", "gold", "correct", "score")


def write_records_csv(path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        writer.writeheader()
        writer.writerows(records)


def _prompt_for(spec: TaskSpec, example: dict, rng) -> str:
    shots = sample_shots(spec.train_pool, spec.n_shots, rng,
                         exclude=example)
    bindings = {k: v for k, v in example.items() if k != "candidates"}
    return assemble_fewshot(spec.template, shots, bindings)


def run_ranking_task(model, vocab: Vocabulary, spec: TaskSpec, *,
                     seed: int = 0, limit: Optional[int] = None,
                     out_csv=None) -> TaskResult:
    if spec.kind != "ranking":
        raise ValueError(f"not a ranking task: {spec.kind!r}")
    method = spec.scoring
    if (method.normalize_by_unconditional
            and method.answer_context is None):
        method = replace(method, answer_context=encode(
            spec.answer_context_text, vocab))
    word_aware = method.kind in ("pll_word_l2r", "pll_whole_word")
    slot = spec.template.candidate_slot
    predictions, golds, records = [], [], []
    for i, example in enumerate(spec.examples[:limit]):
        rng = np.random.default_rng((seed, i))
        context_ids = encode(_prompt_for(spec, example, rng), vocab)
        cand_ids, spans = [], []
        for cand in example["candidates"]:
            if word_aware:
                ids, ws = encode_with_word_boundaries(cand, vocab)
            else:
                ids, ws = encode(cand, vocab), None
            cand_ids.append(ids)
            spans.append(ws)
        ranked = rank(model, context_ids, cand_ids, method,
                      word_spans=spans if word_aware else None)
        prediction = example["candidates"][ranked[0].index]
        gold = example[slot]
        predictions.append(prediction)
        golds.append(gold)
        records.append({"example_id": i, "prediction": prediction,
                        "gold": gold, "correct": int(prediction == gold),
                        "score": f"{ranked[0].score:.8f}"})
    score = compute_metric(spec.metric, predictions, golds)
    if out_csv is not None:
        write_records_csv(out_csv, records)
    return TaskResult(spec.metric, score, predictions, golds, records)


def run_generation_task(model, vocab: Vocabulary, spec: TaskSpec,
                        gen_cfg: GenerationConfig, *, seed: int = 0,
                        limit: Optional[int] = None, out_csv=None,
                        stop_at_newline: bool = True) -> TaskResult:
    if spec.kind != "generation":
        raise ValueError(f"not a generation task: {spec.kind!r}")
    slot = spec.template.candidate_slot
    newline_id = vocab.id_of(NEWLINE_TOKEN)
    predictions, golds, records = [], [], []
    for i, example in enumerate(spec.examples[:limit]):
        rng = np.random.default_rng((seed, i))
        prompt_ids = encode(_prompt_for(spec, example, rng), vocab)
        out_ids = generate(model, prompt_ids, gen_cfg, rng=rng)
        if stop_at_newline and newline_id in out_ids:
            out_ids = out_ids[:out_ids.index(newline_id)]
        prediction = decode(out_ids, vocab)
        gold = str(example[slot])
        predictions.append(prediction)
        golds.append(gold)
        records.append({"example_id": i, "prediction": prediction,
                        "gold": gold, "correct": int(prediction == gold),
                        "score": ""})
    score = compute_metric(spec.metric, predictions, golds)
    if out_csv is not None:
        write_records_csv(out_csv, records)
    return TaskResult(spec.metric, score, predictions, golds, records)


# ---------------------------------------------------------------------------
# haystack length benchmark


@dataclass
class NeedleConfig:
    lengths: tuple[int, ...] = (32, 64, 128, 192)
    depths: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    trials: int = 20
    seed: int = 0
    digits: int = 6

    def __post_init__(self):
        if not self.lengths or any(l <= 0 for l in self.lengths):
            raise ValueError("lengths must be positive")
        if not self.depths or any(not 0.0 <= d <= 1.0 for d in self.depths):
            raise ValueError("depths must lie in [0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.digits < 1:
            raise ValueError("digits must be >= 1")


def _filler_words(vocab: Vocabulary, rng, n: int) -> str:
    """Exactly n single-token in-vocabulary filler words."""
    words: list[str] = []
    while len(words) < n:
        for word in plain_sentence(rng).split():
            if len(words) == n:
                break
            ids = encode(word, vocab)
            if len(ids) != 1 or ids[0] == UNK_ID:
                raise ValueError(
                    f"filler word {word!r} is not a single known token")
            words.append(word)
    return " ".join(words)


def assemble_needle_prompt(vocab: Vocabulary, needle: int, length: int,
                           depth: float, rng
                           ) -> tuple[list[int], list[int]]:
    """Prompt of exactly ``length`` tokens with the needle fact at the
    requested depth; returns (prompt ids, needle digit ids)."""
    fact = f"{NEEDLE_FACT_PREFIX} {spaced_digits(needle)} ."
    fixed = [NEEDLE_PREAMBLE, fact, NEEDLE_QUESTION, NEEDLE_ANSWER_PREFIX]
    fixed_tokens = sum(len(encode(part, vocab)) for part in fixed)
    budget = length - fixed_tokens
    # each filler word is one token; each joined line adds one separator
    if depth == 0.0:
        n_before, n_after = 0, budget - 4
    elif depth == 1.0:
        n_before, n_after = budget - 4, 0
    else:
        total = budget - 5
        n_before = min(max(int(round(depth * total)), 1), total - 1)
        n_after = total - n_before
    if n_before < 0 or n_after < 0 or (n_before == 0 and n_after == 0):
        raise ValueError(
            f"length {length} cannot fit the needle prompt scaffolding")
    lines = [NEEDLE_PREAMBLE]
    if n_before:
        lines.append(_filler_words(vocab, rng, n_before))
    lines.append(fact)
    if n_after:
        lines.append(_filler_words(vocab, rng, n_after))
    lines.extend([NEEDLE_QUESTION, NEEDLE_ANSWER_PREFIX])
    prompt_ids = encode(SEP_TEXT.join(lines), vocab)
    if len(prompt_ids) != length:
        raise RuntimeError(
            f"assembled {len(prompt_ids)} tokens, wanted {length}")
    needle_ids = encode(spaced_digits(needle), vocab)
    if any(i == UNK_ID for i in prompt_ids):
        raise ValueError("needle prompt contains out-of-vocabulary tokens")
    return prompt_ids, needle_ids


NEEDLE_FIELDS = ("length", "depth", "accuracy", "trials")


def needle_grid(model, vocab: Vocabulary, cfg: NeedleConfig, *,
                gen_cfg: Optional[GenerationConfig] = None,
                out_csv=None) -> list[dict]:
    """Constrained-decoding retrieval accuracy over (length, depth)."""
    base = gen_cfg if gen_cfg is not None else GenerationConfig()
    rows = []
    for li, length in enumerate(cfg.lengths):
        for di, depth in enumerate(cfg.depths):
            hits = 0
            for trial in range(cfg.trials):
                rng = np.random.default_rng((cfg.seed, li, di, trial))
                needle = random_needle(rng)
                prompt_ids, needle_ids = assemble_needle_prompt(
                    vocab, needle, length, depth, rng)
                gcfg = replace(
                    base, strategy="greedy",
                    max_new_tokens=cfg.digits + 1,
                    max_input_len=max(base.max_input_len,
                                      length + cfg.digits + 8),
                    constraint=digit_constraint(vocab.digit_ids,
                                                cfg.digits))
                out = generate(model, prompt_ids, gcfg)
                hits += int(out == needle_ids)
            rows.append({"length": length, "depth": depth,
                         "accuracy": hits / cfg.trials,
                         "trials": cfg.trials})
    if out_csv is not None:
        with open(out_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=NEEDLE_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
    return rows


class CopyOracle:
    """Perfect retriever over the needle prompt format.

    Finds the first run of ``span`` consecutive digit tokens (the fact),
    counts how many digits have already been emitted right before the
    first mask, and puts all logit mass on the next needle digit — or on
    the terminator once the copy is complete.  Running the grid with
    this model checks the benchmark assembly, not any learned behavior.
    """

    def __init__(self, digit_ids: Sequence[int], vocab_size: int,
                 span: int = 6):
        self.digit_set = frozenset(int(d) for d in digit_ids)
        self.vocab_size = vocab_size
        self.span = span

    def _find_needle(self, ids) -> Optional[list[int]]:
        run: list[int] = []
        for tok in ids:
            if tok in self.digit_set:
                run.append(tok)
                if len(run) == self.span:
                    return run
            else:
                run = []
        return None

    def logits(self, ids):
        ids = list(ids)
        out = np.zeros((len(ids), self.vocab_size))
        needle = self._find_needle(ids)
        if needle is None or MASK_ID not in ids:
            return out
        first_mask = ids.index(MASK_ID)
        emitted = 0
        pos = first_mask - 1
        while pos >= 0 and ids[pos] in self.digit_set:
            emitted += 1
            pos -= 1
        if emitted >= self.span:
            target = SEP_ID
        else:
            target = needle[emitted]
        out[:, target] = 10.0
        return out
