"""Ready-made evaluation tasks over the synthetic corpora.

Each builder returns a ``TaskSpec`` whose prompt wording matches the
corresponding training corpus exactly, so evaluation measures the
inference method rather than prompt-format transfer:

* translation — map source words through the fixed bijection; prompts
  look like the stacked demonstration lines in the parallel corpus;
* idiom ranking — choose between the in-distribution destination
  ("to the <noun's place> .") and the rare fixed idiom; the candidates
  have equal token length so scoring differences are not a length
  artifact;
* mention classification — yes/no question with the same wording as
  the question lines injected into the grammar corpus;
* digit QA — regenerate a six-digit number planted in filler text, the
  training-length version of the haystack benchmark.
"""

from __future__ import annotations

import numpy as np

from .corpora import (
    ADJECTIVES,
    IDIOM,
    MENTION_QUESTION,
    NEEDLE_ANSWER_PREFIX,
    NEEDLE_FACT_PREFIX,
    NEEDLE_PREAMBLE,
    NEEDLE_QUESTION,
    NOUNS,
    SEP_TEXT,
    SOURCE_WORDS,
    VERBS,
    WORD_MAPPING,
    content_words,
    destination_for,
    noun_phrase,
    plain_sentence,
    random_needle,
    spaced_digits,
    word_run,
)
from .harness import PromptTemplate, TaskSpec
from .ranking import ScoringMethod


def _source_phrase(rng, min_words=2, max_words=6) -> tuple[str, str]:
    n = int(rng.integers(min_words, max_words + 1))
    words = [SOURCE_WORDS[rng.integers(len(SOURCE_WORDS))]
             for _ in range(n)]
    return " ".join(words), " ".join(WORD_MAPPING[w] for w in words)


def make_translation_task(*, n_examples: int = 220, n_pool: int = 64,
                          n_shots: int = 1, seed: int = 0) -> TaskSpec:
    rng = np.random.default_rng((seed, 101))
    examples = []
    for _ in range(n_examples):
        source, answer = _source_phrase(rng)
        examples.append({"source": source, "answer": answer})
    pool = []
    for _ in range(n_pool):
        source, answer = _source_phrase(rng)
        pool.append({"source": source, "answer": answer})
    template = PromptTemplate("SRC: {$source} TGT: {$answer}",
                              candidate_slot="answer",
                              shot_separator=SEP_TEXT)
    return TaskSpec(kind="generation", template=template, metric="bleu",
                    examples=examples, train_pool=pool, n_shots=n_shots)


def make_idiom_ranking_task(*, n_examples: int = 500, seed: int = 0,
                            scoring: ScoringMethod | None = None
                            ) -> TaskSpec:
    """Gold destination vs. the idiom, shuffled candidate order."""
    rng = np.random.default_rng((seed, 202))
    idiom_candidate = f"{IDIOM} ."
    examples = []
    for _ in range(n_examples):
        subj, noun = noun_phrase(rng)
        gold = f"to the {destination_for(noun, int(rng.integers(2)))} ."
        candidates = [gold, idiom_candidate]
        if rng.random() < 0.5:
            candidates.reverse()
        examples.append({"context": f"{subj} went", "answer": gold,
                         "candidates": candidates})
    template = PromptTemplate("{$context} {$answer}",
                              candidate_slot="answer")
    return TaskSpec(kind="ranking", template=template, metric="accuracy",
                    examples=examples,
                    scoring=scoring or ScoringMethod(kind="pll"))


def make_mention_classification_task(*, n_examples: int = 300,
                                     seed: int = 0,
                                     scoring: ScoringMethod | None = None
                                     ) -> TaskSpec:
    """Balanced yes/no mention questions in the grammar-corpus wording."""
    rng = np.random.default_rng((seed, 303))
    examples = []
    for i in range(n_examples):
        passage = plain_sentence(rng)
        words = content_words(passage)
        if i % 2 == 0:
            word, answer = words[rng.integers(len(words))], "yes"
        else:
            pool = [w for w in ADJECTIVES + NOUNS + VERBS
                    if w not in words]
            word, answer = pool[rng.integers(len(pool))], "no"
        examples.append({"passage": passage, "word": word,
                         "answer": answer, "candidates": ["yes", "no"]})
    template = PromptTemplate(
        f"{{$passage}}{SEP_TEXT}{MENTION_QUESTION} {{$word}} ?"
        f"{SEP_TEXT}answer : {{$answer}}",
        candidate_slot="answer")
    return TaskSpec(kind="ranking", template=template, metric="macro_f1",
                    examples=examples,
                    scoring=scoring or ScoringMethod(kind="pll"))


def make_digit_qa_task(*, n_examples: int = 200, seed: int = 0,
                       min_tokens: int = 40, max_tokens: int = 56
                       ) -> TaskSpec:
    """Training-length needle passages; the answer is the spaced digits."""
    rng = np.random.default_rng((seed, 404))
    examples = []
    for _ in range(n_examples):
        needle = spaced_digits(random_needle(rng))
        fact = f"{NEEDLE_FACT_PREFIX} {needle} ."
        base = [NEEDLE_PREAMBLE, fact, NEEDLE_QUESTION,
                NEEDLE_ANSWER_PREFIX]
        base_tokens = sum(len(s.split()) for s in base) + len(base) - 1
        target = int(rng.integers(min_tokens, max_tokens + 1))
        budget = max(target - base_tokens, 0)
        if budget >= 4 and rng.random() < 0.8:
            total = budget - 2
            n_before = int(rng.integers(1, total))
            n_after = total - n_before
        elif budget >= 2:
            if rng.random() < 0.5:
                n_before, n_after = budget - 1, 0
            else:
                n_before, n_after = 0, budget - 1
        else:
            n_before = n_after = 0
        parts = [NEEDLE_PREAMBLE]
        if n_before:
            parts.append(word_run(rng, n_before))
        parts.append(fact)
        if n_after:
            parts.append(word_run(rng, n_after))
        parts.append(NEEDLE_QUESTION)
        passage = SEP_TEXT.join(parts)
        examples.append({"passage": passage, "answer": needle})
    template = PromptTemplate(
        f"{{$passage}}{SEP_TEXT}{NEEDLE_ANSWER_PREFIX} {{$answer}}",
        candidate_slot="answer")
    return TaskSpec(kind="generation", template=template,
                    metric="exact_match", examples=examples)
