"""Synthetic training corpora.

Four generators, all deterministic in (kind, size, seed):

* ``grammar_sentences`` — short subject/verb/object sentences from
  closed word pools, optionally followed by a yes/no "does the text
  mention X?" question (``qa_rate``).
* ``parallel_pairs`` — lines ``SRC: <words> TGT: <mapped words>`` where
  the target is a fixed token-wise bijection of the source.
* ``digit_facts`` — haystack lines that state a six-digit magic number,
  bury it in filler, and end with a question/answer tail echoing it.
* ``idiom_injected`` — grammar lines whose final sentence continues
  "<noun> went ..." either with that noun's destination phrase or, at
  ``idiom_rate``, with a fixed idiom.  The idiom words appear nowhere
  else, so its tokens are mutually predictive but individually rare —
  the worst case for scoring schemes that let masked neighbours leak.

Line text and the prompt templates in ``tasks``/``harness`` share the
constants below; training and evaluation must tokenize identically for
the desk-scale models to transfer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizer import NEWLINE_TOKEN

SEP_TEXT = f" {NEWLINE_TOKEN} "  # spelled-out line separator inside a line

DETERMINERS = ("the", "a")
ADJECTIVES = ("red", "blue", "big", "small", "old", "young")
NOUNS = ("cat", "dog", "bird", "fox", "horse", "mouse", "wolf", "bear")
VERBS = ("sees", "likes", "chases", "finds", "follows", "helps")

# two destination phrases per noun, in NOUNS order
DESTINATIONS = (("mat", "rug"), ("bone", "bowl"), ("nest", "branch"),
                ("den", "burrow"), ("barn", "field"), ("hole", "tunnel"),
                ("tree", "river"), ("cave", "cliff"))

IDIOM = "zig zag zoom"

SOURCE_WORDS = ("sun", "moon", "star", "tree", "rock", "fish", "bird",
                "rain", "snow", "wind", "fire", "leaf", "sand", "wave",
                "cloud", "ice")
TARGET_WORDS = ("sol", "luna", "stella", "arbor", "petra", "pesca", "avis",
                "pluvia", "nix", "ventus", "ignis", "folium", "arena",
                "unda", "nubes", "glacies")
WORD_MAPPING = dict(zip(SOURCE_WORDS, TARGET_WORDS))

# kept terse: the haystack benchmark builds exact-length prompts from
# these lines, and its shortest grid point must fit them plus filler
NEEDLE_PREAMBLE = "Remember the number ."
NEEDLE_FACT_PREFIX = "the magic number is"
NEEDLE_QUESTION = "what is the magic number ?"
NEEDLE_ANSWER_PREFIX = "the answer is"

MENTION_QUESTION = "does the text mention"

CORPUS_KINDS = ("grammar_sentences", "parallel_pairs", "digit_facts",
                "idiom_injected")


@dataclass
class CorpusSpec:
    """Recipe for one synthetic corpus."""

    kind: str
    size: int
    seed: int = 0
    idiom: str = IDIOM
    idiom_rate: float = 0.1
    qa_rate: float = 0.0        # grammar_sentences: mention-question lines
    min_tokens: int = 48        # digit_facts: line length band (tokens)
    max_tokens: int = 64
    truncate_rate: float = 0.3  # digit_facts: lines cut inside the answer

    def __post_init__(self):
        if self.kind not in CORPUS_KINDS:
            raise ValueError(
                f"unknown corpus kind {self.kind!r}; expected one of "
                f"{CORPUS_KINDS}")
        if self.size <= 0:
            raise ValueError("corpus size must be positive")
        for name in ("idiom_rate", "qa_rate", "truncate_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def noun_phrase(rng, with_adj=None) -> tuple[str, str]:
    """Returns (phrase, noun).  Adjective presence is a coin flip unless
    forced."""
    det = DETERMINERS[rng.integers(len(DETERMINERS))]
    noun = NOUNS[rng.integers(len(NOUNS))]
    use_adj = bool(rng.random() < 0.5) if with_adj is None else with_adj
    if use_adj:
        adj = ADJECTIVES[rng.integers(len(ADJECTIVES))]
        return f"{det} {adj} {noun}", noun
    return f"{det} {noun}", noun


def plain_sentence(rng) -> str:
    subj, _ = noun_phrase(rng)
    verb = VERBS[rng.integers(len(VERBS))]
    obj, _ = noun_phrase(rng)
    return f"{subj} {verb} {obj} ."


def destination_for(noun: str, which: int) -> str:
    return DESTINATIONS[NOUNS.index(noun)][which]


def went_sentence(rng, idiom: str, idiom_rate: float
                  ) -> tuple[str, str, bool]:
    """One '<subject> went ...' sentence.  Returns (sentence, subject
    phrase, used_idiom)."""
    subj, noun = noun_phrase(rng)
    use_idiom = bool(rng.random() < idiom_rate)
    if use_idiom:
        tail = idiom
    else:
        tail = f"to the {destination_for(noun, int(rng.integers(2)))}"
    return f"{subj} went {tail} .", subj, use_idiom


def content_words(sentence: str) -> list[str]:
    skip = set(DETERMINERS) | {".", NEWLINE_TOKEN}
    return [w for w in sentence.split() if w not in skip]


def _grammar_line(rng, qa_rate: float) -> str:
    n_sent = 1 + int(rng.random() < 0.4)
    sentences = [plain_sentence(rng) for _ in range(n_sent)]
    joiner = SEP_TEXT if rng.random() < 0.25 else " "
    passage = joiner.join(sentences)
    if rng.random() >= qa_rate:
        return passage
    mentioned = bool(rng.random() < 0.5)
    words = content_words(passage)
    if mentioned:
        word = words[rng.integers(len(words))]
        answer = "yes"
    else:
        pool = [w for w in ADJECTIVES + NOUNS + VERBS if w not in words]
        word = pool[rng.integers(len(pool))]
        answer = "no"
    return (f"{passage}{SEP_TEXT}{MENTION_QUESTION} {word} ?"
            f"{SEP_TEXT}answer : {answer}")


def _parallel_pair(rng) -> str:
    n = int(rng.integers(2, 7))
    words = [SOURCE_WORDS[rng.integers(len(SOURCE_WORDS))] for _ in range(n)]
    mapped = [WORD_MAPPING[w] for w in words]
    return f"SRC: {' '.join(words)} TGT: {' '.join(mapped)}"


def _parallel_line(rng) -> str:
    # about a third of the lines stack two pairs behind a separator, so
    # demonstration-then-query prompts look like training text
    if rng.random() < 0.35:
        return f"{_parallel_pair(rng)}{SEP_TEXT}{_parallel_pair(rng)}"
    return _parallel_pair(rng)


def spaced_digits(number: int) -> str:
    return " ".join(str(number))


def random_needle(rng) -> int:
    """Six-digit needle, uniform over [100000, 999999]."""
    return int(rng.integers(100000, 1000000))


def word_run(rng, n: int) -> str:
    """Exactly n words streamed from plain sentences (periods included),
    cut at an arbitrary boundary — the same filler text the haystack
    prompts are padded with."""
    words: list[str] = []
    while len(words) < n:
        words.extend(plain_sentence(rng).split())
    return " ".join(words[:n])


def _digit_fact_line(rng, spec: CorpusSpec) -> str:
    needle = spaced_digits(random_needle(rng))
    fact = f"{NEEDLE_FACT_PREFIX} {needle} ."
    answer = f"{NEEDLE_ANSWER_PREFIX} {needle} ."
    if rng.random() < spec.truncate_rate:
        keep = int(rng.integers(0, 6))
        parts = [NEEDLE_ANSWER_PREFIX] + needle.split()[:keep]
        answer = " ".join(parts)
    base = [NEEDLE_PREAMBLE, fact, NEEDLE_QUESTION, answer]
    base_tokens = sum(len(s.split()) for s in base) + len(base) - 1
    target = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))

    # Word-granular filler runs before/after the fact (each costs its
    # words plus one separator), so fact lines occupy every offset and
    # lines land exactly on the target length.
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
    segments = [NEEDLE_PREAMBLE]
    if n_before:
        segments.append(word_run(rng, n_before))
    segments.append(fact)
    if n_after:
        segments.append(word_run(rng, n_after))
    segments.extend([NEEDLE_QUESTION, answer])
    return SEP_TEXT.join(segments)


def _idiom_line(rng, spec: CorpusSpec) -> str:
    parts = []
    if rng.random() < 0.5:
        parts.append(plain_sentence(rng))
    sentence, _, _ = went_sentence(rng, spec.idiom, spec.idiom_rate)
    parts.append(sentence)
    return " ".join(parts)


def make_corpus(spec: CorpusSpec) -> list[str]:
    """Deterministic list of corpus lines for a spec."""
    rng = np.random.default_rng(spec.seed)
    out: list[str] = []
    for _ in range(spec.size):
        if spec.kind == "grammar_sentences":
            out.append(_grammar_line(rng, spec.qa_rate))
        elif spec.kind == "parallel_pairs":
            out.append(_parallel_line(rng))
        elif spec.kind == "digit_facts":
            out.append(_digit_fact_line(rng, spec))
        else:
            out.append(_idiom_line(rng, spec))
    return out
