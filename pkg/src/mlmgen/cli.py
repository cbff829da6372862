"""Command-line entry point.

Subcommands cover the full loop: ``train`` fits a model on a synthetic
corpus, ``generate``/``rank`` run one-off inference, ``eval`` scores a
built-in task, ``needle`` sweeps the haystack length benchmark, and
``ablate`` writes the inference-method comparison table.

Every command takes ``--config FILE`` (JSON) plus repeatable
``--set key.path=value`` overrides (values parsed as JSON, falling back
to raw strings).  Unknown keys are an error naming the key, and the
fully resolved configuration is echoed to ``config.resolved.json`` next
to the outputs, so a run is reproducible from its output directory
alone.

Heavy imports happen inside the commands: thread-count environment
variables (from ``MLMGEN_THREADS`` / ``--threads``) must be exported
before numpy first loads for run-to-run determinism.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS",
                "NUMBA_NUM_THREADS")


class ConfigError(ValueError):
    """Bad configuration file or --set override."""


def _configure_threads(threads: str | None) -> None:
    n = threads or os.environ.get("MLMGEN_THREADS", "1")
    for var in _THREAD_VARS:
        os.environ.setdefault(var, n)


# ---------------------------------------------------------------------------
# configuration plumbing


def _merge(base: dict, update: dict, path: str = "") -> None:
    for key, value in update.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} expects a section")
            _merge(base[key], value, dotted + ".")
        else:
            base[key] = value


def _apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"--set needs key=value, got {item!r}")
    dotted, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # unquoted strings are taken literally
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"config key {dotted} is a section, not a value")
    node[leaf] = value


def resolve_config(defaults: dict, args) -> dict:
    cfg = copy.deepcopy(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                _merge(cfg, json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: not valid JSON ({exc})")
    for item in getattr(args, "overrides", []) or []:
        _apply_override(cfg, item)
    return cfg


def _echo_config(out_dir: str, cfg: dict) -> None:
    path = os.path.join(out_dir, "config.resolved.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# defaults


TRAIN_DEFAULTS = {
    "corpus": {"kind": "parallel_pairs", "size": 2000, "seed": 0,
               "idiom_rate": 0.1, "qa_rate": 0.0, "min_tokens": 48,
               "max_tokens": 64, "truncate_rate": 0.3},
    "vocab_size": 128,
    "model": {"layers": 2, "heads": 4, "d_model": 64, "d_ff": 256,
              "num_buckets": 32, "max_distance": 64,
              "attention_mode": "bidirectional",
              "position_mode": "relative", "max_train_len": 64,
              "max_positions": 256, "dropout": 0.0,
              "tie_embeddings": True, "init_scale": 0.02,
              "layer_norm_eps": 1e-5},
    "train": {"steps": 2000, "batch_size": 16, "lr": 3e-3,
              "warmup_steps": 100, "beta1": 0.9, "beta2": 0.999,
              "eps": 1e-8, "weight_decay": 0.01, "grad_clip": 1.0,
              "mask_rate": 0.15, "max_span": 3, "seed": 0},
}

GENERATION_SECTION = {
    "n_pad_masks": 2, "append_sep": True, "max_new_tokens": 16,
    "strategy": "greedy", "beam_width": 4, "top_k": 64, "top_p": 0.9,
    "temperature": 0.2, "length_normalize": False, "max_input_len": 2048,
}

SCORING_SECTION = {
    "kind": "pll", "n_extra_masks": 2, "n_pad_masks": 2,
    "n_trailing_pad_masks": 0, "append_sep": True,
    "normalize_by_unconditional": False,
}

GENERATE_DEFAULTS = {
    "seed": 0,
    "digits_only": 0,
    "generation": dict(GENERATION_SECTION),
}

RANK_DEFAULTS = {
    "answer_context": None,
    "scoring": dict(SCORING_SECTION),
}

EVAL_DEFAULTS = {
    "seed": 0,
    "limit": None,
    "stop_at_newline": True,
    "digits_only": 6,  # used by the digit_qa task
    "task": {"name": "translation", "n_examples": 200, "n_pool": 64,
             "n_shots": 1, "seed": 0},
    "generation": dict(GENERATION_SECTION),
    "scoring": dict(SCORING_SECTION),
}

NEEDLE_DEFAULTS = {
    "needle": {"lengths": [32, 64, 128, 192],
               "depths": [0.0, 0.25, 0.5, 0.75, 1.0],
               "trials": 20, "seed": 0, "digits": 6},
    "generation": dict(GENERATION_SECTION),
}

ABLATE_DEFAULTS = {
    "seed": 0,
    "n_examples": 200,
    "n_shots": 0,
    "pad_sweep": [0, 1, 2, 3],
    "m_sweep": [0, 1, 2, 3],
    "max_new_tokens": 10,
    "gibbs": {"iters": 500, "burn_in": 250, "top_k": 100,
              "temperature": 1.0},
}


def _load_model_and_vocab(checkpoint_path, vocab_path):
    from .model import TransformerLM
    from .tokenizer import load_vocab

    return TransformerLM.from_checkpoint(checkpoint_path), \
        load_vocab(vocab_path)


def _generation_config(section: dict, **extra):
    from .generation import GenerationConfig

    return GenerationConfig(**section, **extra)


def _scoring_method(section: dict, answer_context=None):
    from .ranking import ScoringMethod

    return ScoringMethod(**section, answer_context=answer_context)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = resolve_config(TRAIN_DEFAULTS, args)
    if args.seed is not None:
        cfg["corpus"]["seed"] = args.seed
        cfg["train"]["seed"] = args.seed

    from .corpora import CorpusSpec, make_corpus
    from .model import ModelConfig, TransformerLM, save_checkpoint
    from .tokenizer import build_vocab, encode, save_vocab
    from .training import TrainConfig, train, write_loss_csv

    lines = make_corpus(CorpusSpec(**cfg["corpus"]))
    vocab = build_vocab(lines, cfg["vocab_size"])
    sequences = [encode(line, vocab, add_sep=True) for line in lines]
    model_config = ModelConfig(vocab_size=vocab.size, **cfg["model"])
    weights, trace = train(model_config, sequences,
                           TrainConfig(**cfg["train"]))

    os.makedirs(args.out, exist_ok=True)
    save_vocab(vocab, os.path.join(args.out, "vocab.txt"))
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"),
                    model_config, weights)
    write_loss_csv(os.path.join(args.out, "loss.csv"), trace)
    _echo_config(args.out, cfg)
    final = trace[-1][1] if trace else float("nan")
    print(f"trained {len(trace)} steps on {len(sequences)} sequences "
          f"(vocab {vocab.size}); final loss {final:.4f}")
    print(f"wrote {args.out}/checkpoint.bin, vocab.txt, loss.csv")
    return 0


def cmd_generate(args) -> int:
    cfg = resolve_config(GENERATE_DEFAULTS, args)
    import numpy as np

    from .generation import digit_constraint, generate
    from .tokenizer import decode, encode

    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab)
    constraint = None
    if cfg["digits_only"]:
        constraint = digit_constraint(vocab.digit_ids, cfg["digits_only"])
    gen_cfg = _generation_config(cfg["generation"], constraint=constraint)
    prompt_ids = encode(args.prompt, vocab)
    out_ids = generate(model, prompt_ids, gen_cfg,
                       rng=np.random.default_rng(cfg["seed"]))
    text = decode(out_ids, vocab)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "generation.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(text + "\n")
        _echo_config(args.out, cfg)
    return 0


def cmd_rank(args) -> int:
    cfg = resolve_config(RANK_DEFAULTS, args)

    from .ranking import dump_scores, rank
    from .tokenizer import encode, encode_with_word_boundaries

    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab)
    answer_context = None
    if cfg["answer_context"] is not None:
        answer_context = encode(cfg["answer_context"], vocab)
    method = _scoring_method(cfg["scoring"], answer_context=answer_context)
    candidates = [c.strip() for c in args.candidates.split("||")]
    if not all(candidates):
        raise ConfigError("empty candidate in --candidates")
    context_ids = encode(args.context, vocab)
    word_aware = method.kind in ("pll_word_l2r", "pll_whole_word")
    cand_ids, spans = [], []
    for cand in candidates:
        if word_aware:
            ids, ws = encode_with_word_boundaries(cand, vocab)
        else:
            ids, ws = encode(cand, vocab), None
        cand_ids.append(ids)
        spans.append(ws)
    ranked = rank(model, context_ids, cand_ids, method,
                  word_spans=spans if word_aware else None)
    for place, cand in enumerate(ranked, start=1):
        print(f"{place}. score={cand.score:+.4f}  "
              f"{candidates[cand.index]}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        dump_scores(os.path.join(args.out, "scores.jsonl"), ranked, method)
        _echo_config(args.out, cfg)
    return 0


def _build_task(cfg, vocab):
    from .generation import digit_constraint
    from .tasks import (
        make_digit_qa_task,
        make_idiom_ranking_task,
        make_mention_classification_task,
        make_translation_task,
    )

    name = cfg["task"]["name"]
    n = cfg["task"]["n_examples"]
    seed = cfg["task"]["seed"]
    scoring = _scoring_method(cfg["scoring"])
    constraint = None
    if name == "translation":
        spec = make_translation_task(n_examples=n,
                                     n_pool=cfg["task"]["n_pool"],
                                     n_shots=cfg["task"]["n_shots"],
                                     seed=seed)
    elif name == "idiom":
        spec = make_idiom_ranking_task(n_examples=n, seed=seed,
                                       scoring=scoring)
    elif name == "mention":
        spec = make_mention_classification_task(n_examples=n, seed=seed,
                                                scoring=scoring)
    elif name == "digit_qa":
        spec = make_digit_qa_task(n_examples=n, seed=seed)
        if cfg["digits_only"]:
            constraint = digit_constraint(vocab.digit_ids,
                                          cfg["digits_only"])
    else:
        raise ConfigError(f"unknown task name: {name}")
    return spec, constraint


def cmd_eval(args) -> int:
    cfg = resolve_config(EVAL_DEFAULTS, args)

    from .harness import run_generation_task, run_ranking_task

    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab)
    spec, constraint = _build_task(cfg, vocab)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "results.csv")
    if spec.kind == "generation":
        gen_cfg = _generation_config(cfg["generation"],
                                     constraint=constraint)
        result = run_generation_task(
            model, vocab, spec, gen_cfg, seed=cfg["seed"],
            limit=cfg["limit"], out_csv=out_csv,
            stop_at_newline=cfg["stop_at_newline"])
    else:
        result = run_ranking_task(model, vocab, spec, seed=cfg["seed"],
                                  limit=cfg["limit"], out_csv=out_csv)
    _echo_config(args.out, cfg)
    n = len(result.predictions)
    print(f"task={cfg['task']['name']} metric={result.metric} "
          f"value={result.score:.4f} n={n}")
    print(f"wrote {out_csv}")
    return 0


def cmd_needle(args) -> int:
    cfg = resolve_config(NEEDLE_DEFAULTS, args)

    from .harness import NeedleConfig, needle_grid

    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab)
    section = cfg["needle"]
    needle_cfg = NeedleConfig(lengths=tuple(section["lengths"]),
                              depths=tuple(section["depths"]),
                              trials=section["trials"],
                              seed=section["seed"],
                              digits=section["digits"])
    gen_cfg = _generation_config(cfg["generation"])
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "needle.csv")
    rows = needle_grid(model, vocab, needle_cfg, gen_cfg=gen_cfg,
                       out_csv=out_csv)
    _echo_config(args.out, cfg)
    for length in needle_cfg.lengths:
        subset = [r["accuracy"] for r in rows if r["length"] == length]
        print(f"length={length} mean_accuracy="
              f"{sum(subset) / len(subset):.3f}")
    print(f"wrote {out_csv}")
    return 0


def _gibbs_translation_rows(model, vocab, spec, cfg):
    import numpy as np

    from .corpora import NEWLINE_TOKEN
    from .generation import gibbs_generate
    from .harness import assemble_fewshot, sample_shots
    from .metrics import compute_metric
    from .tokenizer import decode, encode

    # Same fixed token budget as the left-to-right decoder; anything the
    # sampler writes past a line break is discarded, mirroring how the
    # autoregressive rows stop at the first newline.
    newline_id = vocab.id_of(NEWLINE_TOKEN)
    rows = []
    for init in ("mask", "random"):
        predictions, golds = [], []
        for i, example in enumerate(spec.examples):
            rng = np.random.default_rng((cfg["seed"], i))
            shots = sample_shots(spec.train_pool, spec.n_shots, rng,
                                 exclude=example)
            bindings = {k: v for k, v in example.items()
                        if k != "candidates"}
            prompt_ids = encode(
                assemble_fewshot(spec.template, shots, bindings), vocab)
            state = gibbs_generate(
                model, prompt_ids, cfg["max_new_tokens"],
                iters=cfg["gibbs"]["iters"],
                burn_in=cfg["gibbs"]["burn_in"],
                top_k=cfg["gibbs"]["top_k"],
                temperature=cfg["gibbs"]["temperature"], init=init,
                rng=rng)
            if newline_id in state:
                state = state[:state.index(newline_id)]
            predictions.append(decode(state, vocab))
            golds.append(example["answer"])
        value = compute_metric(spec.metric, predictions, golds)
        rows.append({"family": "generation", "variant": f"gibbs_{init}",
                     "metric": spec.metric, "value": f"{value:.4f}",
                     "n": len(golds)})
    return rows


ABLATION_FIELDS = ("family", "variant", "metric", "value", "n")


def cmd_ablate(args) -> int:
    cfg = resolve_config(ABLATE_DEFAULTS, args)
    if not (args.gen_checkpoint or args.rank_checkpoint):
        raise ConfigError(
            "ablate needs --gen-checkpoint and/or --rank-checkpoint")

    import csv as _csv

    from .harness import run_generation_task, run_ranking_task
    from .tasks import make_idiom_ranking_task, make_translation_task

    rows = []
    if args.gen_checkpoint:
        if not args.gen_vocab:
            raise ConfigError("--gen-checkpoint needs --gen-vocab")
        model, vocab = _load_model_and_vocab(args.gen_checkpoint,
                                             args.gen_vocab)
        spec = make_translation_task(n_examples=cfg["n_examples"],
                                     seed=cfg["seed"],
                                     n_shots=cfg["n_shots"])
        for n_pad in cfg["pad_sweep"]:
            gen_cfg = _generation_config(
                dict(GENERATION_SECTION,
                     n_pad_masks=n_pad,
                     max_new_tokens=cfg["max_new_tokens"]))
            result = run_generation_task(model, vocab, spec, gen_cfg,
                                         seed=cfg["seed"])
            rows.append({"family": "generation",
                         "variant": f"greedy_pad{n_pad}",
                         "metric": result.metric,
                         "value": f"{result.score:.4f}",
                         "n": len(result.predictions)})
            print(f"generation greedy_pad{n_pad}: "
                  f"{result.metric}={result.score:.4f}")
        for row in _gibbs_translation_rows(model, vocab, spec, cfg):
            rows.append(row)
            print(f"generation {row['variant']}: "
                  f"{row['metric']}={row['value']}")

    if args.rank_checkpoint:
        if not args.rank_vocab:
            raise ConfigError("--rank-checkpoint needs --rank-vocab")
        model, vocab = _load_model_and_vocab(args.rank_checkpoint,
                                             args.rank_vocab)
        variants = [(f"pll_m{m}", dict(SCORING_SECTION, kind="pll",
                                       n_extra_masks=m))
                    for m in cfg["m_sweep"]]
        variants += [("pll_word_l2r", dict(SCORING_SECTION,
                                           kind="pll_word_l2r")),
                     ("pll_whole_word", dict(SCORING_SECTION,
                                             kind="pll_whole_word")),
                     ("exact", dict(SCORING_SECTION,
                                    kind="exact_unidirectional"))]
        for variant, scoring_section in variants:
            spec = make_idiom_ranking_task(
                n_examples=cfg["n_examples"], seed=cfg["seed"],
                scoring=_scoring_method(scoring_section))
            result = run_ranking_task(model, vocab, spec,
                                      seed=cfg["seed"])
            rows.append({"family": "ranking", "variant": variant,
                         "metric": result.metric,
                         "value": f"{result.score:.4f}",
                         "n": len(result.predictions)})
            print(f"ranking {variant}: "
                  f"{result.metric}={result.score:.4f}")

    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "ablation.csv")
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=ABLATION_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    _echo_config(args.out, cfg)
    print(f"wrote {out_csv}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_flags(parser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", default=[],
                        dest="overrides", metavar="KEY=VALUE",
                        help="override one config value (JSON-parsed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmgen",
        description="Generative inference with a masked language model")
    parser.add_argument("--threads",
                        help="thread count exported to BLAS/numba "
                             "(default: MLMGEN_THREADS or 1)")
    parser.add_argument("--backend", choices=("numpy", "numba"),
                        help="kernel backend (default: numba when "
                             "available)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int,
                   help="sets corpus.seed and train.seed")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="continue a prompt")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("rank", help="score candidate continuations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--candidates", required=True,
                   help="candidates separated by '||'")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", help="run a built-in task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("needle", help="haystack length benchmark")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_needle)

    p = sub.add_parser("ablate", help="inference-method comparison table")
    p.add_argument("--gen-checkpoint")
    p.add_argument("--gen-vocab")
    p.add_argument("--rank-checkpoint")
    p.add_argument("--rank-vocab")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _configure_threads(args.threads)
    if args.backend:
        os.environ["MLMGEN_BACKEND"] = args.backend
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
