"""Side-by-side timing of the numba and numpy kernel backends.

Backend selection happens at import time via ``MLMGEN_BACKEND``, so the
driver launches one worker subprocess per backend and compares results:

    python3 benchmarks/bench_kernels.py

Each worker times the individual hot kernels on training-shaped inputs
(best of several repeats, after a JIT warm-up pass) plus a handful of
real optimizer steps end to end, and dumps its kernel outputs so the
driver can report the numeric gap between backends alongside the
speedups.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

REPEATS = 30
TRAIN_STEPS = 10

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def _inputs():
    import numpy as np

    rng = np.random.default_rng(0)
    d, v, rows = 64, 96, 512
    return {
        "softmax_x": rng.normal(size=(rows, v)),
        "softmax_gy": rng.normal(size=(rows, v)),
        "ln_x": rng.normal(size=(rows, d)),
        "ln_gain": rng.normal(size=d),
        "ln_bias": rng.normal(size=d),
        "ln_gy": rng.normal(size=(rows, d)),
        "gelu_x": rng.normal(size=rows * 4 * d),
        "gelu_gy": rng.normal(size=rows * 4 * d),
        "ce_logits": rng.normal(size=(rows, v)),
        "ce_targets": rng.integers(-1, v, size=rows),
        "sc_ids": rng.integers(0, v, size=rows),
        "sc_g": rng.normal(size=(rows, d)),
        "bias_buckets": rng.integers(0, 32, size=(64, 64)),
        "bias_g": rng.normal(size=(4, 64, 64)),
        "adam_g": rng.normal(size=200_000),
    }


def _kernel_calls(K, x):
    import numpy as np

    y = K.softmax_fwd(x["softmax_x"])
    _, _, probs = K.cross_entropy_fwd(x["ce_logits"], x["ce_targets"], -1)
    _, mu, rstd = K.layernorm_fwd(x["ln_x"], x["ln_gain"], x["ln_bias"],
                                  1e-5)

    def scatter_rows():
        out = np.zeros((96, 64))
        K.scatter_add_rows(out, x["sc_ids"], x["sc_g"])
        return out

    def scatter_bias():
        out = np.zeros((4, 32))
        K.scatter_add_bias(out, x["bias_buckets"], x["bias_g"])
        return out

    def adamw():
        p = np.ones(200_000)
        m = np.zeros(200_000)
        v = np.zeros(200_000)
        K.adamw_step(p, x["adam_g"], m, v, 1e-3, 0.9, 0.999, 1e-8,
                     0.01, 3)
        return p

    return {
        "softmax_fwd": lambda: K.softmax_fwd(x["softmax_x"]),
        "softmax_bwd": lambda: K.softmax_bwd(y, x["softmax_gy"]),
        "layernorm_fwd": lambda: K.layernorm_fwd(
            x["ln_x"], x["ln_gain"], x["ln_bias"], 1e-5)[0],
        "layernorm_bwd": lambda: K.layernorm_bwd(
            x["ln_x"], x["ln_gain"], mu, rstd, x["ln_gy"])[0],
        "gelu_fwd": lambda: K.gelu_fwd(x["gelu_x"]),
        "gelu_bwd": lambda: K.gelu_bwd(x["gelu_x"], x["gelu_gy"]),
        "cross_entropy_fwd": lambda: K.cross_entropy_fwd(
            x["ce_logits"], x["ce_targets"], -1)[2],
        "cross_entropy_bwd": lambda: K.cross_entropy_bwd(
            probs, x["ce_targets"], -1, 256, 1.0),
        "scatter_add_rows": scatter_rows,
        "scatter_add_bias": scatter_bias,
        "adamw_step": adamw,
    }


def _time_train_steps():
    from mlmgen.corpora import CorpusSpec, make_corpus
    from mlmgen.model import ModelConfig
    from mlmgen.tokenizer import build_vocab, encode
    from mlmgen.training import TrainConfig, train

    lines = make_corpus(CorpusSpec(kind="digit_facts", size=200, seed=0))
    vocab = build_vocab(lines, 96)
    seqs = [encode(line, vocab, add_sep=True) for line in lines]
    config = ModelConfig(vocab_size=vocab.size)
    train(config, seqs, TrainConfig(steps=1, seed=0))  # warm-up / JIT
    t0 = time.perf_counter()
    train(config, seqs, TrainConfig(steps=TRAIN_STEPS, seed=0))
    return (time.perf_counter() - t0) / TRAIN_STEPS


def run_worker(dump_path: str) -> None:
    sys.path.insert(0, os.path.join(_ROOT, "src"))
    import numpy as np

    import mlmgen.kernels as K

    x = _inputs()
    calls = _kernel_calls(K, x)
    times, outputs = {}, {}
    for name, fn in calls.items():
        fn()  # warm-up (JIT compilation lands here for numba)
        best = min(_timed(fn) for _ in range(REPEATS))
        times[name] = best
        outputs[name] = np.asarray(fn(), dtype=np.float64)
    times["train_step"] = _time_train_steps()
    np.savez(dump_path, **outputs)
    print(json.dumps({"backend": K.backend_name(), "times": times}))


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _launch(backend: str, dump_path: str) -> dict:
    env = dict(os.environ, MLMGEN_BACKEND=backend,
               MLMGEN_THREADS=os.environ.get("MLMGEN_THREADS", "1"))
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker",
         "--dump", dump_path],
        capture_output=True, text=True, env=env, cwd=_ROOT)
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"{backend} worker failed")
    return json.loads(proc.stdout.splitlines()[-1])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--worker", action="store_true",
                        help=argparse.SUPPRESS)
    parser.add_argument("--dump", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    if args.worker:
        run_worker(args.dump)
        return 0

    import numpy as np

    with tempfile.TemporaryDirectory() as tmp:
        dumps = {b: os.path.join(tmp, f"{b}.npz")
                 for b in ("numpy", "numba")}
        results = {b: _launch(b, dumps[b]) for b in dumps}
        out_np = np.load(dumps["numpy"])
        out_nb = np.load(dumps["numba"])
        gaps = {k: float(np.max(np.abs(out_np[k] - out_nb[k])))
                for k in out_np.files}

    print(f"{'kernel':<20} {'numpy':>10} {'numba':>10} "
          f"{'speedup':>8} {'max |diff|':>11}")
    for name in results["numpy"]["times"]:
        t_np = results["numpy"]["times"][name]
        t_nb = results["numba"]["times"][name]
        gap = f"{gaps[name]:.3e}" if name in gaps else "-"
        print(f"{name:<20} {t_np * 1e6:>8.1f}us {t_nb * 1e6:>8.1f}us "
              f"{t_np / t_nb:>7.2f}x {gap:>11}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
