"""Small pre-LN transformer encoder with additive relative-position
attention biases.

The position scheme is the load-bearing design choice for length
generalization: each attention head owns a bucket table indexed by a
log-spaced function of the signed key-query offset.  Offsets beyond
``max_distance`` all land in the final bucket, so a model trained on
short sequences sees no out-of-distribution position values at longer
ones — saturation *is* the truncation of relative indices.  An
``absolute`` position mode (learned position embeddings) is kept behind
a config switch as the contrast case: positions past the trained range
hit untrained rows and the model collapses.

Weights are plain autodiff tensors in a named, ordered container; the
checkpoint format serializes them in declaration order as float32.
"""

from __future__ import annotations

import json
import math
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import numerics as nm
from .numerics import Tensor

NEG_INF = -1e30  # additive mask value; exp(NEG_INF - max) underflows to 0.0

CHECKPOINT_MAGIC = b"MLMG"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or mismatched checkpoint file."""


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    num_buckets: int = 32
    max_distance: int = 64
    attention_mode: str = "bidirectional"  # or "causal"
    position_mode: str = "relative"        # or "absolute"
    max_train_len: int = 64
    max_positions: int = 256               # absolute-mode table size
    dropout: float = 0.0
    tie_embeddings: bool = True
    init_scale: float = 0.02
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the special tokens")
        if self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.num_buckets % 2 != 0 or self.num_buckets < 4:
            raise ValueError("num_buckets must be even and >= 4")
        if self.max_distance <= max(self.num_buckets // 4, 1):
            raise ValueError(
                "max_distance must exceed the exact bucket region "
                f"({self.num_buckets // 4})")
        if self.attention_mode not in ("bidirectional", "causal"):
            raise ValueError(f"unknown attention_mode {self.attention_mode!r}")
        if self.position_mode not in ("relative", "absolute"):
            raise ValueError(f"unknown position_mode {self.position_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def rel_bucket(d, num_buckets: int, max_distance: int):
    """Map signed offsets ``d = key_pos - query_pos`` to bucket ids.

    Closed form, with ``half = num_buckets // 2`` and
    ``exact = half // 2``:

    * sign split: negative-or-zero offsets use buckets ``[0, half)``,
      positive offsets use ``[half, num_buckets)``;
    * ``|d| < exact`` maps exactly (bucket ``|d|`` within its half);
    * larger offsets map logarithmically:
      ``exact + floor(log(|d|/exact) / log(max_distance/exact)
      * (half - exact))``, clamped to the last bucket of the half — so
      every offset at or beyond ``max_distance`` shares one bucket.

    Accepts an int or an integer ndarray; returns the same kind.
    """
    if num_buckets % 2 != 0 or num_buckets < 4:
        raise ValueError("num_buckets must be even and >= 4")
    half = num_buckets // 2
    exact = max(half // 2, 1)
    if max_distance <= exact:
        raise ValueError("max_distance must exceed the exact region")
    arr = np.asarray(d, dtype=np.int64)
    n = np.abs(arr)
    safe = np.maximum(n, 1).astype(np.float64)
    log_part = exact + np.floor(
        np.log(safe / exact) / math.log(max_distance / exact)
        * (half - exact)).astype(np.int64)
    within = np.where(n < exact, n, np.minimum(log_part, half - 1))
    out = within + np.where(arr > 0, half, 0)
    if arr.ndim == 0:
        return int(out)
    return out


class ModelWeights:
    """Named parameters in fixed declaration order (the checkpoint and
    optimizer-state order)."""

    def __init__(self, params: "OrderedDict[str, Tensor]"):
        self._params = params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.array.size for t in self._params.values())

    def copy(self) -> "ModelWeights":
        out = OrderedDict()
        for name, t in self._params.items():
            c = Tensor(t.array.copy(), requires_grad=t.requires_grad)
            out[name] = c
        return ModelWeights(out)


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Declaration order of every parameter for a config."""
    v, d, f = config.vocab_size, config.d_model, config.d_ff
    shapes: "OrderedDict[str, tuple[int, ...]]" = OrderedDict()
    shapes["tok_emb"] = (v, d)
    if config.position_mode == "absolute":
        shapes["pos_emb"] = (config.max_positions, d)
    else:
        shapes["rel_bias"] = (config.heads, config.num_buckets)
    for i in range(config.layers):
        p = f"layers.{i}."
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "attn.wq"] = (d, d)
        shapes[p + "attn.wk"] = (d, d)
        shapes[p + "attn.wv"] = (d, d)
        shapes[p + "attn.wo"] = (d, d)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    if not config.tie_embeddings:
        shapes["out_proj"] = (d, v)
    shapes["out_bias"] = (v,)
    return shapes


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    """Seeded Gaussian init: matrices and bias tables ~ N(0,
    init_scale^2); norm gains 1; all bias vectors 0."""
    rng = np.random.default_rng(seed)
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif name.endswith((".bias", ".b1", ".b2")) or name == "out_bias":
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, config.init_scale, size=shape)
        params[name] = Tensor(arr, requires_grad=True)
    return ModelWeights(params)


def _attention_extras(config: ModelConfig, batch: int, t: int,
                      pad_mask: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Constant additive attention mask (causal and/or padding)."""
    mask = None
    if config.attention_mode == "causal":
        tri = np.triu(np.full((t, t), NEG_INF), k=1)
        mask = np.broadcast_to(tri, (1, 1, t, t)).copy()
    if pad_mask is not None:
        pad = np.where(pad_mask[:, None, None, :], 0.0, NEG_INF)
        mask = pad if mask is None else mask + pad
    return mask


def forward(ids, config: ModelConfig, weights: ModelWeights, *,
            train: bool = False, rng: Optional[np.random.Generator] = None,
            pad_mask: Optional[np.ndarray] = None,
            trace: Optional[dict] = None) -> Tensor:
    """Per-position vocabulary logits.

    ``ids`` may be a single sequence (1-D, returns [len, vocab]) or a
    batch (2-D, returns [batch, len, vocab]).  ``pad_mask`` is a bool
    [batch, len] array marking real tokens; padded keys are excluded
    from attention.  With ``trace`` given, per-layer pre-softmax
    attention scores are stashed under ``trace['scores']``.
    """
    arr = np.asarray(ids, dtype=np.int64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValueError("forward needs a non-empty token sequence")
    b, t = arr.shape
    d, h = config.d_model, config.heads
    dh = d // h
    if train and config.dropout > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")

    w = weights
    x = nm.gather_rows(w["tok_emb"], arr)
    if config.position_mode == "absolute":
        if t > config.max_positions:
            raise ValueError(
                f"sequence length {t} exceeds absolute position table "
                f"({config.max_positions})")
        pos = nm.gather_rows(w["pos_emb"], np.arange(t))
        x = nm.add(x, nm.reshape(pos, (1, t, d)))
        bias = None
    else:
        offsets = np.arange(t)[None, :] - np.arange(t)[:, None]
        buckets = rel_bucket(offsets, config.num_buckets, config.max_distance)
        bias = nm.reshape(nm.bias_lookup(w["rel_bias"], buckets),
                          (1, h, t, t))

    mask = _attention_extras(config, b, t, pad_mask)
    mask_t = Tensor(mask) if mask is not None else None
    scale = 1.0 / math.sqrt(dh)
    drop = config.dropout if train else 0.0

    for i in range(config.layers):
        p = f"layers.{i}."
        a = nm.layer_norm(x, w[p + "ln1.gain"], w[p + "ln1.bias"],
                          config.layer_norm_eps)
        flat = nm.reshape(a, (b * t, d))

        def heads_view(m: Tensor) -> Tensor:
            return nm.transpose(nm.reshape(m, (b, t, h, dh)), (0, 2, 1, 3))

        q = heads_view(nm.matmul(flat, w[p + "attn.wq"]))
        k = heads_view(nm.matmul(flat, w[p + "attn.wk"]))
        v = heads_view(nm.matmul(flat, w[p + "attn.wv"]))
        scores = nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))) * scale
        if bias is not None:
            scores = nm.add(scores, bias)
        if mask_t is not None:
            scores = nm.add(scores, mask_t)
        if trace is not None:
            trace.setdefault("scores", []).append(scores.array.copy())
        attn = nm.softmax(scores, axis=-1)
        ctx = nm.matmul(attn, v)
        merged = nm.reshape(nm.transpose(ctx, (0, 2, 1, 3)), (b * t, d))
        proj = nm.matmul(merged, w[p + "attn.wo"])
        if drop > 0.0:
            proj = nm.dropout(proj, drop, rng)
        x = nm.add(x, nm.reshape(proj, (b, t, d)))

        a2 = nm.layer_norm(x, w[p + "ln2.gain"], w[p + "ln2.bias"],
                           config.layer_norm_eps)
        hmid = nm.gelu(nm.add(nm.matmul(nm.reshape(a2, (b * t, d)),
                                        w[p + "ff.w1"]), w[p + "ff.b1"]))
        hout = nm.add(nm.matmul(hmid, w[p + "ff.w2"]), w[p + "ff.b2"])
        if drop > 0.0:
            hout = nm.dropout(hout, drop, rng)
        x = nm.add(x, nm.reshape(hout, (b, t, d)))

    x = nm.layer_norm(x, w["final_ln.gain"], w["final_ln.bias"],
                      config.layer_norm_eps)
    flat = nm.reshape(x, (b * t, d))
    if config.tie_embeddings:
        logits = nm.matmul(flat, nm.transpose(w["tok_emb"], (1, 0)))
    else:
        logits = nm.matmul(flat, w["out_proj"])
    logits = nm.add(logits, w["out_bias"])
    out = nm.reshape(logits, (b, t, config.vocab_size))
    if single:
        return nm.reshape(out, (t, config.vocab_size))
    return out


class TransformerLM:
    """Inference-facing bundle of config + weights.

    ``logits`` runs a tape-free forward for one sequence and returns a
    float64 [len, vocab] array.  Anything with this method (see the
    harness's retrieval oracle) can stand in for a trained model in
    generation and ranking code.
    """

    def __init__(self, config: ModelConfig, weights: ModelWeights):
        self.config = config
        self.weights = weights

    def logits(self, ids) -> np.ndarray:
        return forward(ids, self.config, self.weights).array

    @classmethod
    def from_checkpoint(cls, path) -> "TransformerLM":
        config, weights = load_checkpoint(path)
        return cls(config, weights)


# ---------------------------------------------------------------- storage

def save_checkpoint(path, config: ModelConfig, weights: ModelWeights) -> None:
    """Binary layout (little-endian): magic ``MLMG``, u32 version, u32
    JSON length + config JSON, then each parameter in declaration order
    as u32 element count + float32 data."""
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    expected = parameter_shapes(config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, shape in expected.items():
            arr = np.ascontiguousarray(weights[name].array, dtype="<f4")
            if arr.shape != shape:
                raise CheckpointError(
                    f"parameter {name} has shape {arr.shape}, config "
                    f"declares {shape}")
            fh.write(struct.pack("<I", arr.size))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, ModelWeights]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    off = 4
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (jlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if off + jlen > len(data):
        raise CheckpointError(f"{path}: truncated config block")
    try:
        config = ModelConfig.from_dict(json.loads(data[off:off + jlen]))
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from exc
    off += jlen

    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if off + 4 > len(data):
            raise CheckpointError(f"{path}: truncated before {name}")
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        expected = int(np.prod(shape)) if shape else 1
        if count != expected:
            raise CheckpointError(
                f"{path}: parameter {name} stores {count} values, config "
                f"needs {expected}")
        nbytes = count * 4
        if off + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated inside {name}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        params[name] = Tensor(
            arr.astype(np.float64).reshape(shape), requires_grad=True)
        off += nbytes
    if off != len(data):
        raise CheckpointError(
            f"{path}: {len(data) - off} trailing bytes after parameters")
    return config, ModelWeights(params)
