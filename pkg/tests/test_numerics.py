"""Oracle tests for the autodiff core.

Every expected value comes from an independent re-implementation in
this file (triple-loop matmul, long-double softmax, two-pass layer
norm, scalar-math GELU, logsumexp cross-entropy, central finite
differences) — never from the code under test.
"""

import math

import numpy as np
import pytest

from mlmgen import numerics as nm
from mlmgen.numerics import (GraphError, ShapeError, Tensor, add,
                             bias_lookup, cross_entropy, dropout,
                             gather_rows, gelu, layer_norm, matmul, mul,
                             reshape, softmax, transpose, tsum)


# ---------------------------------------------------------------- oracles

def matmul_oracle(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def softmax_oracle(x):
    x = np.asarray(x, dtype=np.longdouble)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float64)


def layernorm_oracle(x, gain, bias, eps):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out[i] = (row - mu) / math.sqrt(var + eps) * gain + bias
    return out


def gelu_oracle_scalar(v):
    return 0.5 * v * (1.0 + math.tanh(
        math.sqrt(2.0 / math.pi) * (v + 0.044715 * v ** 3)))


def cross_entropy_oracle(logits, targets, ignore=-100):
    total, n = 0.0, 0
    for row, t in zip(logits, targets):
        if t == ignore:
            continue
        m = row.max()
        lse = m + math.log(np.exp(row - m).sum())
        total += lse - row[t]
        n += 1
    return total / n


def fd_gradient(f, tensor, index, h=1e-4):
    """Central finite difference of scalar ``f()`` w.r.t. one entry."""
    flat = tensor.array.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    fp = f().item()
    flat[index] = orig - h
    fm = f().item()
    flat[index] = orig
    return (fp - fm) / (2.0 * h)


def assert_fd_matches(f, tensor, rng, n_probes=12, tol=1e-3):
    """Run f, backprop, and compare .grad against finite differences at
    randomly probed coordinates (relative error below ``tol``)."""
    for t in _walk_leaves(tensor):
        t.zero_grad()
    out = f()
    out.backward()
    leaves = _walk_leaves(tensor)
    for leaf in leaves:
        assert leaf.grad is not None
        size = leaf.array.size
        probes = rng.choice(size, size=min(n_probes, size), replace=False)
        for idx in probes:
            fd = fd_gradient(f, leaf, int(idx))
            ad = leaf.grad.reshape(-1)[int(idx)]
            denom = max(abs(fd), abs(ad), 1e-8)
            assert abs(fd - ad) / denom < tol, \
                f"grad mismatch at {idx}: fd={fd} ad={ad}"


def _walk_leaves(t):
    return t if isinstance(t, (list, tuple)) else [t]


# ------------------------------------------------------------- forward ops

def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(10)
    for _ in range(5):
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(6, 3))
        got = matmul(Tensor(a), Tensor(b)).array
        np.testing.assert_allclose(got, matmul_oracle(a, b), atol=1e-12)


def test_matmul_associativity():
    rng = np.random.default_rng(11)
    a, b, c = (rng.normal(size=(8, 8)) for _ in range(3))
    left = matmul(matmul(Tensor(a), Tensor(b)), Tensor(c)).array
    right = matmul(Tensor(a), matmul(Tensor(b), Tensor(c))).array
    np.testing.assert_allclose(left, right, atol=1e-8)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


def test_matmul_batched_matches_loop():
    rng = np.random.default_rng(12)
    a = rng.normal(size=(3, 4, 5))
    b = rng.normal(size=(3, 5, 2))
    got = matmul(Tensor(a), Tensor(b)).array
    for i in range(3):
        np.testing.assert_allclose(got[i], matmul_oracle(a[i], b[i]),
                                   atol=1e-12)


def test_softmax_matches_longdouble_oracle():
    rng = np.random.default_rng(13)
    x = rng.normal(scale=5.0, size=(6, 11))
    got = softmax(Tensor(x)).array
    np.testing.assert_allclose(got, softmax_oracle(x), atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(14)
    x = rng.normal(scale=50.0, size=(40, 9))
    got = softmax(Tensor(x)).array
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-6)
    assert (got >= 0).all()


def test_softmax_shift_invariance():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(5, 7))
    base = softmax(Tensor(x)).array
    shifted = softmax(Tensor(x + 123.456)).array
    np.testing.assert_allclose(base, shifted, atol=1e-12)


def test_softmax_extreme_values_finite():
    x = np.array([[1e4, 0.0, -1e4], [-1e4, -1e4, -1e4]])
    got = softmax(Tensor(x)).array
    assert np.isfinite(got).all()
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(got[1], [1 / 3] * 3, atol=1e-12)


def test_softmax_inner_axis():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(3, 4, 5))
    got = softmax(Tensor(x), axis=1).array
    expect = softmax_oracle(np.moveaxis(x, 1, -1))
    np.testing.assert_allclose(got, np.moveaxis(expect, -1, 1), atol=1e-12)


def test_layer_norm_matches_two_pass_oracle():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(9, 12)) * 3 + 1
    gain = rng.normal(size=12)
    bias = rng.normal(size=12)
    got = layer_norm(Tensor(x), Tensor(gain), Tensor(bias), eps=1e-5).array
    np.testing.assert_allclose(got, layernorm_oracle(x, gain, bias, 1e-5),
                               atol=1e-10)


def test_gelu_matches_scalar_oracle():
    xs = np.array([-5.0, -1.0, -0.1, 0.0, 0.1, 1.0, 5.0])
    got = gelu(Tensor(xs)).array
    expect = np.array([gelu_oracle_scalar(v) for v in xs])
    np.testing.assert_allclose(got, expect, atol=1e-12)
    assert got[3] == 0.0


def test_cross_entropy_matches_composed_oracle():
    rng = np.random.default_rng(18)
    logits = rng.normal(size=(10, 7))
    targets = rng.integers(0, 7, size=10)
    targets[3] = -100
    targets[8] = -100
    got = cross_entropy(Tensor(logits), targets).item()
    expect = cross_entropy_oracle(logits, targets)
    assert abs(got - expect) < 1e-12


def test_cross_entropy_all_ignored_raises():
    logits = Tensor(np.zeros((4, 5)))
    with pytest.raises(ValueError):
        cross_entropy(logits, np.full(4, -100))


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


# ------------------------------------------------------------- gradients

def test_gradients_match_finite_differences_per_op():
    rng = np.random.default_rng(20)

    w = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    assert_fd_matches(lambda: tsum(matmul(x, w)), [x, w], rng)

    a = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    assert_fd_matches(lambda: tsum(mul(softmax(a), a)), [a], rng)

    g = Tensor(rng.normal(size=6), requires_grad=True)
    b = Tensor(rng.normal(size=6), requires_grad=True)
    xs = Tensor(rng.normal(size=(5, 6)), requires_grad=True)
    assert_fd_matches(
        lambda: tsum(mul(layer_norm(xs, g, b), xs)), [xs, g, b], rng)

    z = Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    assert_fd_matches(lambda: tsum(mul(gelu(z), z)), [z], rng)

    logits = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
    targets = rng.integers(0, 5, size=6)
    targets[2] = -100
    assert_fd_matches(lambda: cross_entropy(logits, targets),
                      [logits], rng)


def test_gradient_matches_fd_through_composite_network():
    """End-to-end chain touching every op the model uses."""
    rng = np.random.default_rng(21)
    emb = Tensor(rng.normal(size=(9, 6)), requires_grad=True)
    w1 = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
    gain = Tensor(np.ones(6), requires_grad=True)
    bias = Tensor(np.zeros(6), requires_grad=True)
    btab = Tensor(rng.normal(size=(1, 4)), requires_grad=True)
    ids = np.array([1, 4, 7, 2])
    buckets = rng.integers(0, 4, size=(4, 4))
    targets = np.array([3, 0, -100, 5])

    def f():
        h = gather_rows(emb, ids)
        h = layer_norm(h, gain, bias)
        scores = matmul(h, transpose(h, (1, 0))) * 0.5
        biased = add(reshape(scores, (1, 4, 4)), bias_lookup(btab, buckets))
        attn = softmax(biased, axis=-1)
        mixed = matmul(reshape(attn, (4, 4)), h)
        out = gelu(matmul(mixed, w1))
        return cross_entropy(matmul(out, transpose(emb, (1, 0))), targets)

    assert_fd_matches(f, [emb, w1, gain, bias, btab], rng, n_probes=8)


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(22)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
    assert_fd_matches(lambda: tsum(mul(add(x, b), add(x, b))), [x, b], rng)


def test_gather_rows_accumulates_duplicates():
    table = Tensor(np.zeros((4, 3)), requires_grad=True)
    out = gather_rows(table, np.array([2, 2, 1]))
    tsum(out).backward()
    expect = np.zeros((4, 3))
    expect[2] = 2.0
    expect[1] = 1.0
    np.testing.assert_allclose(table.grad, expect)


def test_bias_lookup_scatter_gradient():
    rng = np.random.default_rng(23)
    table = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    buckets = rng.integers(0, 5, size=(3, 3))
    out = bias_lookup(table, buckets)
    weights = rng.normal(size=(2, 3, 3))
    tsum(mul(out, Tensor(weights))).backward()
    expect = np.zeros((2, 5))
    for h in range(2):
        for i in range(3):
            for j in range(3):
                expect[h, buckets[i, j]] += weights[h, i, j]
    np.testing.assert_allclose(table.grad, expect, atol=1e-12)


def test_grad_accumulates_across_reuse():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    y = add(mul(x, x), x)  # y = x^2 + x, dy/dx = 2x + 1 = 5
    tsum(y).backward()
    np.testing.assert_allclose(x.grad, [[5.0]])


def test_dropout_zero_rate_is_identity_and_grads_flow():
    rng = np.random.default_rng(24)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    assert dropout(x, 0.0, rng) is x
    y = dropout(x, 0.5, np.random.default_rng(1))
    tsum(y).backward()
    mask = y.array != 0
    np.testing.assert_allclose(x.grad[mask], 2.0)
    np.testing.assert_allclose(x.grad[~mask], 0.0)
    with pytest.raises(ValueError):
        dropout(x, 1.0, rng)


# ------------------------------------------------------------- tape misuse

def test_backward_twice_raises():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = tsum(mul(x, x))
    y.backward()
    with pytest.raises(GraphError):
        y.backward()


def test_backward_on_detached_raises():
    x = Tensor(np.array([1.0]))
    y = tsum(mul(x, x))
    with pytest.raises(GraphError):
        y.backward()
    with pytest.raises(GraphError):
        Tensor(np.array([3.0])).backward()


def test_backward_on_non_scalar_raises():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ShapeError):
        mul(x, x).backward()


def test_inference_mode_builds_no_tape():
    x = Tensor(np.ones((2, 2)))
    y = mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_flat_data_view_is_row_major():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(t.data, np.arange(6.0))
    assert t.shape == (2, 3)


# ------------------------------------------------------- backend agreement

def test_numba_and_numpy_backends_agree():
    pytest.importorskip("numba")
    from mlmgen.kernels import numba_backend as nb
    from mlmgen.kernels import numpy_backend as npb

    rng = np.random.default_rng(30)
    x = np.ascontiguousarray(rng.normal(size=(6, 9)))
    gy = np.ascontiguousarray(rng.normal(size=(6, 9)))
    gain, bias = rng.normal(size=9), rng.normal(size=9)

    np.testing.assert_allclose(nb.softmax_fwd(x), npb.softmax_fwd(x),
                               atol=1e-14)
    y = npb.softmax_fwd(x)
    np.testing.assert_allclose(nb.softmax_bwd(y, gy), npb.softmax_bwd(y, gy),
                               atol=1e-14)

    for a, b in zip(nb.layernorm_fwd(x, gain, bias, 1e-5),
                    npb.layernorm_fwd(x, gain, bias, 1e-5)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    _, mu, rstd = npb.layernorm_fwd(x, gain, bias, 1e-5)
    for a, b in zip(nb.layernorm_bwd(x, gain, mu, rstd, gy),
                    npb.layernorm_bwd(x, gain, mu, rstd, gy)):
        np.testing.assert_allclose(a, b, atol=1e-13)

    flat = np.ascontiguousarray(rng.normal(size=50))
    gflat = np.ascontiguousarray(rng.normal(size=50))
    np.testing.assert_allclose(nb.gelu_fwd(flat), npb.gelu_fwd(flat),
                               atol=1e-15)
    np.testing.assert_allclose(nb.gelu_bwd(flat, gflat),
                               npb.gelu_bwd(flat, gflat), atol=1e-15)

    targets = rng.integers(0, 9, size=6)
    targets[1] = -100
    la, na, pa = nb.cross_entropy_fwd(x, targets, -100)
    lb, nb_, pb = npb.cross_entropy_fwd(x, targets, -100)
    assert na == nb_
    assert abs(la - lb) < 1e-12
    np.testing.assert_allclose(pa, pb, atol=1e-14)
    np.testing.assert_allclose(
        nb.cross_entropy_bwd(pa, targets, -100, na, 1.0),
        npb.cross_entropy_bwd(pb, targets, -100, nb_, 1.0), atol=1e-14)

    out_a = np.zeros((4, 3))
    out_b = np.zeros((4, 3))
    ids = np.array([1, 1, 3], dtype=np.int64)
    g2 = np.ascontiguousarray(rng.normal(size=(3, 3)))
    nb.scatter_add_rows(out_a, ids, g2)
    npb.scatter_add_rows(out_b, ids, g2)
    np.testing.assert_allclose(out_a, out_b, atol=1e-15)

    p1, g1 = rng.normal(size=20), rng.normal(size=20)
    m1, v1 = np.zeros(20), np.zeros(20)
    p2, m2, v2 = p1.copy(), m1.copy(), v1.copy()
    nb.adamw_step(p1, g1, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 0.01, 3)
    npb.adamw_step(p2, g1, m2, v2, 1e-3, 0.9, 0.999, 1e-8, 0.01, 3)
    np.testing.assert_allclose(p1, p2, atol=1e-15)
