"""Compiled-vs-python kernel backend parity.

Both backends must agree to float64 roundoff on every primitive and on full
encode/backward passes. Bitwise identity is only promised within a backend
(operation order differs between the C loops and numpy/BLAS).
"""

import numpy as np
import pytest

from asym_retrieve import _kernels
from asym_retrieve import encoder as enc

pytestmark = pytest.mark.skipif(
    not _kernels.compiled_available(), reason="compiled kernels not built"
)


@pytest.fixture
def both():
    return _kernels.resolve("compiled"), _kernels.resolve("python")


@pytest.fixture
def restore_backend():
    name = _kernels.get_backend().NAME
    yield
    _kernels.set_backend(name)


def rand_batch(rng, n=6, vocab=50, h=8):
    table = rng.standard_normal((vocab, h))
    lengths = rng.integers(1, 9, size=n)
    flat = rng.integers(0, vocab, size=int(lengths.sum())).astype(np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return table, flat, offsets


def test_primitive_parity(both):
    comp, py = both
    rng = np.random.default_rng(0)
    table, flat, offsets = rand_batch(rng)
    tol = dict(rtol=0, atol=1e-12)

    pooled_c = comp.mean_pool(table, flat, offsets)
    pooled_p = py.mean_pool(table, flat, offsets)
    np.testing.assert_allclose(pooled_c, pooled_p, **tol)

    w = rng.standard_normal((8, 5))
    b = rng.standard_normal(5)
    a_c = comp.affine(pooled_c, w, b)
    a_p = py.affine(pooled_p, w, b)
    np.testing.assert_allclose(a_c, a_p, **tol)

    np.testing.assert_allclose(comp.tanh(a_c), py.tanh(a_p), **tol)

    y_c, n_c = comp.normalize_rows(a_c)
    y_p, n_p = py.normalize_rows(a_p)
    np.testing.assert_allclose(y_c, y_p, **tol)
    np.testing.assert_allclose(n_c, n_p, **tol)

    gy = rng.standard_normal(a_c.shape)
    np.testing.assert_allclose(
        comp.normalize_backward(y_c, n_c, gy), py.normalize_backward(y_p, n_p, gy), **tol
    )
    np.testing.assert_allclose(
        comp.tanh_backward(y_c, gy), py.tanh_backward(y_p, gy), **tol
    )
    for got, want in zip(comp.affine_backward(pooled_c, w, gy),
                         py.affine_backward(pooled_p, w, gy)):
        np.testing.assert_allclose(got, want, **tol)

    g = rng.standard_normal(pooled_c.shape)
    np.testing.assert_allclose(
        comp.mean_pool_backward(g, flat, offsets, table.shape[0]),
        py.mean_pool_backward(g, flat, offsets, table.shape[0]),
        **tol,
    )


def test_zero_rows_stay_zero(both):
    for backend in both:
        y, norms = backend.normalize_rows(np.zeros((2, 3)))
        assert not y.any()
        assert norms.tolist() == [0.0, 0.0]


def test_full_pass_parity(restore_backend):
    p = enc.init_encoder("teacher", 80, 16, 8, seed=9)
    rng = np.random.default_rng(1)
    seqs = [rng.integers(0, 80, size=rng.integers(1, 15)) for _ in range(10)]
    upstream = rng.standard_normal((10, 8))
    batch = enc.TokenBatch.from_seqs(seqs)

    results = {}
    for name in ("compiled", "python"):
        _kernels.set_backend(name)
        out, cache = enc.forward_batch(p, batch)
        bundle = enc.backward_batch(p, batch, upstream, cache)
        results[name] = (out, bundle.arrays())

    out_c, grads_c = results["compiled"]
    out_p, grads_p = results["python"]
    np.testing.assert_allclose(out_c, out_p, rtol=0, atol=1e-12)
    for a, b in zip(grads_c, grads_p):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_within_backend_bitwise_determinism(restore_backend):
    p = enc.init_encoder("student", 40, 8, 8, seed=2)
    seqs = [enc.tokenize("alpha beta", 40), enc.tokenize("gamma", 40)]
    for name in ("compiled", "python"):
        _kernels.set_backend(name)
        a = enc.encode_batch(p, seqs)
        b = enc.encode_batch(p, seqs)
        assert np.array_equal(a, b)
