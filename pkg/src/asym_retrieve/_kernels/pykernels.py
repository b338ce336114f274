"""Pure-numpy fallback for the encoder hot kernels.

Mirrors the compiled extension in ``_core.pyx`` function by function. The
affine transform is computed row by row on purpose: per-row results must not
depend on what else is in the batch, so that a batch call is exactly equal to
mapping the single-item call (BLAS gemm does not guarantee that across batch
shapes).
"""

import numpy as np

NAME = "python"


def mean_pool(table, flat_ids, offsets):
    """Mean of embedding-table rows per segment of a ragged id batch."""
    gathered = table[flat_ids]
    sums = np.add.reduceat(gathered, offsets[:-1], axis=0)
    counts = np.diff(offsets).astype(np.float64)
    return sums / counts[:, None]


def affine(x, w, b):
    """Row-wise x[i] @ w + b."""
    out = np.empty((x.shape[0], w.shape[1]), dtype=np.float64)
    for i in range(x.shape[0]):
        out[i] = x[i] @ w
    out += b
    return out


def tanh(x):
    return np.tanh(x)


def normalize_rows(x):
    """L2-normalize each row; zero rows stay zero with norm 0 for the caller."""
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe[:, None], norms


def tanh_backward(y, gy):
    return gy * (1.0 - y * y)


def affine_backward(x, w, gy):
    gx = gy @ w.T
    gw = x.T @ gy
    gb = gy.sum(axis=0)
    return gx, gw, gb


def normalize_backward(y, norms, gy):
    dots = np.einsum("ij,ij->i", y, gy)
    return (gy - y * dots[:, None]) / norms[:, None]


def mean_pool_backward(g, flat_ids, offsets, vocab_size):
    counts = np.diff(offsets).astype(np.float64)
    rows = np.repeat(g / counts[:, None], np.diff(offsets), axis=0)
    gtable = np.zeros((vocab_size, g.shape[1]), dtype=np.float64)
    np.add.at(gtable, flat_ids, rows)
    return gtable
