"""Reference numpy/scipy implementations of the hot kernels.

Signatures and results match the compiled ``_kernels`` module; only the
floating-point summation order may differ.
"""

import numpy as np
import scipy.sparse as sp


def _check_segments(indptr):
    if (np.diff(indptr) <= 0).any():
        raise ValueError("every segment must hold at least one entry")


def _segment_ids(indptr):
    return np.repeat(np.arange(indptr.size - 1), np.diff(indptr))


def scatter_add_rows(values, index, n):
    values = np.ascontiguousarray(values, dtype=np.float64)
    out = np.zeros((n, values.shape[1]), dtype=np.float64)
    np.add.at(out, index, values)
    return out


def segment_softmax(logits, weight, indptr):
    _check_segments(indptr)
    starts = indptr[:-1]
    seg = _segment_ids(indptr)
    peak = np.maximum.reduceat(logits, starts)
    ex = weight * np.exp(logits - peak[seg])
    return ex / np.add.reduceat(ex, starts)[seg]


def segment_softmax_backward(alpha, grad, indptr):
    starts = indptr[:-1]
    seg = _segment_ids(indptr)
    inner = np.add.reduceat(alpha * grad, starts)
    return alpha * (grad - inner[seg])


def _csr(indptr, src, alpha, ncols):
    return sp.csr_matrix((alpha, src, indptr), shape=(indptr.size - 1, ncols))


def spmm(indptr, src, alpha, z):
    return np.asarray(_csr(indptr, src, alpha, z.shape[0]) @ z)


def spmm_backward(indptr, src, alpha, z, grad):
    seg = _segment_ids(indptr)
    grad_alpha = np.einsum("ed,ed->e", grad[seg], z[src])
    grad_z = np.asarray(_csr(indptr, src, alpha, z.shape[0]).T @ grad)
    return grad_alpha, grad_z


def knn_positions(values, k):
    """Nearest-neighbour positions within each row of ``values``.

    ``values`` has shape ``(B, n)``.  For every row and position ``a`` the
    result lists the ``min(k, n-1)`` other positions closest in absolute
    difference, nearest first, ties going to the lower position.
    """
    values = np.asarray(values, dtype=np.float64)
    b, n = values.shape
    kk = min(k, n - 1)
    dist = np.abs(values[:, :, None] - values[:, None, :])
    idx = np.arange(n)
    dist[:, idx, idx] = np.inf
    order = np.argsort(dist, axis=2, kind="stable")
    return np.ascontiguousarray(order[:, :, :kk]).astype(np.int64)


def elu_forward(x, alpha):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_backward(out, grad, alpha):
    # for the negative branch d/dx alpha*(e^x - 1) = out + alpha
    return np.where(out > 0, grad, grad * (out + alpha))
