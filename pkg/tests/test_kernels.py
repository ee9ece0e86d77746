"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from mapignn import _kernels_py as py
from mapignn import kernels
from mapignn.errors import ContractError

BACKENDS = kernels.available_backends()
compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")


def random_csr(rng, n, max_deg=4):
    deg = rng.integers(1, max_deg + 1, n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    src = rng.integers(0, n, indptr[-1]).astype(np.int64)
    return indptr, src


def test_segment_softmax_reference(rng):
    indptr = np.array([0, 1, 4, 6], dtype=np.int64)
    logits = rng.standard_normal(6)
    w = rng.uniform(0.1, 2.0, 6)
    out = py.segment_softmax(logits, w, indptr)
    for a, b in zip(indptr[:-1], indptr[1:]):
        e = w[a:b] * np.exp(logits[a:b])
        assert np.allclose(out[a:b], e / e.sum(), atol=1e-15)


def test_spmm_matches_dense(rng):
    n = 7
    indptr, src = random_csr(rng, n)
    alpha = rng.standard_normal(src.size)
    z = rng.standard_normal((n, 3))
    dense = np.zeros((n, n))
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            dense[i, src[e]] += alpha[e]
    assert np.allclose(py.spmm(indptr, src, alpha, z), dense @ z, atol=1e-13)


def test_knn_positions_ties_prefer_lower_position():
    vals = np.array([[0.0, 1.0, -1.0, 2.0]])
    out = py.knn_positions(vals, 2)
    # position 0 is equidistant from 1 and 2; the lower position wins
    assert out[0, 0].tolist() == [1, 2]


@compiled
def test_backends_agree(rng):
    cy = BACKENDS["cython"]
    n = 40
    indptr, src = random_csr(rng, n)
    logits = rng.standard_normal(src.size)
    w = rng.uniform(1e-6, 2.0, src.size)
    a_py = py.segment_softmax(logits, w, indptr)
    a_cy = cy.segment_softmax(logits, w, indptr)
    assert np.allclose(a_py, a_cy, atol=1e-14)
    g = rng.standard_normal(src.size)
    assert np.allclose(
        py.segment_softmax_backward(a_py, g, indptr), cy.segment_softmax_backward(a_py, g, indptr), atol=1e-14
    )
    z = rng.standard_normal((n, 5))
    assert np.allclose(py.spmm(indptr, src, a_py, z), cy.spmm(indptr, src, a_py, z), atol=1e-13)
    G = rng.standard_normal((n, 5))
    for x, y in zip(py.spmm_backward(indptr, src, a_py, z, G), cy.spmm_backward(indptr, src, a_py, z, G)):
        assert np.allclose(x, y, atol=1e-13)
    idx = rng.integers(0, 9, 30)
    vals = rng.standard_normal((30, 4))
    assert np.allclose(py.scatter_add_rows(vals, idx, 9), cy.scatter_add_rows(vals, idx, 9), atol=1e-13)
    x = rng.standard_normal((6, 7))
    assert np.allclose(py.elu_forward(x, 1.0), cy.elu_forward(x, 1.0), atol=1e-15)
    o, gx = py.elu_forward(x, 1.0), rng.standard_normal((6, 7))
    assert np.allclose(py.elu_backward(o, gx, 1.0), cy.elu_backward(o, gx, 1.0), atol=1e-15)


@compiled
def test_knn_backends_agree_with_ties(rng):
    cy = BACKENDS["cython"]
    for k in (1, 3, 5, 12):
        vals = rng.integers(-3, 4, (50, 9)).astype(np.float64)  # many ties
        assert np.array_equal(py.knn_positions(vals, k), cy.knn_positions(vals, k))


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_empty_segment_rejected(name):
    impl = BACKENDS[name]
    with pytest.raises((ContractError, ValueError)):
        impl.segment_softmax(np.zeros(2), np.ones(2), np.array([0, 2, 2], dtype=np.int64))


def test_dispatch_reports_backend():
    assert kernels.BACKEND in BACKENDS
