"""Planar graph encoders: weighted-attention message passing and readout.

Many activation graphs are processed together as one block-diagonal batch.
Node ``i`` of graph ``b`` has global id ``b * C + i``; with ``M`` graphs per
patient, graph ``b = p * M + m``.  Edges are stored in CSR order by receiving
node, and every node carries a self-loop of weight 1 so that isolated nodes
still propagate their own features.

Attention of receiver ``i`` over neighbour ``j``::

    e_ij     = leaky_relu(a_dst . W h_i + a_src . W h_j)
    alpha_ij = w_ij exp(e_ij) / sum_{j' in N(i)} w_ij' exp(e_ij')
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError, ShapeError

EMBED_DIM = 32


@dataclass
class GraphBatch:
    num_graphs: int
    node_count: int
    indptr: np.ndarray  # (B*C + 1,)
    src: np.ndarray  # (E,) sending node, global id
    dst: np.ndarray  # (E,) receiving node, global id
    weight: np.ndarray  # (E,)

    @property
    def num_nodes(self):
        return self.num_graphs * self.node_count

    @property
    def num_edges(self):
        return self.src.size


def make_graph_batch(graph, i, j, w, num_graphs, node_count):
    """Assemble directed edges ``j -> i`` of many graphs, adding self-loops.

    ``graph, i, j, w`` are the flat outputs of :func:`magcs.knn_edges`; ``i``
    receives a message from ``j``.
    """
    n = num_graphs * node_count
    loops = np.arange(n, dtype=np.int64)
    dst = np.concatenate([np.asarray(graph) * node_count + np.asarray(i), loops])
    src = np.concatenate([np.asarray(graph) * node_count + np.asarray(j), loops])
    wt = np.concatenate([np.asarray(w, dtype=np.float64), np.ones(n)])
    order = np.lexsort((src, dst))
    dst, src, wt = dst[order], src[order], wt[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n), out=indptr[1:])
    return GraphBatch(num_graphs, node_count, indptr, src.astype(np.int64), dst.astype(np.int64), wt)


def batch_from_graphs(graphs):
    """Batch a list of :class:`~mapignn.magcs.ActivationGraph` objects."""
    C = graphs[0].node_count
    g = np.concatenate([np.full(len(gr.weights), b) for b, gr in enumerate(graphs)]).astype(np.int64)
    i = np.concatenate([gr.edges[:, 0] for gr in graphs]).astype(np.int64)
    j = np.concatenate([gr.edges[:, 1] for gr in graphs]).astype(np.int64)
    w = np.concatenate([gr.weights for gr in graphs])
    return make_graph_batch(g, i, j, w, len(graphs), C)


# ---------------------------------------------------------------- kernels as ops


def edge_softmax(logits, batch):
    """Weight-modulated softmax of edge logits ``(E, 1)`` over each receiver."""
    logits = T.as_tensor(logits)
    alpha = kernels.segment_softmax(logits.data.reshape(-1), batch.weight, batch.indptr)

    def backward(g):
        return (kernels.segment_softmax_backward(alpha, g.reshape(-1), batch.indptr).reshape(-1, 1),)

    return T.make_node(alpha.reshape(-1, 1), (logits,), backward)


def propagate(alpha, z, batch):
    """``out[i] = sum_e alpha_e z[src_e]`` over edges received by ``i``."""
    alpha, z = T.as_tensor(alpha), T.as_tensor(z)
    a = alpha.data.reshape(-1)
    Z = z.data

    def backward(g):
        ga, gz = kernels.spmm_backward(batch.indptr, batch.src, a, Z, np.ascontiguousarray(g))
        return ga.reshape(-1, 1), gz

    return T.make_node(kernels.spmm(batch.indptr, batch.src, a, Z), (alpha, z), backward)


# ---------------------------------------------------------------- encoder


@dataclass
class PlanarEncoder:
    """Shared (or per-plane) attention encoder with a linear node decoder."""

    params: T.ParameterSet
    widths: tuple
    num_planes: int = 1
    per_plane: bool = False
    activation: str = "elu"
    slope: float = 0.2
    prefix: str = "pge/"

    @property
    def layers(self):
        return len(self.widths) - 1

    def W(self, layer):
        return self.params[f"{self.prefix}W{layer}"]

    def a(self, layer):
        return self.params[f"{self.prefix}a{layer}"]


def create_encoder(params, rng, in_dim=2, widths=(EMBED_DIM, EMBED_DIM), num_planes=1,
                   per_plane=False, activation="elu", slope=0.2):
    widths = (in_dim,) + tuple(widths)
    enc = PlanarEncoder(params, widths, num_planes, per_plane, activation, slope)
    lead = (num_planes,) if per_plane else ()
    for layer in range(enc.layers):
        d_in, d_out = widths[layer], widths[layer + 1]
        params.glorot(f"{enc.prefix}W{layer}", lead + (d_in, d_out), rng)
        params.glorot(f"{enc.prefix}a{layer}", lead + (2 * d_out, 1), rng)
    params.glorot(f"{enc.prefix}dec_w", (widths[-1], in_dim), rng)
    params.zeros(f"{enc.prefix}dec_b", (1, in_dim))
    return enc


def _plane_linear(H, W, num_planes, node_count):
    """Apply plane ``m``'s matrix to the rows belonging to plane ``m``."""
    rows, d_in = H.shape
    n_pat = rows // (num_planes * node_count)
    d_out = W.shape[-1]
    h = T.reshape(H, (n_pat, num_planes, node_count, d_in))
    h = T.reshape(T.transpose(h, (1, 0, 2, 3)), (num_planes, n_pat * node_count, d_in))
    z = T.reshape(T.bmm(h, W), (num_planes, n_pat, node_count, d_out))
    return T.reshape(T.transpose(z, (1, 0, 2, 3)), (rows, d_out))


def _linear(H, W, enc, batch):
    if enc.per_plane:
        return _plane_linear(H, W, enc.num_planes, batch.node_count)
    return H @ W


def _attention_pair(enc, layer):
    """Attention vector as a ``(d_out, 2)`` matrix: column 0 scores receivers, column 1 senders."""
    a = enc.a(layer)
    d_out = enc.widths[layer + 1]
    if enc.per_plane:
        return T.transpose(T.reshape(a, (enc.num_planes, 2, d_out)), (0, 2, 1))
    return T.transpose(T.reshape(a, (2, d_out)))


def edge_logits(S, batch, slope):
    """``leaky_relu(S[dst, 0] + S[src, 1])`` for every edge, shaped ``(E, 1)``."""
    S = T.as_tensor(S)
    n = S.shape[0]
    raw = S.data[batch.dst, 0] + S.data[batch.src, 1]
    deriv = np.where(raw > 0, 1.0, slope)

    def backward(g):
        gr = g.reshape(-1) * deriv
        out = np.empty((n, 2))
        out[:, 0] = np.bincount(batch.dst, gr, minlength=n)
        out[:, 1] = np.bincount(batch.src, gr, minlength=n)
        return (out,)

    return T.make_node((raw * deriv).reshape(-1, 1), (S,), backward)


def _check_rows(H, batch):
    if H.shape[0] != batch.num_nodes:
        raise ShapeError(f"node features have {H.shape[0]} rows; batch has {batch.num_nodes} nodes")


def _projected(H, batch, enc, layer):
    H = T.as_tensor(H)
    _check_rows(H, batch)
    if H.shape[1] != enc.widths[layer]:
        raise ShapeError(f"layer {layer}: input width {H.shape[1]} != {enc.widths[layer]}")
    Z = _linear(H, enc.W(layer), enc, batch)
    S = _linear(Z, _attention_pair(enc, layer), enc, batch)
    return Z, edge_softmax(edge_logits(S, batch, enc.slope), batch)


def attention_coefficients(H, batch, enc, layer=0):
    """Per-edge attention ``(E, 1)`` aligned with ``batch.src`` / ``batch.dst``."""
    return _projected(H, batch, enc, layer)[1]


def gat_layer(H, batch, enc, layer=0):
    Z, alpha = _projected(H, batch, enc, layer)
    return T.activation(enc.activation)(propagate(alpha, Z, batch))


def encode(H0, batch, enc):
    """Run every layer; returns the final node representations."""
    H = H0
    for layer in range(enc.layers):
        H = gat_layer(H, batch, enc, layer)
    return H


def readout(HL, batch_or_graphs, node_count=None):
    """Mean over each graph's nodes: ``(B*C, d) -> (B, d)``."""
    HL = T.as_tensor(HL)
    if node_count is None:
        B, C = batch_or_graphs.num_graphs, batch_or_graphs.node_count
    else:
        B, C = batch_or_graphs, node_count
    if HL.shape[0] != B * C:
        raise ShapeError(f"readout: {HL.shape[0]} rows for {B} graphs of {C} nodes")
    return T.mean_axis(T.reshape(HL, (B, C, HL.shape[1])), axis=1)


def fuse_patient(embeddings, x, num_planes=None):
    """Concatenate plane embeddings and the original features per patient.

    ``embeddings`` is either ``(N * M, d)`` (patient-major) or a list of ``M``
    row vectors for a single patient; ``x`` is ``(N, C)``.
    """
    x = T.as_tensor(x)
    if x.data.ndim == 1:
        x = T.reshape(x, (1, -1))
    if isinstance(embeddings, (list, tuple)):
        if num_planes is not None and len(embeddings) != num_planes:
            raise ContractError(f"expected {num_planes} plane embeddings, got {len(embeddings)}")
        parts = [T.reshape(T.as_tensor(g), (1, -1)) for g in embeddings]
        return T.concat(parts + [x], axis=1)
    g = T.as_tensor(embeddings)
    n = x.shape[0]
    if g.shape[0] % n:
        raise ContractError(f"{g.shape[0]} embeddings cannot be split over {n} patients")
    if num_planes is not None and g.shape[0] != n * num_planes:
        raise ContractError(f"expected {n * num_planes} embeddings, got {g.shape[0]}")
    return T.concat([T.reshape(g, (n, -1)), x], axis=1)


def split_fusion(F, num_planes, feature_count, width=EMBED_DIM):
    """Recover ``(g_1..g_M, x)`` from fusion vectors of shape ``(..., width*M + C)``."""
    F = np.asarray(getattr(F, "data", F))
    if F.shape[-1] != width * num_planes + feature_count:
        raise ShapeError(f"fusion width {F.shape[-1]} != {width}*{num_planes}+{feature_count}")
    g = F[..., : width * num_planes]
    g = g.reshape(F.shape[:-1] + (num_planes, width))
    return g, F[..., width * num_planes :]


def decode_nodes(HL, enc):
    return T.add_bias(HL @ enc.params[f"{enc.prefix}dec_w"], enc.params[f"{enc.prefix}dec_b"])


def rep_loss(H0, HL, enc):
    """Mean over planes of the MSE between initial node features and decoded finals.

    Every plane has the same number of nodes, so the per-plane average equals
    the global mean over all rows.
    """
    return T.mse(decode_nodes(HL, enc), T.as_tensor(H0))
