"""Relation-aware graph attention over localized bipartite graphs.

All graphs of a batch are flattened into one node table. Messages are
(destination, source, relation) triples: one per incident (neighbour,
relation) pair in each direction, plus a self-loop per node that carries the
learned self-relation vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..localgraph import LocalGraph
from ..textproc import AnnotatedDocument

SELF = -1


class SpanRangeError(ValueError):
    pass


@dataclass
class GraphBatch:
    n_nodes: int = 0
    attr_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    attr_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    attr_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fuse_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    fuse_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    msg_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    msg_src: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    msg_rel: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    in_degree: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    node_slot: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @classmethod
    def from_docs(cls, items: Sequence[tuple[int, AnnotatedDocument, LocalGraph]], seq_len: int) -> "GraphBatch":
        """``items`` holds (document slot, document, graph); slot * seq_len + position addresses a flat row."""
        attr_rows, attr_nodes, attr_w = [], [], []
        fuse_rows, fuse_nodes = [], []
        dst, src, rel, slots = [], [], [], []
        base = 0
        for slot, doc, graph in items:
            if graph.is_empty():
                continue
            nodes = graph.nodes
            n_doc = min(len(doc.tokens), seq_len)
            for i, node in enumerate(nodes):
                g = base + i
                slots.append(slot)
                n_spans = len(node.span_indices)
                for j in node.span_indices:
                    span = doc.spans[j]
                    if not (0 <= span.special_index < span.start < span.end <= n_doc):
                        raise SpanRangeError(f"span [{span.start}, {span.end}) outside document of length {n_doc}")
                    width = span.end - span.start
                    for pos in range(span.start, span.end):
                        attr_rows.append(slot * seq_len + pos)
                        attr_nodes.append(g)
                        attr_w.append(1.0 / (width * n_spans))
                    fuse_rows.append(slot * seq_len + span.special_index)
                    fuse_nodes.append(g)
                dst.append(g)
                src.append(g)
                rel.append(SELF)
            n_u = len(graph.U)
            for e in graph.edges:
                u, v = base + e.u, base + n_u + e.v
                for r in e.relations:
                    dst += [v, u]
                    src += [u, v]
                    rel += [r, r]
            base += len(nodes)
        i64 = lambda xs: np.asarray(xs, dtype=np.int64)
        dst_a = i64(dst)
        return cls(
            n_nodes=base,
            attr_rows=i64(attr_rows), attr_nodes=i64(attr_nodes), attr_weights=np.asarray(attr_w),
            fuse_rows=i64(fuse_rows), fuse_nodes=i64(fuse_nodes),
            msg_dst=dst_a, msg_src=i64(src), msg_rel=i64(rel),
            in_degree=np.bincount(dst_a, minlength=base).astype(np.int64),
            node_slot=i64(slots),
        )


def extract_node_attrs(H_b: T.Tensor, gb: GraphBatch) -> T.Tensor:
    """Node attribute = mean over spans of the mean hidden state inside each span."""
    B, S, d = H_b.shape
    flat = T.reshape(H_b, (B * S, d))
    if gb.n_nodes == 0:
        return T.zeros((0, d), dtype=H_b.dtype)
    if gb.attr_rows.size and gb.attr_rows.max() >= B * S:
        raise SpanRangeError("span row outside the encoded batch")
    rows = T.take(flat, gb.attr_rows, axis=0)
    w = gb.attr_weights.astype(H_b.dtype)[:, None]
    return T.scatter_add(T.zeros((gb.n_nodes, d), dtype=H_b.dtype), gb.attr_nodes, rows * w, axis=0)


def _normalise(e: T.Tensor, gb: GraphBatch, mode: str) -> T.Tensor:
    M, _ = e.shape
    n = gb.n_nodes
    dst = gb.msg_dst
    if mode == "softmax":
        top = np.full((M, n), -np.inf, dtype=e.dtype)
        np.maximum.at(top, (slice(None), dst), e.data)
        ex = T.exp(e - top[:, dst])
        den = T.scatter_add(T.zeros((M, n), dtype=e.dtype), dst, ex, axis=1)
        return ex / T.take(den, dst, axis=1)
    den = T.scatter_add(T.zeros((M, n), dtype=e.dtype), dst, e, axis=1)
    if np.any(np.abs(den.data) < 1e-12):
        raise ZeroDivisionError("ratio attention: raw scores into a node sum to ~0")
    return e / T.take(den, dst, axis=1)


def _transform(H: T.Tensor, W_t: T.Tensor, b_t: T.Tensor, config) -> T.Tensor:
    M, d, _ = W_t.shape
    n = H.shape[0]
    z = T.matmul(T.reshape(H, (1, n, d)), W_t) + T.reshape(b_t, (M, 1, d))
    return T.relu(z) if config.activation == "relu" else T.sigmoid(z)


def _alpha(gb: GraphBatch, A: T.Tensor, rel_table, W_e, config) -> T.Tensor:
    M, _, d = A.shape
    P = gb.msg_dst.size
    if config.ablation == "no_att":
        return T.Tensor(np.broadcast_to(1.0 / gb.in_degree[gb.msg_dst], (M, P)).astype(A.dtype))
    blocks = [T.take(A, gb.msg_dst, axis=1)]
    if config.ablation != "no_rel":
        rel_idx = np.where(gb.msg_rel == SELF, rel_table.shape[0] - 1, gb.msg_rel)
        r = T.reshape(T.take(rel_table, rel_idx, axis=0), (1, P, d))
        blocks.append(T.broadcast_to(r, (M, P, d)))
    blocks.append(T.take(A, gb.msg_src, axis=1))
    e = T.reshape(T.matmul(T.concat(blocks, axis=-1), W_e), (M, P))
    return _normalise(e, gb, config.attn_norm)


def gnn_layer(gb: GraphBatch, H: T.Tensor, rel_table: T.Tensor | None, W_t: T.Tensor, b_t: T.Tensor,
              W_e: T.Tensor | None, config) -> T.Tensor:
    """One relation-aware attention layer; per-head outputs are summed.

    ``W_t`` is (M, d, d), ``b_t`` is (M, d) and ``W_e`` is (M, 3d, 1), or (M, 2d, 1)
    under ``no_rel``. ``rel_table`` rows are indexed by relation id, the last row
    being the self-relation.
    """
    M, d, _ = W_t.shape
    n = gb.n_nodes
    if H.shape != (n, d):
        raise T.ShapeError(f"gnn_layer: incompatible shapes {H.shape} and {(n, d)}")
    A = _transform(H, W_t, b_t, config)
    alpha = _alpha(gb, A, rel_table, W_e, config)
    carried = T.take(A, gb.msg_src if config.aggregate == "neighbor" else gb.msg_dst, axis=1)
    msg = carried * T.reshape(alpha, (M, gb.msg_dst.size, 1))
    out = T.scatter_add(T.zeros((M, n, d), dtype=H.dtype), gb.msg_dst, msg, axis=1)
    return T.sum_(out, axis=0)


def attention_weights(gb: GraphBatch, H: T.Tensor, rel_table, W_t, b_t, W_e, config) -> np.ndarray:
    """The (M, messages) alpha matrix of one layer, for inspection and tests."""
    with T.no_grad():
        return _alpha(gb, _transform(H, W_t, b_t, config), rel_table, W_e, config).data.copy()


def run_gnn(gb: GraphBatch, X: T.Tensor, rel_table: T.Tensor | None, layers, config) -> T.Tensor:
    """Stack ``len(layers)`` gnn_layer calls; ``layers`` yields (W_t, b_t, W_e) per layer."""
    if gb.n_nodes == 0:
        return T.zeros((0, X.shape[1]), dtype=X.dtype)
    H = X
    for W_t, b_t, W_e in layers:
        H = gnn_layer(gb, H, rel_table, W_t, b_t, W_e, config)
    return H


def fuse(H_b: T.Tensor, H_G: T.Tensor, gb: GraphBatch | None) -> T.Tensor:
    """Add each node's vector to the special-token row of every occurrence of its entity."""
    if gb is None or gb.n_nodes == 0:
        return H_b
    if H_G.shape[0] != gb.n_nodes:
        raise T.ShapeError(f"fuse: incompatible shapes {H_G.shape} and {(gb.n_nodes, H_b.shape[-1])}")
    B, S, d = H_b.shape
    flat = T.reshape(H_b, (B * S, d))
    upd = T.scatter_add(flat, gb.fuse_rows, T.take(H_G, gb.fuse_nodes, axis=0), axis=0)
    return T.reshape(upd, (B, S, d))
