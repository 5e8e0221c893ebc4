"""CSR graph storage, adjacency normalization, and sparse-dense products.

All node indices are int64 so multi-million-node graphs fit without care.
Graphs are plain CSR structure (no weights); weights only ever come from
normalization and live in NormalizedAdjacency. Both types are frozen after
construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from scalegnn.instrument import op_counter


@dataclass(frozen=True)
class Graph:
    num_nodes: int
    row_offsets: np.ndarray  # int64, len num_nodes+1
    col_indices: np.ndarray  # int64, len num_edges
    is_symmetric: bool = False

    @property
    def num_edges(self) -> int:
        return int(self.col_indices.shape[0])

    def neighbors(self, u: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[u]:self.row_offsets[u + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def in_degrees(self) -> np.ndarray:
        return np.bincount(self.col_indices, minlength=self.num_nodes).astype(np.int64)


@dataclass(frozen=True)
class NormalizedAdjacency:
    structure: Graph
    values: np.ndarray  # float64, aligned with structure.col_indices
    norm_kind: str  # "sym" | "row" | "col"
    self_loops_added: bool

    @property
    def num_nodes(self) -> int:
        return self.structure.num_nodes

    def to_scipy(self) -> sp.csr_matrix:
        g = self.structure
        return sp.csr_matrix(
            (self.values, g.col_indices, g.row_offsets),
            shape=(g.num_nodes, g.num_nodes),
        )


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray  # int64 class index per node
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        object.__setattr__(self, "labels", lab)


@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        combined = np.concatenate([self.train, self.val, self.test])
        if combined.size != np.unique(combined).size:
            raise ValueError("split sets overlap")
        if combined.size and combined.min() < 0:
            raise ValueError("negative node index in split")


def _csr_from_pairs(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort by (src, dst), drop duplicates, return (row_offsets, col_indices)."""
    if src.size:
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        keep = np.ones(src.size, dtype=bool)
        keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        src, dst = src[keep], dst[keep]
    counts = np.bincount(src, minlength=num_nodes)
    row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    return row_offsets, dst.astype(np.int64)


def _check_symmetry(num_nodes: int, row_offsets: np.ndarray, col_indices: np.ndarray) -> bool:
    src = np.repeat(np.arange(num_nodes, dtype=np.int64), np.diff(row_offsets))
    fwd = src * num_nodes + col_indices
    rev = col_indices * num_nodes + src
    fwd.sort()
    rev.sort()
    return bool(np.array_equal(fwd, rev))


def build_graph(edge_list, num_nodes: int, symmetrize: bool = False) -> Graph:
    """Build a sorted, deduplicated CSR graph from an iterable/array of (u, v).

    With symmetrize=True every reverse edge is added before deduplication.
    Endpoint validation happens first and names the offending pair.
    """
    edges = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                       dtype=np.int64)
    if edges.size == 0:
        edges = edges.reshape(0, 2)
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise ValueError("edge_list must be pairs of node indices")
    bad = (edges < 0) | (edges >= num_nodes)
    if bad.any():
        u, v = edges[bad.any(axis=1)][0]
        raise ValueError(f"edge ({u}, {v}) has endpoint outside [0, {num_nodes})")
    src, dst = edges[:, 0], edges[:, 1]
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    row_offsets, col_indices = _csr_from_pairs(num_nodes, src, dst)
    if symmetrize:
        is_sym = True
    else:
        is_sym = _check_symmetry(num_nodes, row_offsets, col_indices)
    return Graph(num_nodes, row_offsets, col_indices, is_symmetric=is_sym)


def add_self_loops(g: Graph) -> Graph:
    """Return a graph where every node has its (v, v) edge. Idempotent."""
    src = np.repeat(np.arange(g.num_nodes, dtype=np.int64), np.diff(g.row_offsets))
    loops = np.arange(g.num_nodes, dtype=np.int64)
    row_offsets, col_indices = _csr_from_pairs(
        g.num_nodes, np.concatenate([src, loops]), np.concatenate([g.col_indices, loops])
    )
    return Graph(g.num_nodes, row_offsets, col_indices, is_symmetric=g.is_symmetric)


def normalize_adjacency(g: Graph, kind: str, with_self_loops: bool = True) -> NormalizedAdjacency:
    """Weight the edges of g by degree.

    kind="row" divides each row by its out-degree, "col" divides each column
    by its in-degree, "sym" scales edge (u, v) by 1/sqrt(d_out(u) * d_in(v)).
    Self-loops, when requested, are added before degrees are computed.
    Isolated nodes get all-zero rows/columns instead of a division error.
    """
    if kind not in ("sym", "row", "col"):
        raise ValueError(f"unknown norm kind {kind!r}")
    if with_self_loops:
        g = add_self_loops(g)
    src = np.repeat(np.arange(g.num_nodes, dtype=np.int64), np.diff(g.row_offsets))
    dst = g.col_indices
    d_out = np.diff(g.row_offsets).astype(np.float64)
    d_in = np.bincount(dst, minlength=g.num_nodes).astype(np.float64)
    with np.errstate(divide="ignore"):
        if kind == "row":
            inv = np.where(d_out > 0, 1.0 / d_out, 0.0)
            values = inv[src]
        elif kind == "col":
            inv = np.where(d_in > 0, 1.0 / d_in, 0.0)
            values = inv[dst]
        else:
            inv_out = np.where(d_out > 0, 1.0 / np.sqrt(d_out), 0.0)
            inv_in = np.where(d_in > 0, 1.0 / np.sqrt(d_in), 0.0)
            values = inv_out[src] * inv_in[dst]
    return NormalizedAdjacency(g, values, kind, bool(with_self_loops))


def spmm(a: NormalizedAdjacency, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product a @ x. Counts one op on the global op counter.

    Output dtype follows x (float32 in, float32 out), so memory accounting
    of feature pipelines stays honest.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[:, None]
        squeeze = True
    else:
        squeeze = False
    if x.shape[0] != a.num_nodes:
        raise ValueError(f"spmm shape mismatch: adjacency has {a.num_nodes} nodes, x has {x.shape[0]} rows")
    mat = a.to_scipy()
    if x.dtype == np.float32:
        mat = mat.astype(np.float32)
    out = mat @ x
    op_counter.record_spmm(a.structure.num_edges, x.shape[1])
    return out[:, 0] if squeeze else out


def csr_matmul(mat: sp.spmatrix, x: np.ndarray) -> np.ndarray:
    """Sparse block @ dense, with the same op accounting as spmm."""
    out = mat @ x
    op_counter.record_spmm(mat.nnz, x.shape[1] if x.ndim > 1 else 1)
    return out


def induced_subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Vertex-induced subgraph on `nodes`, relabeled densely in given order.

    Returns (subgraph, mapping) where mapping[old] = new index or -1.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size != np.unique(nodes).size:
        raise ValueError("duplicate node in subgraph node set")
    if nodes.size and (nodes.min() < 0 or nodes.max() >= g.num_nodes):
        raise ValueError("subgraph node outside graph")
    mapping = np.full(g.num_nodes, -1, dtype=np.int64)
    mapping[nodes] = np.arange(nodes.size, dtype=np.int64)
    counts = (g.row_offsets[nodes + 1] - g.row_offsets[nodes]) if nodes.size else np.zeros(0, dtype=np.int64)
    total = int(counts.sum())
    if total:
        starts = g.row_offsets[nodes]
        offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        cols = g.col_indices[np.repeat(starts, counts) + offsets]
        rows_new = np.repeat(np.arange(nodes.size, dtype=np.int64), counts)
        cols_new = mapping[cols]
        keep = cols_new >= 0
        row_offsets, col_indices = _csr_from_pairs(nodes.size, rows_new[keep], cols_new[keep])
    else:
        row_offsets = np.zeros(nodes.size + 1, dtype=np.int64)
        col_indices = np.zeros(0, dtype=np.int64)
    return Graph(nodes.size, row_offsets, col_indices, is_symmetric=g.is_symmetric), mapping
