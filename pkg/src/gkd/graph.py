"""Population-graph construction and normalization.

Graphs are undirected and unweighted. ``SparseGraph`` keeps a symmetric
boolean CSR adjacency without self-loops; normalized operators are plain
``scipy.sparse.csr_matrix`` objects.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .nn import UsageError

log = logging.getLogger(__name__)

# Connection thresholds for the TADPOLE sparse biomarkers.
TADPOLE_THRESHOLDS = {"ABETA": 20.0, "TAU": 15.0, "PTAU": 1.5, "FDG": 0.02, "AV45": 0.03}


class SparseGraph:
    """Symmetric adjacency over ``n`` nodes, no self-loops or duplicates."""

    def __init__(self, n: int, edges: Iterable[tuple[int, int]] = ()):
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise UsageError(f"edge endpoint out of range for {n} nodes")
        edges = edges[edges[:, 0] != edges[:, 1]]
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n))
        self._set(adj)

    @classmethod
    def from_adjacency(cls, adj) -> "SparseGraph":
        adj = sp.csr_matrix(adj, dtype=bool)
        if adj.shape[0] != adj.shape[1]:
            raise UsageError(f"adjacency must be square, got {adj.shape}")
        adj = adj.maximum(adj.T).tolil()
        adj.setdiag(False)
        g = cls.__new__(cls)
        g._set(adj.tocsr())
        return g

    def _set(self, adj: sp.csr_matrix):
        adj.sum_duplicates()
        adj.eliminate_zeros()
        adj.sort_indices()
        self.adjacency = adj
        self.n = adj.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as sorted ``(i, j)`` pairs with ``i < j``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[k]), int(coo.col[k])) for k in order]

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def subgraph(self, nodes) -> "SparseGraph":
        """Induced subgraph on ``nodes`` (indices or boolean mask), relabelled in order."""
        idx = np.flatnonzero(nodes) if np.asarray(nodes).dtype == bool else np.asarray(nodes)
        return SparseGraph.from_adjacency(self.adjacency[idx][:, idx])

    def __eq__(self, other):
        if not isinstance(other, SparseGraph) or other.n != self.n:
            return NotImplemented if not isinstance(other, SparseGraph) else False
        return (self.adjacency != other.adjacency).nnz == 0

    def __repr__(self):
        return f"SparseGraph(n={self.n}, edges={self.num_edges})"


def threshold_graph(values: Sequence[float], threshold: float) -> SparseGraph:
    """Connect i, j when both values are observed and ``|v_i - v_j| < threshold``.

    Missing values are NaN (or None). Runs in O(n log n + |E|) by sorting.
    """
    if not threshold > 0:
        raise UsageError(f"threshold must be positive, got {threshold}")
    v = np.array([np.nan if x is None else x for x in values], dtype=float)
    obs = np.flatnonzero(~np.isnan(v))
    order = obs[np.argsort(v[obs], kind="stable")]
    sv = v[order]
    # candidate window per sorted position; slightly generous, exact test below
    reach = sv + threshold
    stop = np.searchsorted(sv, reach + 1e-12 * np.abs(reach), side="right")
    counts = stop - np.arange(sv.size) - 1
    src = np.repeat(np.arange(sv.size), counts)
    offsets = np.arange(src.size) - np.repeat(np.cumsum(counts) - counts, counts)
    dst = src + 1 + offsets
    pairs = np.column_stack([order[src], order[dst]])
    keep = np.abs(v[pairs[:, 0]] - v[pairs[:, 1]]) < threshold
    return SparseGraph(v.size, pairs[keep])


def union_graphs(graphs: Sequence[SparseGraph]) -> SparseGraph:
    if not graphs:
        raise UsageError("need at least one graph")
    n = graphs[0].n
    if any(g.n != n for g in graphs):
        raise UsageError(f"graphs have different node counts: {[g.n for g in graphs]}")
    adj = graphs[0].adjacency.copy()
    for g in graphs[1:]:
        adj = adj + g.adjacency
    out = SparseGraph.__new__(SparseGraph)
    out._set(sp.csr_matrix(adj, dtype=bool))
    return out


def multi_threshold_graph(features: np.ndarray, thresholds: Sequence[float]) -> SparseGraph:
    """Union of per-column threshold graphs (missing entries as NaN)."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != len(thresholds):
        raise UsageError(
            f"{len(thresholds)} thresholds for feature matrix of shape {features.shape}"
        )
    return union_graphs([threshold_graph(features[:, j], t) for j, t in enumerate(thresholds)])


def similarity_graph(embeddings: np.ndarray, threshold: float) -> SparseGraph:
    """Edge when cosine similarity of two rows exceeds ``threshold``."""
    if not 0 < threshold <= 1:
        raise UsageError(f"similarity threshold must be in (0, 1], got {threshold}")
    E = np.asarray(embeddings, dtype=float)
    norms = np.linalg.norm(E, axis=1)
    zero = norms == 0
    if zero.any():
        log.warning("%d embedding rows have zero norm; they get no edges", int(zero.sum()))
    U = np.zeros_like(E)
    U[~zero] = E[~zero] / norms[~zero, None]
    sim = U @ U.T
    i, j = np.nonzero(np.triu(sim > threshold, k=1))
    return SparseGraph(E.shape[0], np.column_stack([i, j]))


def row_normalize(g: SparseGraph) -> sp.csr_matrix:
    """``D^-1 A``; isolated nodes get a unit self-loop so every row sums to 1."""
    deg = g.degrees().astype(float)
    isolated = deg == 0
    adj = g.adjacency.astype(float) + sp.diags(isolated.astype(float))
    deg[isolated] = 1.0
    return sp.csr_matrix(sp.diags(1.0 / deg) @ adj)


def sym_normalize(g: SparseGraph) -> sp.csr_matrix:
    """Renormalized GCN operator ``D~^-1/2 (A + I) D~^-1/2``."""
    a = g.adjacency.astype(float) + sp.identity(g.n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel() ** -0.5
    return sp.csr_matrix(sp.diags(d) @ a @ sp.diags(d))


# --------------------------------------------------------------------------
# edge-list files: "N <count>" header, then "i j" per edge with i < j


def write_edgelist(g: SparseGraph, path) -> None:
    lines = [f"N {g.n}"] + [f"{i} {j}" for i, j in g.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path) -> SparseGraph:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("N "):
        raise ValueError(f"{path}: missing 'N <count>' header")
    n = int(text[0].split()[1])
    edges = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        i, j = int(parts[0]), int(parts[1])
        if not 0 <= i < j < n:
            raise ValueError(f"{path}:{lineno}: edge ({i}, {j}) invalid for N={n}")
        edges.append((i, j))
    return SparseGraph(n, edges)
