"""Symmetric-normalized bipartite adjacency and sparse propagation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class NormalizedGraph:
    """``D^-1/2 A D^-1/2`` over the joint node space.

    Users occupy rows ``0..num_users-1``; service ``s`` lives at row
    ``num_users + s``. ``adj`` is a CSR matrix and must not be mutated.
    """

    num_users: int
    num_services: int
    adj: sp.csr_matrix
    degrees: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_services

    @property
    def num_edges(self) -> int:
        """Number of undirected user-service edges."""
        return self.adj.nnz // 2

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        coo = self.adj.tocoo()
        return [(int(i), int(j), float(w)) for i, j, w in zip(coo.row, coo.col, coo.data)]

    def dense(self) -> np.ndarray:
        return self.adj.toarray()


def build_normalized(users: int, services: int, edges) -> NormalizedGraph:
    """Build the normalized adjacency for ``edges`` given as ``(user, service)`` pairs."""
    if not isinstance(edges, np.ndarray):
        edges = list(edges)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e):
        if e[:, 0].min() < 0 or e[:, 0].max() >= users:
            raise IndexError(f"user index out of range [0, {users})")
        if e[:, 1].min() < 0 or e[:, 1].max() >= services:
            raise IndexError(f"service index out of range [0, {services})")
        e = np.unique(e, axis=0)
    n = users + services
    rows = np.concatenate([e[:, 0], e[:, 1] + users])
    cols = np.concatenate([e[:, 1] + users, e[:, 0]])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    data = inv_sqrt[rows] * inv_sqrt[cols]
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return NormalizedGraph(users, services, adj, deg)


def propagate(g: NormalizedGraph, emb: np.ndarray) -> np.ndarray:
    """One linear graph-convolution layer: ``Ã @ emb``."""
    if emb.ndim != 2 or emb.shape[0] != g.num_nodes:
        raise ValueError(f"embedding has shape {emb.shape}, expected ({g.num_nodes}, D)")
    return np.asarray(g.adj @ emb)
