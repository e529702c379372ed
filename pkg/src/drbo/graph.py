"""DAG types, the low-rank vector-to-DAG map, and graph utilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CycleError(ValueError):
    """Raised when a graph expected to be acyclic contains a cycle."""


def grad_flow(p: np.ndarray) -> np.ndarray:
    """Antisymmetric matrix of potential differences: out[i, j] = p[j] - p[i]."""
    p = np.asarray(p, dtype=float)
    return p[None, :] - p[:, None]


def is_acyclic(adj: np.ndarray) -> bool:
    adj = np.asarray(adj)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {adj.shape}")
    try:
        topological_order_adj(adj)
    except CycleError:
        return False
    return True


def topological_order_adj(adj: np.ndarray) -> np.ndarray:
    """Kahn-style elimination. Returns a node order; raises CycleError on a cycle.

    The empty graph yields the identity order (ties broken by node index).
    """
    adj = np.asarray(adj)
    d = adj.shape[0]
    in_deg = adj.sum(axis=0).astype(int)
    order = []
    ready = sorted(np.flatnonzero(in_deg == 0).tolist())
    while ready:
        u = ready.pop(0)
        order.append(u)
        for v in np.flatnonzero(adj[u]):
            in_deg[v] -= 1
            if in_deg[v] == 0:
                ready.append(v)
        ready.sort()
    if len(order) != d:
        raise CycleError("graph contains a cycle")
    return np.array(order, dtype=int)


@dataclass(frozen=True)
class Dag:
    """Binary adjacency with adj[i, j] = 1 iff edge i -> j; acyclic by invariant."""

    adj: np.ndarray

    def __post_init__(self):
        adj = np.ascontiguousarray(np.asarray(self.adj, dtype=np.uint8))
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency must be binary")
        if adj.diagonal().any():
            raise ValueError("adjacency diagonal must be zero")
        if not is_acyclic(adj):
            raise CycleError("adjacency contains a cycle")
        adj.flags.writeable = False
        object.__setattr__(self, "adj", adj)

    @property
    def n_nodes(self) -> int:
        return self.adj.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum())

    def parents(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adj[:, i])

    def parent_mask(self, i: int) -> int:
        """Parents of node i as a bitmask: bit j set iff edge j -> i."""
        mask = 0
        for j in self.parents(i):
            mask |= 1 << int(j)
        return mask

    def parent_masks(self) -> tuple[int, ...]:
        return tuple(self.parent_mask(i) for i in range(self.n_nodes))

    def topological_order(self) -> np.ndarray:
        return topological_order_adj(self.adj)

    def __eq__(self, other) -> bool:
        return isinstance(other, Dag) and np.array_equal(self.adj, other.adj)

    def __hash__(self) -> int:
        return hash(self.adj.tobytes())

    def to_csv(self, path) -> None:
        """Headerless CSV of 0/1 integers, row i = source node i."""
        np.savetxt(path, self.adj, fmt="%d", delimiter=",")

    @classmethod
    def from_csv(cls, path) -> "Dag":
        adj = np.loadtxt(path, delimiter=",", dtype=int)
        if adj.ndim == 0:
            adj = adj.reshape(1, 1)
        return cls(adj)


@dataclass(frozen=True)
class LatentPoint:
    """Search variable z in [-1, 1]^{d(1+k)}: node potentials p then embeddings R."""

    d: int
    k: int
    z: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ValueError("d and k must be positive")
        z = np.ascontiguousarray(np.asarray(self.z, dtype=float))
        if z.shape != (self.d * (1 + self.k),):
            raise ValueError(
                f"z must have length d*(1+k)={self.d * (1 + self.k)}, got {z.shape}"
            )
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    @property
    def p(self) -> np.ndarray:
        return self.z[: self.d]

    @property
    def R(self) -> np.ndarray:
        return self.z[self.d:].reshape(self.d, self.k)

    def scaled(self, alpha: float) -> "LatentPoint":
        return LatentPoint(self.d, self.k, alpha * self.z)


def vec_to_adj(p: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Heaviside-thresholded map: edge i -> j iff p_j - p_i > 0 and <r_i, r_j> > 0.

    H(0) = 0, so zero gradients or zero inner products never create edges.
    """
    gram = np.asarray(R, float) @ np.asarray(R, float).T
    return ((grad_flow(p) > 0) & (gram > 0)).astype(np.uint8)


def vec_to_dag(pt: LatentPoint) -> Dag:
    return Dag(vec_to_adj(pt.p, pt.R))


def vec_to_adj_batch(Z: np.ndarray, d: int, k: int) -> np.ndarray:
    """Vectorized map for a (C, d*(1+k)) batch; returns (C, d, d) uint8."""
    Z = np.asarray(Z, dtype=float)
    P = Z[:, :d]
    R = Z[:, d:].reshape(-1, d, k)
    grad = P[:, None, :] - P[:, :, None]
    gram = np.einsum("cik,cjk->cij", R, R)
    return ((grad > 0) & (gram > 0)).astype(np.uint8)


def mask_to_features(mask: int, d: int) -> np.ndarray:
    """Expand a parent bitmask to a dense 0/1 feature vector of length d."""
    out = np.zeros(d)
    for j in range(d):
        if mask >> j & 1:
            out[j] = 1.0
    return out
