"""Synthetic ground-truth graphs and observational datasets."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .graph import Dag, topological_order_adj

MECHANISMS = ("linear", "gp_nonlinear", "cosine_nonlinear", "logistic")
NOISES = ("gaussian", "exponential", "gumbel", "laplace", "uniform")


@dataclass(frozen=True)
class Dataset:
    """n x d sample matrix with rows as i.i.d. observations."""

    X: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D matrix")
        if not np.isfinite(X).all():
            raise ValueError("dataset contains NaN/Inf entries")
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def to_csv(self, path) -> None:
        header = ",".join(f"x{i + 1}" for i in range(self.d))
        np.savetxt(path, self.X, delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path, standardized: bool = False) -> "Dataset":
        with open(path) as fh:
            header = fh.readline().strip()
            cols = header.split(",")
            expected = [f"x{i + 1}" for i in range(len(cols))]
            if cols != expected:
                raise ValueError(f"line 1: expected header {','.join(expected)!r}, got {header!r}")
            rows = []
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != len(cols):
                    raise ValueError(f"line {lineno}: expected {len(cols)} fields, got {len(parts)}")
                try:
                    rows.append([float(v) for v in parts])
                except ValueError as exc:
                    raise ValueError(f"line {lineno}: {exc}") from None
        return cls(np.array(rows), standardized=standardized)


@dataclass(frozen=True)
class ScmSpec:
    """Generative model: graph, mechanism family, weights, and noise family."""

    graph: Dag
    mechanism: str = "linear"
    weights: np.ndarray | None = None
    noise: str = "gaussian"
    noise_scale: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.noise not in NOISES:
            raise ValueError(f"unknown noise {self.noise!r}")
        if self.weights is not None:
            W = np.asarray(self.weights, dtype=float)
            if (W != 0).astype(np.uint8).tobytes() != self.graph.adj.tobytes():
                raise ValueError("weights must be nonzero exactly on graph edges")
            object.__setattr__(self, "weights", W)


def sample_er_dag(d: int, e: float, rng: np.random.Generator) -> Dag:
    """Erdos-Renyi DAG with expected d*e edges, oriented by a random permutation.

    Edge probability is 2e/(d-1) so the expected directed edge count is d*e.
    """
    if d < 2:
        raise ValueError("need at least 2 nodes")
    if e < 0:
        raise ValueError("expected in-degree must be non-negative")
    prob = 2.0 * e / (d - 1)
    if prob > 1:
        raise ValueError(f"edge density e={e} too large for d={d} nodes")
    perm = rng.permutation(d)
    adj = np.zeros((d, d), dtype=np.uint8)
    upper = np.triu(rng.random((d, d)) < prob, k=1)
    # orient i -> j along the permutation order
    for a in range(d):
        for b in range(a + 1, d):
            if upper[a, b]:
                adj[perm[a], perm[b]] = 1
    return Dag(adj)


def sample_sf_dag(d: int, e: int, rng: np.random.Generator) -> Dag:
    """Scale-free DAG grown by preferential attachment, oriented old -> new.

    Starts from a single node; node t attaches min(e, t) edges, so the edge
    count is exactly sum_t min(e, t), approaching d*e for d >> e.
    """
    if not d > e >= 1:
        raise ValueError("need d > e >= 1")
    adj = np.zeros((d, d), dtype=np.uint8)
    degree = np.zeros(d)
    for t in range(1, d):
        m = min(e, t)
        weights = degree[:t] + 1.0  # +1 keeps isolated nodes reachable
        targets = rng.choice(t, size=m, replace=False, p=weights / weights.sum())
        for s in targets:
            adj[s, t] = 1
            degree[s] += 1
        degree[t] += m
    return Dag(adj)


def sample_linear_weights(dag: Dag, rng: np.random.Generator) -> np.ndarray:
    """Edge weights uniform on [-2, -0.5] U [0.5, 2]; zero off the edge set."""
    d = dag.n_nodes
    magnitude = rng.uniform(0.5, 2.0, size=(d, d))
    sign = np.where(rng.random((d, d)) < 0.5, -1.0, 1.0)
    return magnitude * sign * dag.adj


def _sample_noise(noise: str, size, scale, rng: np.random.Generator) -> np.ndarray:
    if noise == "gaussian":
        return rng.normal(0.0, np.sqrt(scale), size)
    if noise == "exponential":
        return rng.exponential(scale, size)
    if noise == "gumbel":
        return rng.gumbel(0.0, scale, size)
    if noise == "laplace":
        return rng.laplace(0.0, scale, size)
    if noise == "uniform":
        return rng.uniform(-scale, scale, size)
    raise ValueError(f"unknown noise {noise!r}")


def _gp_prior_draw(parents_X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One joint draw of f over the realized parent rows, unit-bandwidth RBF kernel."""
    n = parents_X.shape[0]
    sq = np.sum(parents_X**2, axis=1)
    dist2 = sq[:, None] + sq[None, :] - 2.0 * parents_X @ parents_X.T
    np.maximum(dist2, 0.0, out=dist2)
    K = np.exp(-0.5 * dist2)
    jitter = 1e-8 * np.trace(K) / n
    while jitter <= 1e-2:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            return L @ rng.standard_normal(n)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError("degenerate kernel: Cholesky failed at max jitter")


def simulate(spec: ScmSpec, n: int, rng: np.random.Generator) -> Dataset:
    """Sample n observations, filling columns in topological order."""
    if n < 1:
        raise ValueError("need n >= 1")
    dag = spec.graph
    d = dag.n_nodes
    order = topological_order_adj(dag.adj)
    X = np.zeros((n, d))
    scales = np.broadcast_to(np.asarray(spec.noise_scale, dtype=float), (d,))

    if spec.mechanism == "gp_nonlinear":
        # per-node Gaussian noise with variance uniform in [0.4, 0.8]
        scales = rng.uniform(0.4, 0.8, size=d)

    for i in order:
        pa = dag.parents(i)
        if spec.mechanism == "linear":
            mean = X[:, pa] @ spec.weights[pa, i] if len(pa) else np.zeros(n)
            X[:, i] = mean + _sample_noise(spec.noise, n, scales[i], rng)
        elif spec.mechanism == "cosine_nonlinear":
            mean = np.cos(X[:, pa]) @ spec.weights[pa, i] if len(pa) else np.zeros(n)
            X[:, i] = mean + _sample_noise(spec.noise, n, scales[i], rng)
        elif spec.mechanism == "gp_nonlinear":
            f = _gp_prior_draw(X[:, pa], rng) if len(pa) else np.zeros(n)
            X[:, i] = f + rng.normal(0.0, np.sqrt(scales[i]), n)
        elif spec.mechanism == "logistic":
            logits = X[:, pa] @ spec.weights[pa, i] if len(pa) else np.zeros(n)
            prob = 1.0 / (1.0 + np.exp(-logits))
            X[:, i] = (rng.random(n) < prob).astype(float)
    return Dataset(X)


def standardize(ds: Dataset) -> Dataset:
    """Column-wise z-scoring with the unbiased (n-1) variance."""
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0, ddof=1)
    if np.any(std == 0):
        bad = int(np.flatnonzero(std == 0)[0])
        raise ValueError(f"column {bad} is constant; cannot standardize")
    return replace(ds, X=(ds.X - mean) / std, standardized=True)
