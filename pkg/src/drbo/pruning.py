"""Post-hoc edge pruning of an estimated DAG."""

from __future__ import annotations

import logging

import numpy as np
from scipy.stats import norm

from .graph import Dag
from .datagen import Dataset

log = logging.getLogger(__name__)


def _ols_coefs(y: np.ndarray, Xp: np.ndarray) -> np.ndarray:
    design = np.column_stack([np.ones(len(y)), Xp])
    gram = design.T @ design
    try:
        beta = np.linalg.solve(gram, design.T @ y)
    except np.linalg.LinAlgError:
        log.info("singular fit during pruning; using pseudo-inverse")
        beta = np.linalg.pinv(gram) @ (design.T @ y)
    return beta[1:]


def prune_linear_threshold(dag: Dag, data: Dataset, threshold: float = 0.3) -> Dag:
    """Keep edge j -> i iff the fitted OLS coefficient satisfies |w| > threshold."""
    adj = np.array(dag.adj)
    for i in range(dag.n_nodes):
        parents = dag.parents(i)
        if not len(parents):
            continue
        coefs = _ols_coefs(data.X[:, i], data.X[:, parents])
        for j, w in zip(parents, coefs):
            if abs(w) <= threshold:
                adj[j, i] = 0
    return Dag(adj)


def _fisher_z_pvalue(data: Dataset, i: int, j: int, cond: np.ndarray) -> float | None:
    """Partial-correlation test of x_i and x_j given x_cond; None if untestable."""
    n = data.n
    if len(cond) > n - 3:
        return None
    cols = np.concatenate(([i, j], cond)).astype(int)
    corr = np.corrcoef(data.X[:, cols], rowvar=False)
    try:
        prec = np.linalg.pinv(corr)
    except np.linalg.LinAlgError:
        return None
    r = -prec[0, 1] / np.sqrt(prec[0, 0] * prec[1, 1])
    r = float(np.clip(r, -1 + 1e-12, 1 - 1e-12))
    z = 0.5 * np.log((1 + r) / (1 - r))
    stat = np.sqrt(n - len(cond) - 3) * abs(z)
    return float(2.0 * norm.sf(stat))


def prune_ci(dag: Dag, data: Dataset, alpha: float = 0.001) -> Dag:
    """Drop parent j of node i when x_i is independent of x_j given the other parents.

    Parents are visited in ascending index order, re-testing against the
    shrinking parent set. Untestable edges (conditioning set too large) are kept.
    """
    adj = np.array(dag.adj)
    for i in range(dag.n_nodes):
        for j in sorted(np.flatnonzero(adj[:, i])):
            cond = np.array([p for p in np.flatnonzero(adj[:, i]) if p != j])
            pval = _fisher_z_pvalue(data, i, j, cond)
            if pval is None:
                log.info("conditioning set too large for edge %d->%d; keeping it", j, i)
                continue
            if pval >= alpha:
                adj[j, i] = 0
    return Dag(adj)
