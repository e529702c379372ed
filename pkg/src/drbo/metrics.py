"""Structural accuracy metrics between an estimated DAG and the ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Dag

METRIC_FIELDS = ("shd", "tpr", "fdr", "precision", "recall", "f1")


@dataclass(frozen=True)
class MetricReport:
    shd: int
    tpr: float
    fdr: float
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False

    def to_csv_row(self) -> str:
        return ",".join(
            str(getattr(self, name)) if name == "shd" else f"{getattr(self, name):.6f}"
            for name in METRIC_FIELDS
        )

    @staticmethod
    def csv_header() -> str:
        return ",".join(METRIC_FIELDS)


def metrics(estimated: Dag, truth: Dag) -> MetricReport:
    """SHD (unit reversal cost) plus directed-edge classification metrics.

    An empty estimate against a non-empty truth reports FDR 0 and flags
    precision as undefined (reported as 1).
    """
    if estimated.n_nodes != truth.n_nodes:
        raise ValueError("graphs must have the same node count")
    est = estimated.adj.astype(bool)
    tru = truth.adj.astype(bool)

    reversed_ = est.T & tru & ~est
    missing = tru & ~est & ~est.T
    extra = est & ~tru & ~tru.T
    shd = int(reversed_.sum() + missing.sum() + extra.sum())

    tp = int((est & tru).sum())
    n_true = int(tru.sum())
    n_est = int(est.sum())
    tpr = tp / n_true if n_true else 1.0
    recall = tpr
    fdr = (n_est - tp) / n_est if n_est else 0.0
    precision_undefined = n_est == 0 and n_true > 0
    precision = tp / n_est if n_est else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricReport(
        shd=shd, tpr=float(tpr), fdr=float(fdr), precision=float(precision),
        recall=float(recall), f1=float(f1), precision_undefined=precision_undefined,
    )
