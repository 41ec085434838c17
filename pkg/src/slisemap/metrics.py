"""Evaluation metrics over a fitted solution: cluster purity, fidelity
(pointwise and over embedding neighbourhoods), coverage against a loss
threshold, and the global reference model the threshold is derived from.

All k-nearest-neighbour sets are taken in the embedding with Euclidean
distance, exclude the query point itself, and break distance ties toward
the smaller index.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lbfgs
from .errors import ShapeError, SlisemapError
from .model import TaskKind
from .objective import local_loss_matrix, pairwise_distances, pointwise_losses, \
    uniform_loss_and_grad
from .solver import Solution, SolverConfig


@dataclass
class MetricReport:
    """Fidelity/coverage/purity values for a set of neighbourhood sizes."""

    fidelity_point: float
    fidelity_knn: dict[int, float]
    coverage_full: float
    coverage_knn: dict[int, float]
    threshold_l0: float
    purity_knn: Optional[dict[int, float]] = None

    def to_json_dict(self) -> dict:
        doc = {
            "fidelity_point": self.fidelity_point,
            "fidelity_knn": {str(k): v for k, v in self.fidelity_knn.items()},
            "coverage_full": self.coverage_full,
            "coverage_knn": {str(k): v for k, v in self.coverage_knn.items()},
            "threshold_l0": self.threshold_l0,
            "purity_knn": None if self.purity_knn is None
            else {str(k): v for k, v in self.purity_knn.items()},
        }
        return doc

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    def rows(self):
        """Flat (metric, k, value) rows; k is empty for whole-data metrics."""
        out = [("fidelity_point", "", self.fidelity_point),
               ("coverage_full", "", self.coverage_full),
               ("threshold_l0", "", self.threshold_l0)]
        out += [("fidelity_knn", k, v) for k, v in sorted(self.fidelity_knn.items())]
        out += [("coverage_knn", k, v) for k, v in sorted(self.coverage_knn.items())]
        if self.purity_knn is not None:
            out += [("purity_knn", k, v) for k, v in sorted(self.purity_knn.items())]
        return out

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "k", "value"])
            for metric, k, v in self.rows():
                writer.writerow([metric, k, repr(float(v))])


def fit_global_model(X, Y, task: TaskKind, *, lambda_lasso: float = 1e-4,
                     config: SolverConfig = SolverConfig()) -> np.ndarray:
    """One white-box model over all items with uniform weights.

    Minimizes the summed pointwise loss plus the lasso penalty with the
    same quasi-Newton core as the main fit.  Warns on rank-deficient
    covariates (the penalty keeps the problem determined).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        warnings.warn("covariate matrix is rank deficient; the penalized "
                      "solution is returned")
    q = task.coef_len(X.shape[1])

    def fg(b):
        return uniform_loss_and_grad(b, X, Y, task, lambda_lasso)

    res = lbfgs.minimize(fg, np.zeros(q), history=config.lbfgs_history,
                         max_iters=config.lbfgs_max_iters, rel_tol=1e-12)
    return res.x


def loss_threshold(global_losses, q: float = 0.3) -> float:
    """Empirical quantile of a loss sample, interpolating linearly between
    the closest order statistics."""
    losses = np.asarray(global_losses, dtype=float)
    if losses.size == 0:
        raise SlisemapError("loss_threshold needs a nonempty loss vector")
    return float(np.quantile(losses, q))


def knn_indices(Z: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbours of every row of ``Z``.

    Self is excluded; ties break toward the smaller index (stable sort).
    """
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    if not 1 <= k < n:
        raise SlisemapError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    D = pairwise_distances(Z)
    np.fill_diagonal(D, np.inf)
    order = np.argsort(D, axis=1, kind="stable")
    return order[:, :k]


def cluster_purity(Z: np.ndarray, labels, k: int) -> float:
    """Average fraction of each item's embedding neighbours sharing its
    ground-truth label."""
    labels = np.asarray(labels)
    Z = np.asarray(Z, dtype=float)
    if labels.shape[0] != Z.shape[0]:
        raise ShapeError("labels length does not match the embedding",
                         expected=Z.shape[0], got=labels.shape[0])
    nn = knn_indices(Z, k)
    same = labels[nn] == labels[:, None]
    return float(same.mean())


def fidelity(sol: Solution, k: Optional[int] = None) -> float:
    """Mean loss of each local model on its own item (``k=None``) or on its
    k embedding neighbours.  Lower is better."""
    L = local_loss_matrix(sol.B, sol.X, sol.Y, sol.task)
    if k is None:
        return float(np.diag(L).mean())
    nn = knn_indices(sol.Z, k)
    return float(np.take_along_axis(L, nn, axis=1).mean())


def coverage(sol: Solution, l0: float, k: Optional[int] = None) -> float:
    """Fraction of (model, item) pairs with loss strictly below ``l0``,
    over all pairs (``k=None``) or each model's k embedding neighbours.
    Higher is better."""
    if np.isnan(l0):
        raise SlisemapError("threshold must not be NaN")
    L = local_loss_matrix(sol.B, sol.X, sol.Y, sol.task)
    hit = L < l0
    if k is None:
        return float(hit.mean())
    nn = knn_indices(sol.Z, k)
    return float(np.take_along_axis(hit, nn, axis=1).mean())


def compute_report(sol: Solution, ks, labels=None, quantile: float = 0.3,
                   config: SolverConfig = SolverConfig()) -> MetricReport:
    """Full metric sweep: global reference model, loss threshold, and
    fidelity/coverage (and purity when labels are given) at every k."""
    ks = sorted(set(int(k) for k in ks))
    b_global = fit_global_model(sol.X, sol.Y, sol.task,
                                lambda_lasso=sol.hyperparams.lambda_lasso,
                                config=config)
    l0 = loss_threshold(pointwise_losses(b_global, sol.X, sol.Y, sol.task),
                        quantile)
    report = MetricReport(
        fidelity_point=fidelity(sol),
        fidelity_knn={k: fidelity(sol, k) for k in ks},
        coverage_full=coverage(sol, l0),
        coverage_knn={k: coverage(sol, l0, k) for k in ks},
        threshold_l0=l0,
    )
    if labels is not None:
        report.purity_knn = {k: cluster_purity(sol.Z, labels, k) for k in ks}
    return report
