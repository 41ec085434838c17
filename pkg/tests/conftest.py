"""Shared test helpers: independent scalar-loop reimplementations of the
loss (used as oracles) and random problem-instance generators.

The oracles deliberately avoid the vectorized code paths under test: plain
Python loops over ``math`` functions only.
"""

import math

import numpy as np
import pytest

from slisemap.model import TaskKind
from slisemap.objective import Hyperparams


def scalar_point_loss(b, x, y, task: TaskKind) -> float:
    """Loss of one model on one point, by scalar arithmetic."""
    m = len(x)
    if task.is_classification:
        p = task.n_classes
        logits = []
        for c in range(p - 1):
            logits.append(sum(b[c * m + k] * x[k] for k in range(m)))
        logits.append(0.0)
        mx = max(logits)
        exps = [math.exp(v - mx) for v in logits]
        den = sum(exps)
        probs = [e / den for e in exps]
        return 1.0 - sum(math.sqrt(probs[c] * y[c]) for c in range(p))
    pred = sum(b[k] * x[k] for k in range(m))
    r = pred - float(y[0])
    return r * r


def scalar_total_loss(X, Y, B, Z, hp: Hyperparams, task: TaskKind) -> float:
    """Pure-Python reimplementation of the joint loss (no numpy ops)."""
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float).T).T
    B = np.asarray(B, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n = X.shape[0]
    d = Z.shape[1]

    def dist(i, j):
        return math.sqrt(sum((Z[i, k] - Z[j, k]) ** 2 for k in range(d)))

    total = 0.0
    for i in range(n):
        den = sum(math.exp(-dist(i, k)) for k in range(n))
        for j in range(n):
            w = math.exp(-dist(i, j)) / den
            total += w * scalar_point_loss(B[i], X[j], Y[j], task)
    total += hp.lambda_z * sum(Z[i, k] ** 2 for i in range(n) for k in range(d))
    total += hp.lambda_lasso * sum(abs(v) for row in B for v in row)
    return total


def scalar_row_contribution(X, Y, B, Z, hp: Hyperparams, task: TaskKind,
                            i: int) -> float:
    """Row i's own share of the joint loss, by scalar arithmetic."""
    X = np.asarray(X, dtype=float)
    Y = np.atleast_2d(np.asarray(Y, dtype=float).T).T
    B = np.asarray(B, dtype=float)
    Z = np.asarray(Z, dtype=float)
    n, d = Z.shape

    def dist(j):
        return math.sqrt(sum((Z[i, k] - Z[j, k]) ** 2 for k in range(d)))

    den = sum(math.exp(-dist(k)) for k in range(n))
    s = sum(math.exp(-dist(j)) / den * scalar_point_loss(B[i], X[j], Y[j], task)
            for j in range(n))
    s += hp.lambda_z * sum(Z[i, k] ** 2 for k in range(d))
    s += hp.lambda_lasso * sum(abs(v) for v in B[i])
    return s


def random_instance(task: TaskKind, n, m, d, rng, lambda_z=0.2):
    """A random well-posed problem: intercept-augmented X, valid Y, and
    (B, Z) bounded away from the lasso kink and coincident embeddings."""
    X = np.hstack([rng.standard_normal((n, m)), np.ones((n, 1))])
    if task.is_classification:
        raw = rng.random((n, task.n_classes)) + 0.1
        Y = raw / raw.sum(axis=1, keepdims=True)
    else:
        Y = rng.standard_normal((n, 1))
    q = task.coef_len(m + 1)
    B = rng.standard_normal((n, q))
    B += np.where(B >= 0, 0.2, -0.2)  # keep |B| > 0.1 for the lasso subgradient
    Z = rng.standard_normal((n, d))
    hp = Hyperparams(lambda_z=lambda_z, d=d)
    return X, Y, B, Z, hp


def max_grad_error(analytic, numeric):
    """Largest mixed absolute/relative disagreement between two gradients."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = 1.0 + np.maximum(np.abs(analytic), np.abs(numeric))
    return float((np.abs(analytic - numeric) / scale).max())


def central_difference(fun, x0, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    g = np.zeros_like(x0)
    flat = g.ravel()
    xf = x0.ravel()
    for i in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (fun(xp.reshape(x0.shape)) - fun(xm.reshape(x0.shape))) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
