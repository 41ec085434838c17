"""The joint loss surface over local models B and embedding Z.

The total loss is

    sum_ij W_ij L_ij  +  lambda_z * sum(Z**2)  +  lambda_lasso * sum(|B|)

where W is the row-softmax of negative pairwise embedding distances and
L_ij is the loss of local model i evaluated on data item j.  Everything is
computed densely (the soft neighbourhood is global), vectorized over numpy,
and in float64.

Gradients with respect to B and Z are analytic.  The lasso term uses the
subgradient sign(x) with sign(0) = 0.  The distance derivative uses
sqrt(D^2 + eps) so coincident embedding points do not produce infinities;
forward values are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .model import TaskKind

# Smoothing inside the distance derivative only; keeps the gradient finite
# when two embedding rows coincide.
_DIST_GRAD_EPS = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    """Loss constants: embedding penalty, lasso penalty, embedding width."""

    lambda_z: float
    lambda_lasso: float = 1e-4
    d: int = 2

    def __post_init__(self):
        if not self.lambda_z > 0:
            raise ValueError(f"lambda_z must be > 0, got {self.lambda_z}")
        if self.lambda_lasso < 0:
            raise ValueError(f"lambda_lasso must be >= 0, got {self.lambda_lasso}")
        if self.d < 1:
            raise ValueError(f"embedding dimension must be >= 1, got {self.d}")


@dataclass(frozen=True)
class LossState:
    """All intermediates of one loss evaluation."""

    D: np.ndarray  # pairwise embedding distances, n x n
    W: np.ndarray  # row-stochastic softmax weights, n x n
    L: np.ndarray  # pairwise local-model losses, n x n
    total: float


def pairwise_distances(Z: np.ndarray) -> np.ndarray:
    """Euclidean distances between all pairs of rows of ``Z``.

    Symmetric with an exactly zero diagonal.
    """
    Z = np.asarray(Z, dtype=float)
    sq = np.einsum("ij,ij->i", Z, Z)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(d2, 0.0, out=d2)
    D = np.sqrt(d2)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def softmax_weights(D: np.ndarray) -> np.ndarray:
    """Row-softmax of ``-D``: each row of the result sums to one.

    The row maximum is subtracted before exponentiation.  With a zero
    diagonal the maximum of ``-D`` is 0, so this is a no-op for genuine
    distance matrices, but it keeps the routine safe for arbitrary input.
    """
    D = np.asarray(D, dtype=float)
    e = np.exp(-(D - D.min(axis=1, keepdims=True)))
    return e / e.sum(axis=1, keepdims=True)


def _check_shapes(B, X, Y, task: TaskKind):
    n_pts, n_cols = X.shape
    q = task.coef_len(n_cols)
    if B.ndim != 2 or B.shape[1] != q:
        raise ShapeError("coefficient matrix width does not match task",
                         expected=q, got=B.shape)
    p = task.response_dim()
    if Y.shape != (n_pts, p):
        raise ShapeError("response matrix shape does not match task",
                         expected=(n_pts, p), got=Y.shape)


def _regression_losses(B, X, y):
    # rows: models, cols: data items; overflow surfaces later as a
    # NumericError on the non-finite total, not as a runtime warning
    with np.errstate(over="ignore", invalid="ignore"):
        R = B @ X.T - y[None, :]
        return R * R, R


def _classification_losses(B, X, Y, p):
    n_mod = B.shape[0]
    n_pts, n_cols = X.shape
    B3 = B.reshape(n_mod, p - 1, n_cols)
    logits = np.empty((n_mod, n_pts, p))
    logits[:, :, : p - 1] = np.tensordot(B3, X, axes=([2], [1])).transpose(0, 2, 1)
    logits[:, :, p - 1] = 0.0  # reference class
    logits -= logits.max(axis=2, keepdims=True)
    Q = np.exp(logits)
    Q /= Q.sum(axis=2, keepdims=True)
    H = np.sqrt(Q * Y[None, :, :])
    Hsum = H.sum(axis=2)
    return 1.0 - Hsum, (Q, H, Hsum)


def local_loss_matrix(B: np.ndarray, X: np.ndarray, Y: np.ndarray,
                      task: TaskKind) -> np.ndarray:
    """Loss of every local model on every data item.

    Entry (i, j) is the loss of model row i applied to item j.  ``B`` may
    have a different number of rows than ``X`` (e.g. a single global model
    against all items).
    """
    B = np.asarray(B, dtype=float)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    _check_shapes(B, X, Y, task)
    if task.is_classification:
        L, _ = _classification_losses(B, X, Y, task.n_classes)
    else:
        L, _ = _regression_losses(B, X, Y[:, 0])
    return L


def _data_grad_b(B, X, Y, task: TaskKind, V, cache):
    """Gradient of sum_ij V_ij L_ij with respect to B."""
    if task.is_classification:
        Q, H, Hsum = cache
        p = task.n_classes
        # d L_ij / d logit_c = -(H_c - Q_c * Hsum) / 2 for the p-1 free logits
        T = -0.5 * (H[:, :, : p - 1] - Q[:, :, : p - 1] * Hsum[:, :, None])
        G = V[:, :, None] * T
        gB3 = np.einsum("ijc,jk->ick", G, X)
        return gB3.reshape(B.shape)
    R = cache
    return 2.0 * ((V * R) @ X)


def _data_grad_z(Z, D, W, L, S):
    """Gradient of sum_ij W_ij L_ij with respect to Z.

    ``S`` is the per-row weighted loss sum_j W_ij L_ij.  The dependence on
    Z goes only through the softmax weights; collecting terms gives, for
    each ordered pair, a coefficient W_ik (S_i - L_ik) on dD_ik.
    """
    M = W * (S[:, None] - L)
    A = M + M.T
    inv = 1.0 / np.sqrt(D * D + _DIST_GRAD_EPS)
    np.fill_diagonal(inv, 0.0)  # D_ii is identically zero, no gradient
    C = A * inv
    return C.sum(axis=1)[:, None] * Z - C @ Z


def loss_state(X, Y, B, Z, hp: Hyperparams, task: TaskKind) -> LossState:
    """Evaluate the full loss and return all intermediates."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    B = np.asarray(B, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    _check_shapes(B, X, Y, task)
    if B.shape[0] != Z.shape[0] or Z.shape[1] != hp.d:
        raise ShapeError("B and Z row counts (or Z width) disagree",
                         expected=(B.shape[0], hp.d), got=Z.shape)
    D = pairwise_distances(Z)
    W = softmax_weights(D)
    L = local_loss_matrix(B, X, Y, task)
    with np.errstate(over="ignore", invalid="ignore"):
        data = float((W * L).sum())
        z_pen = hp.lambda_z * float((Z * Z).sum())
        lasso = hp.lambda_lasso * float(np.abs(B).sum())
    total = data + z_pen + lasso
    if not np.isfinite(total):
        for name, v in (("weighted data term", data),
                        ("embedding penalty", z_pen),
                        ("lasso penalty", lasso)):
            if not np.isfinite(v):
                raise NumericError(f"total loss is non-finite: {name} = {v}")
        raise NumericError("total loss is non-finite")
    return LossState(D=D, W=W, L=L, total=total)


def total_loss(X, Y, B, Z, hp: Hyperparams, task: TaskKind) -> float:
    """Scalar value of the joint loss."""
    return loss_state(X, Y, B, Z, hp, task).total


def loss_and_gradients(X, Y, B, Z, hp: Hyperparams, task: TaskKind):
    """Loss value plus analytic gradients (dB, dZ) in one pass."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    B = np.asarray(B, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    _check_shapes(B, X, Y, task)
    D = pairwise_distances(Z)
    W = softmax_weights(D)
    if task.is_classification:
        L, cache = _classification_losses(B, X, Y, task.n_classes)
    else:
        L, cache = _regression_losses(B, X, Y[:, 0])
    S = (W * L).sum(axis=1)
    total = float(S.sum()) \
        + hp.lambda_z * float((Z * Z).sum()) \
        + hp.lambda_lasso * float(np.abs(B).sum())
    if not np.isfinite(total):
        raise NumericError("total loss is non-finite")
    gB = _data_grad_b(B, X, Y, task, W, cache) + hp.lambda_lasso * np.sign(B)
    gZ = _data_grad_z(Z, D, W, L, S) + 2.0 * hp.lambda_z * Z
    return total, gB, gZ


def loss_gradients(X, Y, B, Z, hp: Hyperparams, task: TaskKind):
    """Analytic gradients of the joint loss with respect to B and Z."""
    _, gB, gZ = loss_and_gradients(X, Y, B, Z, hp, task)
    return gB, gZ


def added_loss_and_gradients(X_all, Y_all, B_old, Z_old, B_new, Z_new,
                             hp: Hyperparams, task: TaskKind):
    """Loss of appended rows against a frozen base, with gradients.

    The value is the appended rows' share of the incremented total loss:
    their softmax-weighted data losses over all items (old and new) plus
    their own embedding and lasso penalties.  The base rows' terms are
    held constant together with their parameters, so a feasible appended
    row can never end up with a larger contribution than the row it
    copies.  Gradients are with respect to the appended (B, Z) only.
    """
    X_all = np.asarray(X_all, dtype=float)
    Y_all = np.asarray(Y_all, dtype=float)
    if Y_all.ndim == 1:
        Y_all = Y_all[:, None]
    B_new = np.asarray(B_new, dtype=float)
    Z_new = np.asarray(Z_new, dtype=float)
    Z_old = np.asarray(Z_old, dtype=float)
    n_new = B_new.shape[0]
    n_old = Z_old.shape[0]
    _check_shapes(B_new, X_all, Y_all, task)
    Z_all = np.vstack([Z_old, Z_new])

    # Distances from each new row to every row (new rows occupy the tail).
    diff_sq = np.einsum("ij,ij->i", Z_new, Z_new)[:, None] \
        + np.einsum("ij,ij->i", Z_all, Z_all)[None, :] \
        - 2.0 * (Z_new @ Z_all.T)
    np.maximum(diff_sq, 0.0, out=diff_sq)
    D = np.sqrt(diff_sq)
    idx = np.arange(n_new)
    D[idx, n_old + idx] = 0.0
    E = np.exp(-D)
    W = E / E.sum(axis=1, keepdims=True)

    if task.is_classification:
        L, cache = _classification_losses(B_new, X_all, Y_all, task.n_classes)
    else:
        L, cache = _regression_losses(B_new, X_all, Y_all[:, 0])
    S = (W * L).sum(axis=1)
    total = float(S.sum()) + hp.lambda_z * float((Z_new * Z_new).sum()) \
        + hp.lambda_lasso * float(np.abs(B_new).sum())
    if not np.isfinite(total):
        raise NumericError("appended-row loss is non-finite")

    gB = _data_grad_b(B_new, X_all, Y_all, task, W, cache) \
        + hp.lambda_lasso * np.sign(B_new)

    # dD coefficients: row u's term reacts to D_uj for every j; distances
    # between two appended rows appear in both of their terms.
    M = W * (S[:, None] - L)
    inv = 1.0 / np.sqrt(D * D + _DIST_GRAD_EPS)
    inv[idx, n_old + idx] = 0.0  # self-distances carry no gradient
    C = M * inv
    C_new = C[:, n_old:]
    gZ = (C.sum(axis=1) + C_new.sum(axis=0))[:, None] * Z_new \
        - C @ Z_all - C_new.T @ Z_new + 2.0 * hp.lambda_z * Z_new
    return total, gB, gZ


def pointwise_losses(b: np.ndarray, X, Y, task: TaskKind) -> np.ndarray:
    """Losses of a single model ``b`` on every data item (length-n vector)."""
    return local_loss_matrix(np.asarray(b, dtype=float)[None, :], X, Y, task)[0]


def uniform_loss_and_grad(b: np.ndarray, X, Y, task: TaskKind,
                          lambda_lasso: float):
    """Unweighted summed loss of one model over all items, with gradient.

    This is the objective of the global reference model: the same per-item
    losses as the main problem but with uniform weights instead of the
    softmax neighbourhood.
    """
    b = np.asarray(b, dtype=float)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    B = b[None, :]
    _check_shapes(B, X, Y, task)
    if task.is_classification:
        L, cache = _classification_losses(B, X, Y, task.n_classes)
    else:
        L, cache = _regression_losses(B, X, Y[:, 0])
    V = np.ones_like(L)
    f = float(L.sum()) + lambda_lasso * float(np.abs(b).sum())
    g = _data_grad_b(B, X, Y, task, V, cache)[0] + lambda_lasso * np.sign(b)
    return f, g
