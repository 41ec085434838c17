"""Fitting: initialization, the escape heuristic, the outer loop, and
out-of-sample addition of new points to a fitted solution.

The optimizer works on the concatenated flattened (B, Z) vector; there are
no alternating block updates.  The outer loop alternates an escape pass
(each item adopts the row whose neighbourhood fits it best) with a full
quasi-Newton minimization, until the post-optimization loss stops
improving.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lbfgs
from .errors import NumericError, ShapeError, SlisemapError
from .model import TaskKind
from .objective import (Hyperparams, added_loss_and_gradients,
                        loss_and_gradients, local_loss_matrix,
                        pairwise_distances, softmax_weights, total_loss)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the fit loop and the inner quasi-Newton solver."""

    max_outer_iters: int = 100
    lbfgs_history: int = 10
    lbfgs_max_iters: int = 500
    rel_tol: float = 1e-6
    seed: int = 42
    escape: bool = True

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.lbfgs_history < 1 \
                or self.lbfgs_max_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")


@dataclass
class Solution:
    """A fitted model: data, local models, embedding and bookkeeping.

    ``X`` is the normalized, intercept-augmented covariate matrix the fit
    ran on; ``Y`` is the response matrix on the training scale (logit scale
    for the binary-logit task).  ``column_names`` and ``normalization``
    describe the raw features so held-out points can be mapped into the
    same basis.
    """

    X: np.ndarray
    Y: np.ndarray
    B: np.ndarray
    Z: np.ndarray
    hyperparams: Hyperparams
    task: TaskKind
    final_loss: float
    outer_iters_used: int
    seed: int
    column_names: list[str]
    normalization_mean: np.ndarray
    normalization_std: np.ndarray
    target_names: list[str] = field(default_factory=lambda: ["y"])
    loss_history: list[float] = field(default_factory=list)
    numeric_warning: bool = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "task": self.task.to_string(),
            "n": self.n,
            "m": len(self.column_names),
            "d": self.hyperparams.d,
            "p": self.Y.shape[1],
            "lambda_z": self.hyperparams.lambda_z,
            "lambda_lasso": self.hyperparams.lambda_lasso,
            "column_names": list(self.column_names),
            "target_names": list(self.target_names),
            "normalization": {
                "mean": self.normalization_mean.tolist(),
                "std": self.normalization_std.tolist(),
            },
            "B": self.B.tolist(),
            "Z": self.Z.tolist(),
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "final_loss": self.final_loss,
            "seed": self.seed,
            "outer_iters_used": self.outer_iters_used,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Solution":
        task = TaskKind.from_string(doc["task"])
        hp = Hyperparams(lambda_z=doc["lambda_z"],
                         lambda_lasso=doc["lambda_lasso"], d=doc["d"])
        sol = cls(
            X=np.asarray(doc["X"], dtype=float),
            Y=np.asarray(doc["Y"], dtype=float),
            B=np.asarray(doc["B"], dtype=float),
            Z=np.asarray(doc["Z"], dtype=float),
            hyperparams=hp,
            task=task,
            final_loss=float(doc["final_loss"]),
            outer_iters_used=int(doc.get("outer_iters_used", 0)),
            seed=int(doc["seed"]),
            column_names=list(doc["column_names"]),
            normalization_mean=np.asarray(doc["normalization"]["mean"], dtype=float),
            normalization_std=np.asarray(doc["normalization"]["std"], dtype=float),
            target_names=list(doc.get("target_names", ["y"])),
        )
        return sol

    @classmethod
    def load(cls, path) -> "Solution":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def pca_scores(X: np.ndarray, d: int) -> np.ndarray:
    """First ``d`` principal-component scores of column-centered ``X``.

    Raw (unscaled) scores from an SVD.  Component signs are fixed so the
    largest-magnitude loading of each component is positive, which makes
    the result reproducible across runs.  When the centered matrix has
    rank below ``d`` the trailing columns are zero-filled with a warning.
    """
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0, keepdims=True)
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    flip = np.sign(Vt[np.arange(Vt.shape[0]), np.abs(Vt).argmax(axis=1)])
    flip[flip == 0] = 1.0
    U = U * flip[None, :]
    tol = s.max(initial=0.0) * max(Xc.shape) * np.finfo(float).eps
    rank = int((s > tol).sum())
    Z = np.zeros((X.shape[0], d))
    use = min(d, rank, s.shape[0])
    Z[:, :use] = U[:, :use] * s[:use]
    if use < d:
        warnings.warn(
            f"requested {d} embedding columns but the data has rank {rank}; "
            "trailing columns initialized to zero")
    return Z


def init(X, Y, hp: Hyperparams, task: TaskKind, seed: int):
    """Starting point: PCA scores for Z, seeded standard normals for B."""
    X = np.asarray(X, dtype=float)
    n, n_cols = X.shape
    rng = np.random.default_rng(seed)
    B0 = rng.standard_normal((n, task.coef_len(n_cols)))
    Z0 = pca_scores(X, hp.d)
    return B0, Z0


def lbfgs_minimize(fun_and_grad, B0, Z0, config: SolverConfig):
    """Minimize a callback over (B, Z) jointly; returns (B, Z, loss).

    ``fun_and_grad(B, Z)`` must return ``(loss, dB, dZ)``.  The two blocks
    are flattened into one parameter vector for the quasi-Newton core.
    """
    B0 = np.asarray(B0, dtype=float)
    Z0 = np.asarray(Z0, dtype=float)
    nb = B0.size

    def unpack(x):
        return x[:nb].reshape(B0.shape), x[nb:].reshape(Z0.shape)

    def fg(x):
        B, Z = unpack(x)
        f, gB, gZ = fun_and_grad(B, Z)
        return f, np.concatenate([gB.ravel(), gZ.ravel()])

    x0 = np.concatenate([B0.ravel(), Z0.ravel()])
    res = lbfgs.minimize(fg, x0, history=config.lbfgs_history,
                         max_iters=config.lbfgs_max_iters,
                         rel_tol=config.rel_tol)
    B, Z = unpack(res.x)
    return B.copy(), Z.copy(), res.fun


def escape(X, Y, B, Z, task: TaskKind):
    """Move every item to the row whose soft neighbourhood fits it best.

    For each item i the candidate score of row k is the neighbourhood
    average, under row k's weights, of all models' losses on item i; every
    item simultaneously adopts (B, Z) of its argmin row, read from the
    original matrices.  Ties go to the smallest row index.
    """
    B = np.asarray(B, dtype=float)
    Z = np.asarray(Z, dtype=float)
    W = softmax_weights(pairwise_distances(Z))
    L = local_loss_matrix(B, X, Y, task)
    scores = W @ L  # scores[k, i]: weighted loss of row k's neighbourhood on item i
    ks = np.argmin(scores, axis=0)
    return B[ks].copy(), Z[ks].copy()


def fit(X, Y, hp: Hyperparams, task: TaskKind,
        config: SolverConfig = SolverConfig(), *,
        column_names=None, normalization=None, target_names=None) -> Solution:
    """Run the full pipeline: init, minimize, escape/minimize until the
    loss stops improving, and return the best state ever observed.

    ``column_names`` and ``normalization`` (a ``(mean, std)`` pair) are
    carried into the Solution for serialization; identity defaults are used
    when fitting plain matrices.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, n_cols = X.shape
    if n < 2:
        raise SlisemapError(f"need at least 2 data items to embed, got {n}")
    if column_names is None:
        column_names = [f"x{i + 1}" for i in range(n_cols - 1)]
    if target_names is None:
        target_names = [f"y{i + 1}" for i in range(Y.shape[1])] \
            if Y.shape[1] > 1 else ["y"]
    if normalization is None:
        mean = np.zeros(n_cols - 1)
        std = np.ones(n_cols - 1)
    else:
        mean, std = (np.asarray(v, dtype=float) for v in normalization)

    B, Z = init(X, Y, hp, task, config.seed)
    f0 = total_loss(X, Y, B, Z, hp, task)  # raises NumericError if not finite

    # Large lambda_z makes the embedding block of the Hessian (about
    # 2*lambda_z) vastly stiffer than the model block; optimizing a
    # rescaled embedding variable keeps the joint problem well conditioned
    # without changing the loss or its minimizer.
    scale = max(1.0, np.sqrt(2.0 * hp.lambda_z))

    def closure(Bc, V):
        f, gB, gZ = loss_and_gradients(X, Y, Bc, V / scale, hp, task)
        return f, gB, gZ / scale

    def minimize_from(Bc, Zc):
        Bc, V, f = lbfgs_minimize(closure, Bc, Zc * scale, config)
        return Bc, V / scale, f

    numeric_warning = False
    try:
        B, Z, f = minimize_from(B, Z)
    except NumericError:
        warnings.warn("numeric failure in the initial minimization; "
                      "returning the unoptimized starting point")
        f = f0
        numeric_warning = True
    best_B, best_Z, best_f = B, Z, f
    history = [best_f]
    outer = 1

    # An escape pass routinely makes the loss temporarily worse before a
    # later round lands in a better basin, so a non-improving round must
    # not end the fit on its own.  Rounds that sit at the incumbent loss
    # without improving count as convergence (three in a row stop the
    # loop); rounds exploring clearly worse basins get a longer leash.
    plateau = 0
    no_gain = 0
    while config.escape and outer - 1 < config.max_outer_iters \
            and not numeric_warning:
        B_e, Z_e = escape(X, Y, B, Z, task)
        try:
            B, Z, f = minimize_from(B_e, Z_e)
        except NumericError:
            warnings.warn("numeric failure mid-fit; returning the best "
                          "state found so far")
            numeric_warning = True
            break
        outer += 1
        improvement = best_f - f
        if f < best_f:
            best_B, best_Z, best_f = B, Z, f
        history.append(best_f)
        if improvement > config.rel_tol * max(abs(best_f), abs(f), 1.0):
            plateau = 0
            no_gain = 0
        else:
            no_gain += 1
            if f <= best_f + 0.01 * max(abs(best_f), 1.0):
                plateau += 1
            if plateau >= 3 or no_gain >= 10:
                break

    return Solution(
        X=X, Y=Y, B=best_B, Z=best_Z, hyperparams=hp, task=task,
        final_loss=best_f, outer_iters_used=outer, seed=config.seed,
        column_names=list(column_names),
        normalization_mean=np.asarray(mean, dtype=float),
        normalization_std=np.asarray(std, dtype=float),
        target_names=list(target_names),
        loss_history=history, numeric_warning=numeric_warning)


def row_contributions(X, Y, B, Z, hp: Hyperparams, task: TaskKind) -> np.ndarray:
    """Per-row share of the total loss: each row's weighted data loss plus
    its own embedding and lasso penalties."""
    D = pairwise_distances(np.asarray(Z, dtype=float))
    W = softmax_weights(D)
    L = local_loss_matrix(B, X, Y, task)
    B = np.asarray(B, dtype=float)
    Z = np.asarray(Z, dtype=float)
    return (W * L).sum(axis=1) + hp.lambda_z * (Z * Z).sum(axis=1) \
        + hp.lambda_lasso * np.abs(B).sum(axis=1)


def _add_batch(sol: Solution, X_new, Y_new, config: SolverConfig):
    """Optimize the new rows jointly against the frozen old solution."""
    n_old = sol.n
    Xc = np.vstack([sol.X, X_new])
    Yc = np.vstack([sol.Y, Y_new])
    hp, task = sol.hyperparams, sol.task

    # Escape against the old solution: candidate rows are old rows only.
    W_old = softmax_weights(pairwise_distances(sol.Z))
    L_cross = local_loss_matrix(sol.B, X_new, Y_new, task)  # old models x new items
    ks = np.argmin(W_old @ L_cross, axis=0)
    B0 = sol.B[ks].copy()
    Z0 = sol.Z[ks].copy()

    scale = max(1.0, np.sqrt(2.0 * hp.lambda_z))

    def closure(Bn, V):
        f, gB, gZ = added_loss_and_gradients(Xc, Yc, sol.B, sol.Z, Bn,
                                             V / scale, hp, task)
        return f, gB, gZ / scale

    B_new, V_new, _ = lbfgs_minimize(closure, B0, Z0 * scale, config)
    Z_new = V_new / scale
    Bc = np.vstack([sol.B, B_new])
    Zc = np.vstack([sol.Z, Z_new])
    contrib = row_contributions(Xc, Yc, Bc, Zc, hp, task)[n_old:]
    return B_new, Z_new, contrib


def add_new(sol: Solution, X_new, Y_new,
            config: SolverConfig = SolverConfig(), *,
            one_by_one: bool = False):
    """Add held-out points to a fitted solution without refitting it.

    Returns ``(B_new, Z_new, losses)`` where ``losses[i]`` is the loss
    contribution of new point i in the incremented problem.  With
    ``one_by_one`` each point is added independently against the original
    solution; otherwise the whole batch is optimized jointly.  The stored
    solution is never mutated.
    """
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    Y_new = np.asarray(Y_new, dtype=float)
    if Y_new.ndim == 1:
        Y_new = Y_new[:, None]
    if X_new.shape[1] != sol.X.shape[1]:
        raise ShapeError("new covariates do not match the solution",
                         expected=sol.X.shape[1], got=X_new.shape[1])
    if Y_new.shape != (X_new.shape[0], sol.Y.shape[1]):
        raise ShapeError("new responses do not match the solution",
                         expected=(X_new.shape[0], sol.Y.shape[1]),
                         got=Y_new.shape)
    if not one_by_one or X_new.shape[0] <= 1:
        return _add_batch(sol, X_new, Y_new, config)
    parts = [_add_batch(sol, X_new[i:i + 1], Y_new[i:i + 1], config)
             for i in range(X_new.shape[0])]
    B_new = np.vstack([p[0] for p in parts])
    Z_new = np.vstack([p[1] for p in parts])
    losses = np.concatenate([p[2] for p in parts])
    return B_new, Z_new, losses
