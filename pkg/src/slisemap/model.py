"""White-box local model families and their pointwise losses.

Two model families are supported: linear regression with quadratic loss,
and multinomial logistic regression (last class is the reference) with
squared Hellinger loss.  Binary classification can alternatively be run
through a logit transform of the positive-class probability, after which
it is plain regression on the logit scale.

All functions here are pure and operate on single vectors; the vectorized
whole-matrix versions used during optimization live in
:mod:`slisemap.objective`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ShapeError

# Probabilities are clamped to [LOGIT_EPS, 1 - LOGIT_EPS] before the logit
# transform; black boxes routinely emit exact 0/1 and the transform must
# stay finite.
LOGIT_EPS = 1e-6

REGRESSION = "regression"
CLASSIFICATION = "classification"
BINARY_LOGIT = "binary-logit"


@dataclass(frozen=True)
class TaskKind:
    """What kind of responses the local models fit.

    ``kind`` is one of ``"regression"``, ``"classification"`` or
    ``"binary-logit"``; ``n_classes`` is only meaningful for
    classification and must be >= 2 there.
    """

    kind: str
    n_classes: int = 0

    def __post_init__(self):
        if self.kind not in (REGRESSION, CLASSIFICATION, BINARY_LOGIT):
            raise DataError(f"unknown task kind {self.kind!r}")
        if self.kind == CLASSIFICATION and self.n_classes < 2:
            raise DataError(
                f"classification needs at least 2 classes, got {self.n_classes}"
            )
        if self.kind != CLASSIFICATION and self.n_classes != 0:
            raise DataError(f"{self.kind} does not take a class count")

    @classmethod
    def regression(cls) -> "TaskKind":
        return cls(REGRESSION)

    @classmethod
    def classification(cls, n_classes: int) -> "TaskKind":
        return cls(CLASSIFICATION, n_classes)

    @classmethod
    def binary_logit(cls) -> "TaskKind":
        return cls(BINARY_LOGIT)

    @property
    def is_classification(self) -> bool:
        return self.kind == CLASSIFICATION

    def coef_len(self, n_cols: int) -> int:
        """Length of one local-model coefficient row for ``n_cols`` covariate
        columns (intercept included)."""
        if self.is_classification:
            return (self.n_classes - 1) * n_cols
        return n_cols

    def response_dim(self) -> int:
        """Number of response columns the task trains on."""
        return self.n_classes if self.is_classification else 1

    def to_string(self) -> str:
        if self.is_classification:
            return f"{CLASSIFICATION}:{self.n_classes}"
        return self.kind

    @classmethod
    def from_string(cls, s: str) -> "TaskKind":
        if s.startswith(CLASSIFICATION + ":"):
            return cls.classification(int(s.split(":", 1)[1]))
        if s == CLASSIFICATION:
            raise DataError("classification task string must carry a class count")
        return cls(s)


def linear_predict(x: np.ndarray, b: np.ndarray) -> float:
    """Prediction of the linear model ``b`` on covariate vector ``x``.

    ``x`` is expected to already carry its intercept entry.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.shape != b.shape or x.ndim != 1:
        raise ShapeError("covariate and coefficient lengths differ",
                         expected=x.shape, got=b.shape)
    return float(x @ b)


def quadratic_loss(y_hat: float, y: float) -> float:
    """Squared error between a prediction and a response."""
    if not (np.isfinite(y_hat) and np.isfinite(y)):
        raise NumericError(f"quadratic_loss got non-finite input ({y_hat}, {y})")
    d = float(y_hat) - float(y)
    return d * d


def multinomial_predict(x: np.ndarray, b: np.ndarray, n_classes: int) -> np.ndarray:
    """Class probabilities of the multinomial logistic model ``b`` at ``x``.

    ``b`` concatenates one coefficient block of ``len(x)`` per non-reference
    class; the last class is the reference with an implicit zero logit.  The
    maximum logit is subtracted before exponentiation so large coefficients
    cannot overflow.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    m = x.shape[0]
    if b.shape != ((n_classes - 1) * m,):
        raise ShapeError("coefficient length does not match class count",
                         expected=(n_classes - 1) * m, got=b.shape[0])
    logits = np.concatenate([b.reshape(n_classes - 1, m) @ x, [0.0]])
    logits -= logits.max()
    e = np.exp(logits)
    return e / e.sum()


def hellinger_sq(p: np.ndarray, q: np.ndarray) -> float:
    """Squared Hellinger distance between two discrete distributions.

    Symmetric, bounded in [0, 1], and tolerant of exact-zero components.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeError("distributions have different lengths",
                         expected=p.shape, got=q.shape)
    if (p < 0).any() or (q < 0).any():
        raise DataError("hellinger_sq requires nonnegative components")
    for name, v in (("first", p), ("second", q)):
        if abs(v.sum() - 1.0) > 1e-9:
            raise DataError(
                f"{name} argument of hellinger_sq is not a probability "
                f"vector (sum {v.sum()!r})"
            )
    return float(min(1.0, max(0.0, 1.0 - np.sqrt(p * q).sum())))


def logit_transform(y1):
    """Log-odds of a probability (scalar or array), clamped away from 0/1.

    Inputs outside [0, 1] are rejected; exact 0/1 are clamped to
    ``LOGIT_EPS`` / ``1 - LOGIT_EPS`` so downstream regression stays finite.
    """
    y = np.asarray(y1, dtype=float)
    if (y < 0).any() or (y > 1).any():
        bad = y[(y < 0) | (y > 1)].flat[0]
        raise DataError(f"logit_transform input {bad!r} outside [0, 1]")
    y = np.clip(y, LOGIT_EPS, 1.0 - LOGIT_EPS)
    out = np.log(y / (1.0 - y))
    return float(out) if np.isscalar(y1) or np.ndim(y1) == 0 else out
