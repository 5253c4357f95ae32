"""Multi-label losses, the Gain ratio and plug-in mutual information."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidArgumentError, UndefinedGainError


@dataclass(frozen=True)
class MetricReport:
    metric_name: str
    value: float
    n_instances: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InvalidArgumentError(f"{self.metric_name} is not finite")


def _pair(y, y_hat):
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise InvalidArgumentError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    return y, y_hat


def hamming_loss(y, y_hat) -> int:
    """Number of label positions that disagree (not normalized)."""
    y, y_hat = _pair(y, y_hat)
    return int(np.count_nonzero(y != y_hat))


def zero_one_loss(y, y_hat) -> int:
    return int(hamming_loss(y, y_hat) > 0)


def _matrices(Y, Y_hat):
    Y, Y_hat = _pair(Y, Y_hat)
    if Y.ndim == 1:
        Y, Y_hat = Y[None, :], Y_hat[None, :]
    if Y.shape[0] == 0:
        raise InvalidArgumentError("need at least one (y, y_hat) pair")
    return Y, Y_hat


def exact_match(Y, Y_hat) -> float:
    """Subset accuracy: share of rows predicted without a single error."""
    Y, Y_hat = _matrices(Y, Y_hat)
    return float(np.mean(np.all(Y == Y_hat, axis=1)))


def hamming_score(Y, Y_hat) -> float:
    Y, Y_hat = _matrices(Y, Y_hat)
    return float(np.mean(Y == Y_hat))


def report(metric_name: str, Y, Y_hat) -> MetricReport:
    fn = {"exact_match": exact_match, "hamming_score": hamming_score}[metric_name]
    return MetricReport(metric_name, fn(Y, Y_hat), int(np.shape(Y)[0]))


def gain(loss_joint: float, loss_indep: float) -> float:
    """How many times better joint modelling scores than independent models,
    with both losses normalized to [0, 1]."""
    if loss_indep >= 1.0:
        raise UndefinedGainError("gain is undefined when the independent-model loss is 1")
    return (1.0 - loss_joint) / (1.0 - loss_indep)


def _xlogx_ratio(joint, pa, pb):
    with np.errstate(divide="ignore", invalid="ignore"):
        term = joint * np.log(joint / (pa * pb))
    return np.where(joint > 0, term, 0.0)


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) of two binary columns."""
    a, b = _pair(np.asarray(a, dtype=float).ravel(), np.asarray(b, dtype=float).ravel())
    if a.size == 0:
        raise InvalidArgumentError("mutual information needs at least one observation")
    return float(vector_mi(a[:, None], b[:, None]))


def pairwise_mi(A, B) -> np.ndarray:
    """Matrix of plug-in MI between every column of A and every column of B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise InvalidArgumentError(f"row mismatch: {np.shape(A)} vs {np.shape(B)}")
    n = A.shape[0]
    # work in integer counts so empty cells are exactly empty
    n11 = A.T @ B
    na = A.sum(axis=0)[:, None]
    nb = B.sum(axis=0)[None, :]
    cells = [n11, na - n11, nb - n11, n - na - nb + n11]
    margins = [(na, nb), (na, n - nb), (n - na, nb), (n - na, n - nb)]
    mi = sum(_xlogx_ratio(c / n, ma / n, mb / n) for c, (ma, mb) in zip(cells, margins))
    return np.maximum(mi, 0.0)


def vector_mi(Y_source, Y_target) -> float:
    """Mean pairwise MI over all (source column, target column) pairs."""
    return float(np.mean(pairwise_mi(Y_source, Y_target)))
