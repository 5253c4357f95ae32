"""Maximum-likelihood and James-Stein estimates of a mean vector from a
bundle of repeated predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidArgumentError


@dataclass(frozen=True)
class SampleBundle:
    samples: np.ndarray  # (n, m): one prediction vector per row

    def __post_init__(self):
        S = np.array(self.samples, dtype=float)
        if S.ndim == 1:
            S = S[None, :]
        if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
            raise InvalidArgumentError("a bundle needs n >= 1 vectors of length m >= 1")
        object.__setattr__(self, "samples", S)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def m(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class JsEstimate:
    shrink_factor: float
    estimate: np.ndarray
    mle: np.ndarray
    variance_estimate: float


def mle_mean(bundle: SampleBundle) -> np.ndarray:
    return bundle.samples.mean(axis=0)


def pooled_variance(bundle: SampleBundle) -> float:
    """Unbiased variance pooled over dimensions; 0 for a single sample."""
    if bundle.n == 1:
        return 0.0
    resid = bundle.samples - bundle.samples.mean(axis=0)
    return float(np.sum(resid * resid) / (bundle.m * (bundle.n - 1)))


def shrink_factor(mle: np.ndarray, variance: float, n: int) -> float:
    """Positive-part James-Stein factor ``clip(1 - ((m-2) var/n) / |mle|^2, 0, 1)``."""
    m = mle.size
    norm2 = float(mle @ mle)
    if norm2 == 0.0:
        return 0.0
    return float(np.clip(1.0 - ((m - 2) * variance / n) / norm2, 0.0, 1.0))


def james_stein(bundle: SampleBundle, variance: float | None = None) -> JsEstimate:
    """Shrink the bundle mean toward zero.

    ``variance`` overrides the pooled estimate; this is how a single
    prediction (n = 1) is shrunk with a noise level measured elsewhere.
    """
    ybar = mle_mean(bundle)
    var = pooled_variance(bundle) if variance is None else float(variance)
    if var < 0:
        raise InvalidArgumentError("variance must be non-negative")
    lam = shrink_factor(ybar, var, bundle.n)
    return JsEstimate(lam, lam * ybar, ybar, var)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def js_vs_ls_error(true_mean, bundle: SampleBundle, loss: str = "mse", variance: float | None = None):
    """Return ``(E_LS, E_JS)``: the loss of the plain mean and of its
    James-Stein shrinkage against the true mean."""
    if loss != "mse":
        raise InvalidArgumentError(f"unsupported loss {loss!r}")
    true_mean = np.asarray(true_mean, dtype=float)
    if true_mean.shape != (bundle.m,):
        raise InvalidArgumentError(f"true mean has length {true_mean.size}, bundle has m={bundle.m}")
    js = james_stein(bundle, variance)
    return mse(true_mean, js.mle), mse(true_mean, js.estimate)
