"""Synthetic data: logical XOR/AND toys and independently generated
multi-output concepts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CLASSIFICATION, REGRESSION, InvalidArgumentError, LabeledDataset, RandomSource

CORNERS = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])

CONCEPTS = {
    "xor": lambda c: np.logical_xor(c[:, 0], c[:, 1]).astype(float),
    "and": lambda c: np.logical_and(c[:, 0], c[:, 1]).astype(float),
}


@dataclass(frozen=True)
class ToyConfig:
    concept: str
    n: int
    input_noise_sd: float = 0.05
    rng: RandomSource = field(default_factory=lambda: RandomSource(0))
    corner_probs: tuple[float, float, float, float] | None = None


def truth_table(concept: str) -> np.ndarray:
    return CONCEPTS[concept.lower()](CORNERS)


def _corner_counts(n: int, probs, gen) -> np.ndarray:
    # largest-remainder rounding; ties among remainders broken at random
    p = np.full(4, 0.25) if probs is None else np.asarray(probs, dtype=float)
    if p.shape != (4,) or np.any(p < 0) or p.sum() <= 0:
        raise InvalidArgumentError("corner_probs must be four non-negative weights")
    exact = n * p / p.sum()
    counts = np.floor(exact).astype(int)
    short = n - counts.sum()
    remainder = exact - counts + gen.uniform(0, 1e-9, size=4)
    counts[np.argsort(-remainder)[:short]] += 1
    return counts


def gen_toy(cfg: ToyConfig) -> LabeledDataset:
    """Jittered corners of the unit square labelled by XOR or AND of the
    un-jittered corner."""
    concept = cfg.concept.lower()
    if concept not in CONCEPTS:
        raise InvalidArgumentError(f"unknown concept {cfg.concept!r}")
    if cfg.n < 4:
        raise InvalidArgumentError("toy datasets need n >= 4")
    if cfg.input_noise_sd < 0:
        raise InvalidArgumentError("input_noise_sd must be >= 0")
    gen = cfg.rng.generator()
    counts = _corner_counts(cfg.n, cfg.corner_probs, gen)
    corner_idx = gen.permutation(np.repeat(np.arange(4), counts))
    corners = CORNERS[corner_idx]
    features = corners + gen.normal(0.0, cfg.input_noise_sd, size=corners.shape) if cfg.input_noise_sd else corners.copy()
    labels = CONCEPTS[concept](corners)
    return LabeledDataset(features, labels[:, None], ("x1", "x2"), ("y",), CLASSIFICATION)


@dataclass(frozen=True)
class IndependentConceptConfig:
    n: int
    d: int
    m: int
    noise_sd: float = 1.0
    task_kind: str = REGRESSION
    rng: RandomSource = field(default_factory=lambda: RandomSource(0))


def concept_weights(cfg: IndependentConceptConfig) -> np.ndarray:
    """The (m, d) weight matrix; row j comes from target j's own stream."""
    return np.stack([cfg.rng.child(f"target-{j}/w").generator().standard_normal(cfg.d) for j in range(cfg.m)])


def gen_independent_concepts(cfg: IndependentConceptConfig) -> LabeledDataset:
    if cfg.n < 2 or cfg.d < 1 or cfg.m < 1:
        raise InvalidArgumentError("need n >= 2, d >= 1, m >= 1")
    if cfg.task_kind not in (REGRESSION, CLASSIFICATION):
        raise InvalidArgumentError(f"unknown task kind {cfg.task_kind!r}")
    X = cfg.rng.child("x").generator().standard_normal((cfg.n, cfg.d))
    W = concept_weights(cfg)
    cols = []
    for j in range(cfg.m):
        noise = cfg.rng.child(f"target-{j}/noise").generator().normal(0.0, cfg.noise_sd, cfg.n) if cfg.noise_sd else 0.0
        signal = X @ W[j] + noise
        cols.append((signal > 0).astype(float) if cfg.task_kind == CLASSIFICATION else signal)
    return LabeledDataset(X, np.column_stack(cols), task_kind=cfg.task_kind)
