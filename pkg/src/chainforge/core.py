"""Shared data model: datasets, seeded random streams, the Predictor
contract and versioned model artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

FORMAT_VERSION = 1
CLASSIFICATION = "classification"
REGRESSION = "regression"


class ChainforgeError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ChainforgeError, ValueError):
    pass


class UnsupportedFormatError(ChainforgeError):
    pass


class CorruptArtifactError(ChainforgeError):
    pass


class NumericFailureError(ChainforgeError, ArithmeticError):
    pass


class UndefinedGainError(ChainforgeError, ZeroDivisionError):
    pass


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomSource:
    """A named, reproducible random stream.

    The stream is keyed by ``(seed, stream_label)`` and backed by the
    counter-based Philox generator, so the same pair yields the same
    sequence on every platform regardless of how work is scheduled.
    Child streams are derived by extending the label path.
    """

    seed: int
    stream_label: str = ""

    def child(self, label: Any) -> "RandomSource":
        path = f"{self.stream_label}/{label}" if self.stream_label else str(label)
        return RandomSource(self.seed, path)

    def generator(self) -> np.random.Generator:
        """Return a fresh generator positioned at the start of the stream."""
        digest = hashlib.sha256(
            f"{self.seed & 0xFFFFFFFFFFFFFFFF}:{self.stream_label}".encode()
        ).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    label_names: tuple[str, ...] = ()
    task_kind: str = CLASSIFICATION

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        Y = np.array(self.labels, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2:
            raise InvalidArgumentError("features and labels must be matrices")
        n, d = X.shape
        if n < 1 or d < 1 or Y.shape[1] < 1:
            raise InvalidArgumentError(f"empty dataset: features {X.shape}, labels {Y.shape}")
        if Y.shape[0] != n:
            raise InvalidArgumentError(
                f"row count mismatch: {n} feature rows vs {Y.shape[0]} label rows"
            )
        if not np.all(np.isfinite(X)):
            raise InvalidArgumentError("features contain non-finite values")
        if self.task_kind not in (CLASSIFICATION, REGRESSION):
            raise InvalidArgumentError(f"unknown task kind {self.task_kind!r}")
        if self.task_kind == CLASSIFICATION and not np.all((Y == 0) | (Y == 1)):
            raise InvalidArgumentError("classification labels must be exactly 0 or 1")
        X.flags.writeable = False
        Y.flags.writeable = False
        fnames = tuple(self.feature_names) or tuple(f"x{i + 1}" for i in range(d))
        lnames = tuple(self.label_names) or tuple(f"y{j + 1}" for j in range(Y.shape[1]))
        if len(fnames) != d or len(lnames) != Y.shape[1]:
            raise InvalidArgumentError("name lists do not match matrix widths")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", Y)
        object.__setattr__(self, "feature_names", fnames)
        object.__setattr__(self, "label_names", lnames)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return self.labels.shape[1]

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(
            self.features[rows], self.labels[rows],
            self.feature_names, self.label_names, self.task_kind,
        )

    def with_features(self, features, feature_names=()) -> "LabeledDataset":
        return LabeledDataset(features, self.labels, tuple(feature_names), self.label_names, self.task_kind)

    def with_labels(self, labels, label_names=()) -> "LabeledDataset":
        return LabeledDataset(self.features, labels, self.feature_names, tuple(label_names), self.task_kind)


def split_train_test(data: LabeledDataset, train_fraction: float, rng: RandomSource):
    """Shuffle rows and cut them into a train part of ``floor(fraction * n)``
    rows and a test part holding the rest."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = data.n
    n_train = math.floor(train_fraction * n)
    if n_train < 1 or n_train >= n:
        raise InvalidArgumentError(
            f"train_fraction={train_fraction} leaves an empty partition for n={n}"
        )
    perm = rng.generator().permutation(n)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


def kfold_indices(n: int, k: int, rng: RandomSource) -> list[np.ndarray]:
    if k < 2 or k > n:
        raise InvalidArgumentError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = rng.generator().permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def bootstrap_indices(n: int, rng: RandomSource) -> np.ndarray:
    return rng.generator().integers(0, n, size=n)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def read_csv_dataset(path, labels_last: int, task_kind: str = CLASSIFICATION) -> LabeledDataset:
    """Load a dataset whose last ``labels_last`` columns are labels."""
    path = Path(path)
    if labels_last < 1:
        raise InvalidArgumentError("labels_last must be >= 1")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise OSError(f"{path}: empty file") from None
        if len(header) <= labels_last:
            raise OSError(f"{path}:1: {len(header)} columns cannot hold {labels_last} labels plus features")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise OSError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise OSError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise OSError(f"{path}: no data rows")
    table = np.array(rows)
    d = table.shape[1] - labels_last
    try:
        return LabeledDataset(table[:, :d], table[:, d:], tuple(header[:d]), tuple(header[d:]), task_kind)
    except InvalidArgumentError as exc:
        raise OSError(f"{path}: {exc}") from None


def write_csv_dataset(data: LabeledDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.feature_names) + list(data.label_names))
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [_fmt_label(v) for v in y])


def _fmt_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# ---------------------------------------------------------------------------
# Predictor contract
# ---------------------------------------------------------------------------


class Predictor:
    """A trained model seen from the outside.

    Consumers may rely on ``input_dim``, ``output_dim`` and ``predict`` only.
    ``predict`` accepts one input vector or a matrix with one row per
    instance and answers in the same shape convention. Classification
    models also expose ``predict_scores`` (values in [0, 1]); their hard
    output is ``1{score >= 0.5}``.
    """

    kind: str = ""
    input_dim: int
    output_dim: int
    task_kind: str = CLASSIFICATION

    def predict(self, x):
        X, single = self._as_batch(x)
        out = self._predict_batch(X)
        return out[0] if single else out

    def predict_scores(self, x):
        X, single = self._as_batch(x)
        out = self._scores_batch(X)
        return out[0] if single else out

    def _predict_batch(self, X: np.ndarray) -> np.ndarray:
        scores = self._scores_batch(X)
        if self.task_kind == CLASSIFICATION:
            return (scores >= 0.5).astype(float)
        return scores

    def _scores_batch(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _as_batch(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise InvalidArgumentError(
                f"{type(self).__name__} expects inputs of length {self.input_dim}, got shape {np.shape(x)}"
            )
        return X, single

    def to_payload(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} cannot be serialized")


class BlackBox(Predictor):
    """Opaque handle on a source model.

    Only the dimensions and ``predict`` are reachable; the wrapped model
    is kept behind a name-mangled attribute and its artifact, when known,
    is carried through unopened so composite models can be persisted.
    """

    kind = "blackbox"

    def __init__(self, model: Predictor, artifact: "ModelArtifact | None" = None):
        self.__model = model
        self.__artifact = artifact
        self.input_dim = model.input_dim
        self.output_dim = model.output_dim
        self.task_kind = model.task_kind

    def predict(self, x):
        return self.__model.predict(x)

    def predict_scores(self, x):
        raise InvalidArgumentError("black-box source models expose hard predictions only")

    def artifact(self) -> "ModelArtifact":
        if self.__artifact is None:
            return save_model(self.__model)
        return self.__artifact


class ConstantPredictor(Predictor):
    kind = "constant"

    def __init__(self, input_dim: int, values, task_kind: str = CLASSIFICATION):
        self.values = np.asarray(values, dtype=float).ravel()
        self.input_dim = int(input_dim)
        self.output_dim = self.values.size
        self.task_kind = task_kind

    def _scores_batch(self, X):
        return np.tile(self.values, (X.shape[0], 1))

    def to_payload(self):
        return {"values": self.values.tolist(), "task_kind": self.task_kind}

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        return cls(input_dim, p["values"], p["task_kind"])


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelArtifact:
    kind: str
    input_dim: int
    output_dim: int
    payload: Any
    format_version: int = FORMAT_VERSION

    def as_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "kind": self.kind,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, obj) -> "ModelArtifact":
        try:
            return cls(
                kind=obj["kind"],
                input_dim=int(obj["input_dim"]),
                output_dim=int(obj["output_dim"]),
                payload=obj["payload"],
                format_version=int(obj["format_version"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptArtifactError(f"malformed artifact: {exc}") from None

    def dumps(self) -> str:
        return json.dumps(self.as_dict(), allow_nan=False)

    @classmethod
    def loads(cls, text: str) -> "ModelArtifact":
        try:
            obj = json.loads(text)
        except ValueError as exc:
            raise CorruptArtifactError(f"artifact is not valid JSON: {exc}") from None
        return cls.from_dict(obj)


def nested_save(p: Predictor) -> dict:
    return save_model(p).as_dict()


def nested_load(obj) -> Predictor:
    return load_model(ModelArtifact.from_dict(obj))


_LOADERS: dict[str, Callable[[Any, int, int], Predictor]] = {}


def register_kind(kind: str, loader: Callable[[Any, int, int], Predictor]) -> None:
    _LOADERS[kind] = loader


register_kind("constant", ConstantPredictor.from_payload)


def save_model(p: Predictor) -> ModelArtifact:
    if isinstance(p, BlackBox):
        return p.artifact()
    if p.kind not in _LOADERS:
        raise UnsupportedFormatError(f"model kind {p.kind!r} is not serializable")
    return ModelArtifact(p.kind, int(p.input_dim), int(p.output_dim), p.to_payload())


def load_model(a: ModelArtifact) -> Predictor:
    if a.format_version != FORMAT_VERSION:
        raise UnsupportedFormatError(f"unsupported artifact format_version {a.format_version}")
    if a.kind not in _LOADERS:
        raise UnsupportedFormatError(f"unknown artifact kind {a.kind!r}")
    if a.input_dim < 1 or a.output_dim < 1:
        raise CorruptArtifactError("artifact dimensions must be positive")
    try:
        model = _LOADERS[a.kind](a.payload, a.input_dim, a.output_dim)
    except CorruptArtifactError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CorruptArtifactError(f"bad {a.kind} payload: {exc}") from None
    if model.input_dim != a.input_dim or model.output_dim != a.output_dim:
        raise CorruptArtifactError(
            f"{a.kind} payload has dims ({model.input_dim}, {model.output_dim}), "
            f"header says ({a.input_dim}, {a.output_dim})"
        )
    return model


def write_model(p: Predictor, path) -> ModelArtifact:
    art = save_model(p)
    Path(path).write_text(art.dumps(), encoding="utf-8")
    return art


def read_model(path) -> tuple[Predictor, ModelArtifact]:
    art = ModelArtifact.loads(Path(path).read_text(encoding="utf-8"))
    return load_model(art), art
