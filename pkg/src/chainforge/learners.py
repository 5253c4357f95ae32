"""Base learners trained from scratch: linear models and perceptrons fitted
by per-example SGD, and per-label random forests of Gini CART trees."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    CLASSIFICATION,
    REGRESSION,
    CorruptArtifactError,
    InvalidArgumentError,
    LabeledDataset,
    NumericFailureError,
    Predictor,
    RandomSource,
    bootstrap_indices,
    register_kind,
)

LOGISTIC = "logistic"
IDENTITY = "identity"

# hidden layer widths for architecture v
ARCHITECTURES = {0: (), 1: (400,), 2: (100, 100)}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    l2_penalty: float = 0.05
    iterations_per_step: int = 100
    rng: RandomSource = field(default_factory=lambda: RandomSource(0))
    power_t: float = 0.25  # inverse-scaling decay exponent

    def __post_init__(self):
        if self.iterations_per_step < 1:
            raise InvalidArgumentError("iterations_per_step must be >= 1")
        if self.learning_rate < 0 or self.l2_penalty < 0:
            raise InvalidArgumentError("learning_rate and l2_penalty must be non-negative")

    def with_rng(self, rng: RandomSource) -> "TrainConfig":
        return replace(self, rng=rng)


def sigmoid(z):
    # split form avoids overflow warnings for large |z|
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Network(Predictor):
    """Feed-forward network: rectifier hidden layers and a linear or
    logistic output layer. Weight matrices are stored (fan_out, fan_in)."""

    kind = "mlp"

    def __init__(self, layers, link: str = LOGISTIC, n_updates: int = 0):
        if link not in (LOGISTIC, IDENTITY):
            raise InvalidArgumentError(f"unknown link {link!r}")
        self.layers = [(np.array(W, dtype=float), np.array(b, dtype=float)) for W, b in layers]
        if not self.layers:
            raise InvalidArgumentError("network needs at least an output layer")
        for (W, b), (W_next, _) in zip(self.layers, self.layers[1:]):
            if W_next.shape[1] != W.shape[0]:
                raise InvalidArgumentError("layer widths do not chain")
        for W, b in self.layers:
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise InvalidArgumentError("bias length must equal layer width")
        self.link = link
        self.n_updates = int(n_updates)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def task_kind(self) -> str:
        return CLASSIFICATION if self.link == LOGISTIC else REGRESSION

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(W.shape[0] for W, _ in self.layers[:-1])

    def hidden(self, X: np.ndarray) -> np.ndarray:
        Z = X
        for W, b in self.layers[:-1]:
            Z = np.maximum(Z @ W.T + b, 0.0)
        return Z

    def decision(self, X: np.ndarray) -> np.ndarray:
        W, b = self.layers[-1]
        return self.hidden(X) @ W.T + b

    def _scores_batch(self, X):
        out = self.decision(X)
        return sigmoid(out) if self.link == LOGISTIC else out

    def copy(self) -> "Network":
        return type(self)._rebuild([(W.copy(), b.copy()) for W, b in self.layers], self.link, self.n_updates)

    @classmethod
    def _rebuild(cls, layers, link, n_updates):
        return Network(layers, link, n_updates)

    def to_payload(self):
        return {
            "link": self.link,
            "n_updates": self.n_updates,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
        }

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        layers = []
        for layer in p["layers"]:
            W = np.asarray(layer["W"], dtype=float)
            b = np.asarray(layer["b"], dtype=float)
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise CorruptArtifactError("layer weight/bias shapes disagree")
            layers.append((W, b))
        try:
            return cls._rebuild(layers, p["link"], p.get("n_updates", 0))
        except InvalidArgumentError as exc:
            raise CorruptArtifactError(str(exc)) from None


class LinearModel(Network):
    """score(x) = link(W x + b)."""

    kind = "linear"

    def __init__(self, W, b, link: str = LOGISTIC, n_updates: int = 0):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        super().__init__([(W, np.asarray(b, dtype=float).ravel())], link, n_updates)

    @property
    def W(self) -> np.ndarray:
        return self.layers[0][0]

    @property
    def b(self) -> np.ndarray:
        return self.layers[0][1]

    @classmethod
    def _rebuild(cls, layers, link, n_updates):
        if len(layers) != 1:
            raise InvalidArgumentError("a linear model has exactly one layer")
        (W, b), = layers
        return LinearModel(W, b, link, n_updates)


class MlpModel(Network):
    kind = "mlp"

    @classmethod
    def _rebuild(cls, layers, link, n_updates):
        return MlpModel(layers, link, n_updates)


register_kind("linear", LinearModel.from_payload)
register_kind("mlp", MlpModel.from_payload)


def _init_layers(sizes, rng: RandomSource):
    gen = rng.generator()
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = gen.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in))
        layers.append((W, np.zeros(fan_out)))
    return layers


def init_linear(d: int, m: int, link: str, rng: RandomSource) -> LinearModel:
    (W, b), = _init_layers((d, m), rng)
    return LinearModel(W, b, link)


def init_mlp(d: int, m: int, arch: int, link: str, rng: RandomSource) -> MlpModel:
    if arch not in ARCHITECTURES:
        raise InvalidArgumentError(f"architecture v must be one of {sorted(ARCHITECTURES)}")
    return MlpModel(_init_layers((d, *ARCHITECTURES[arch], m), rng), link)


# ---------------------------------------------------------------------------
# Loss, gradients, SGD
# ---------------------------------------------------------------------------


def example_loss(model: Network, x, y, l2: float) -> float:
    """Per-example objective: summed per-output loss plus (l2/2)*||weights||^2."""
    o = model.decision(np.asarray(x, dtype=float)[None, :])[0]
    y = np.asarray(y, dtype=float)
    if model.link == LOGISTIC:
        data = float(np.sum(np.logaddexp(0.0, o) - y * o))
    else:
        data = float(0.5 * np.sum((o - y) ** 2))
    return data + 0.5 * l2 * sum(float(np.sum(W * W)) for W, _ in model.layers)


def example_gradients(model: Network, x, y, l2: float, trainable=None):
    """Backpropagated gradients of ``example_loss`` for every layer.

    ``trainable`` restricts the computation to the given layer indices
    (other entries come back as None).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n_layers = len(model.layers)
    trainable = range(n_layers) if trainable is None else trainable
    lowest = min(trainable)
    acts = [x]
    z = x
    for W, b in model.layers[:-1]:
        z = np.maximum(W @ z + b, 0.0)
        acts.append(z)
    W_out, b_out = model.layers[-1]
    o = W_out @ z + b_out
    # tanh form of the logistic function: exact and overflow-free
    delta = (0.5 + 0.5 * np.tanh(0.5 * o) if model.link == LOGISTIC else o) - y
    grads = [None] * n_layers
    for i in range(n_layers - 1, lowest - 1, -1):
        W, _ = model.layers[i]
        if i in trainable:
            grads[i] = (np.outer(delta, acts[i]) + l2 * W, delta)
        if i > lowest:
            delta = (W.T @ delta) * (acts[i] > 0)
    return grads


def _example_order(n: int, count: int, rng: RandomSource) -> np.ndarray:
    gen = rng.generator()
    reps = -(-count // n)
    return np.concatenate([gen.permutation(n) for _ in range(reps)])[:count]


def _linear_updates(model: Network, X, Y, order, etas, l2: float) -> None:
    # same update as the generic path, written out for the single-layer case
    W, b = model.layers[0]
    logistic = model.link == LOGISTIC
    if W.shape[0] == 1:
        # scalar bookkeeping is several times faster for one output
        w, y, b0 = W[0], Y[:, 0].tolist(), float(b[0])
        for eta, idx in zip(etas.tolist(), order.tolist()):
            x = X[idx]
            o = float(w @ x) + b0
            delta = (0.5 + 0.5 * math.tanh(0.5 * o) if logistic else o) - y[idx]
            g = delta * x
            if not (math.isfinite(delta) and math.isfinite(float(g.sum()))):
                b[0] = b0
                raise NumericFailureError(f"non-finite gradient at training example {idx}")
            w *= 1.0 - eta * l2
            w -= eta * g
            b0 -= eta * delta
            model.n_updates += 1
        b[0] = b0
        return
    for eta, idx in zip(etas, order):
        x = X[idx]
        o = W @ x + b
        delta = (0.5 + 0.5 * np.tanh(0.5 * o) if logistic else o) - Y[idx]
        gW = np.outer(delta, x) + l2 * W
        if not (np.isfinite(delta).all() and np.isfinite(gW).all()):
            raise NumericFailureError(f"non-finite gradient at training example {int(idx)}")
        W -= eta * gW
        b -= eta * delta
        model.n_updates += 1


def sgd_step(model: Network, data: LabeledDataset, cfg: TrainConfig, trainable=None) -> Network:
    """Run ``cfg.iterations_per_step`` single-example updates in place.

    The example order is drawn from a stream keyed by the model's update
    counter, so consecutive steps visit different orders but the whole
    training run is reproducible. Returns the (same) model.
    """
    X, Y = data.features, data.labels
    if X.shape[1] != model.input_dim or Y.shape[1] != model.output_dim:
        raise InvalidArgumentError(
            f"data is {X.shape[1]}->{Y.shape[1]} but model is {model.input_dim}->{model.output_dim}"
        )
    if model.link == LOGISTIC and data.task_kind != CLASSIFICATION:
        raise InvalidArgumentError("logistic link needs classification data")
    if cfg.learning_rate == 0.0:
        return model
    order = _example_order(data.n, cfg.iterations_per_step, cfg.rng.child(f"order-{model.n_updates}"))
    trainable = tuple(range(len(model.layers)) if trainable is None else trainable)
    l2 = cfg.l2_penalty
    etas = cfg.learning_rate / (model.n_updates + 1.0 + np.arange(order.size)) ** cfg.power_t
    if len(model.layers) == 1 and trainable == (0,):
        _linear_updates(model, X, Y, order, etas, l2)
        return model
    for eta, idx in zip(etas, order):
        grads = example_gradients(model, X[idx], Y[idx], l2, trainable)
        for i in trainable:
            gW, gb = grads[i]
            # inputs are finite by construction, so a bad output error shows up in gb
            if not np.isfinite(gb).all() or not np.isfinite(gW).all():
                raise NumericFailureError(f"non-finite gradient at training example {int(idx)}")
            W, b = model.layers[i]
            W -= eta * gW
            b -= eta * gb
        model.n_updates += 1
    return model


# ---------------------------------------------------------------------------
# Learner specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LearnerSpec:
    """What to build for one base model and how long to train it.

    family ``linear`` is a single-layer model; ``mlp`` uses architecture
    ``arch``. ``steps`` counts calls to :func:`sgd_step` on a fresh fit.
    """

    family: str = "linear"
    arch: int = 0
    link: str = LOGISTIC
    steps: int = 10

    def build(self, d: int, m: int, rng: RandomSource) -> Network:
        if self.family == "linear":
            return init_linear(d, m, self.link, rng)
        if self.family == "mlp":
            return init_mlp(d, m, self.arch, self.link, rng)
        raise InvalidArgumentError(f"unknown learner family {self.family!r}")


def fit_base(spec: LearnerSpec, data: LabeledDataset, cfg: TrainConfig) -> Network:
    model = spec.build(data.d, data.m, cfg.rng.child("init"))
    step_cfg = cfg.with_rng(cfg.rng.child("sgd"))
    for _ in range(spec.steps):
        sgd_step(model, data, step_cfg)
    return model


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


class Tree:
    """Flat binary tree. Internal nodes hold (feature, threshold) and route
    ``x[feature] <= threshold`` left; leaves hold the positive-class
    frequency of the training rows that reached them."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        k = self.feature.size
        if not (self.threshold.size == self.left.size == self.right.size == self.value.size == k) or k == 0:
            raise CorruptArtifactError("tree arrays have inconsistent lengths")

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def is_leaf(self):
        return self.feature < 0

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return self.value[node]
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def votes(self, X: np.ndarray) -> np.ndarray:
        return (self.leaf_values(X) >= 0.5).astype(float)

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def to_payload(self):
        return [self.feature.tolist(), self.threshold.tolist(), self.left.tolist(),
                self.right.tolist(), self.value.tolist()]

    @classmethod
    def from_payload(cls, p, d):
        tree = cls(*p)
        internal = tree.feature >= 0
        k = tree.n_nodes
        if np.any(tree.feature[internal] >= d):
            raise CorruptArtifactError("tree splits on a feature beyond the input width")
        children = np.concatenate([tree.left[internal], tree.right[internal]])
        if np.any(children <= 0) or np.any(children >= k):
            raise CorruptArtifactError("tree child index out of range")
        return tree


def _best_split(x: np.ndarray, y: np.ndarray):
    """Best Gini threshold on one feature; None when the column is constant."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    boundary = np.nonzero(xs[1:] > xs[:-1])[0]
    if boundary.size == 0:
        return None
    pos_left = np.cumsum(ys)[boundary]
    n_left = boundary + 1.0
    n_right = n - n_left
    pos_right = ys.sum() - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    weighted = n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)
    k = int(np.argmin(weighted))
    i = boundary[k]
    return weighted[k] / n, 0.5 * (xs[i] + xs[i + 1])


def build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, n_candidates: int, rng: RandomSource) -> Tree:
    gen = rng.generator()
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    d = X.shape[1]
    while stack:
        node, rows, depth = stack.pop()
        p = value[node]
        if depth >= max_depth or p == 0.0 or p == 1.0:
            continue
        best = None
        # examine n_candidates random features; keep drawing past that only
        # while no candidate has produced a valid split
        for tried, f in enumerate(gen.permutation(d)):
            if tried >= n_candidates and best is not None:
                break
            split = _best_split(X[rows, f], y[rows])
            if split is not None and (best is None or split[0] < best[0]):
                best = (split[0], split[1], f)
        if best is None:
            continue
        _, thr, f = best
        mask = X[rows, f] <= thr
        feature[node] = int(f)
        threshold[node] = float(thr)
        l_node = new_node(rows[mask])
        r_node = new_node(rows[~mask])
        left[node] = l_node
        right[node] = r_node
        stack.append((r_node, rows[~mask], depth + 1))
        stack.append((l_node, rows[mask], depth + 1))
    return Tree(feature, threshold, left, right, value)


class ForestModel(Predictor):
    """Per-label random forests; the score of a label is the share of its
    trees voting positive and the hard output is the majority vote."""

    kind = "forest"
    task_kind = CLASSIFICATION

    def __init__(self, per_label_trees, input_dim: int, max_depth: int):
        self.per_label_trees = [list(trees) for trees in per_label_trees]
        if not self.per_label_trees or any(not t for t in self.per_label_trees):
            raise InvalidArgumentError("forest needs at least one tree per label")
        self.input_dim = int(input_dim)
        self.output_dim = len(self.per_label_trees)
        self.max_depth = int(max_depth)

    @property
    def trees_per_label(self) -> int:
        return len(self.per_label_trees[0])

    def tree_votes(self, X) -> np.ndarray:
        """Hard votes with shape (n, m, trees_per_label)."""
        X, _ = self._as_batch(X)
        return np.stack(
            [np.stack([t.votes(X) for t in trees], axis=1) for trees in self.per_label_trees],
            axis=1,
        )

    def _scores_batch(self, X):
        return np.stack(
            [np.mean([t.votes(X) for t in trees], axis=0) for trees in self.per_label_trees],
            axis=1,
        )

    def to_payload(self):
        return {
            "max_depth": self.max_depth,
            "labels": [[t.to_payload() for t in trees] for trees in self.per_label_trees],
        }

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        trees = [[Tree.from_payload(t, input_dim) for t in label] for label in p["labels"]]
        return cls(trees, input_dim, p["max_depth"])


register_kind("forest", ForestModel.from_payload)


def fit_forest(data: LabeledDataset, trees_per_label: int = 100, max_depth: int = 25,
               rng: RandomSource = RandomSource(0)) -> ForestModel:
    """Bootstrap-aggregated Gini trees, grown independently for each label
    with ``floor(sqrt(d))`` candidate features per node."""
    if data.task_kind != CLASSIFICATION:
        raise InvalidArgumentError("forests are trained on classification data")
    if trees_per_label < 1 or max_depth < 0:
        raise InvalidArgumentError("trees_per_label must be >= 1 and max_depth >= 0")
    n_candidates = max(1, int(math.sqrt(data.d)))
    per_label = []
    for j in range(data.m):
        y = data.labels[:, j]
        trees = []
        for t in range(trees_per_label):
            stream = rng.child(f"label-{j}/tree-{t}")
            rows = bootstrap_indices(data.n, stream.child("bootstrap"))
            trees.append(build_tree(data.features[rows], y[rows], max_depth, n_candidates, stream.child("splits")))
        per_label.append(trees)
    return ForestModel(per_label, data.d, max_depth)
