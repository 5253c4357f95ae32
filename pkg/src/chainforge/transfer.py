"""Transfer chains: a black-box source model fed through a searched linear
input map, whose predictions become extra features for a target model.

Also holds the random-projection learner (RLP), ensembles of random-map
transfer chains (ETC) and the pooled-source wrapper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CLASSIFICATION,
    CorruptArtifactError,
    InvalidArgumentError,
    LabeledDataset,
    Predictor,
    RandomSource,
    kfold_indices,
    nested_load,
    nested_save,
    register_kind,
)
from .learners import LearnerSpec, MlpModel, TrainConfig, fit_base, init_mlp
from .metrics import exact_match, hamming_score, vector_mi
from .multilabel import EnsembleModel

OBJECTIVES = ("mi", "cv_loss")
CV_METRICS = {"zero_one": exact_match, "hamming": hamming_score}


@dataclass(frozen=True)
class LinearMap:
    """Affine map ``x -> U x + u`` from target inputs into source inputs."""

    U: np.ndarray  # (d_source, d_target)
    u: np.ndarray  # (d_source,)

    def __post_init__(self):
        U = np.atleast_2d(np.array(self.U, dtype=float))
        u = np.array(self.u, dtype=float).ravel()
        if u.shape != (U.shape[0],):
            raise InvalidArgumentError(f"offset length {u.size} does not match {U.shape[0]} map rows")
        U.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "u", u)

    @property
    def input_dim(self) -> int:
        return self.U.shape[1]

    @property
    def output_dim(self) -> int:
        return self.U.shape[0]

    @classmethod
    def identity(cls, d: int) -> "LinearMap":
        return cls(np.eye(d), np.zeros(d))

    def to_payload(self):
        return {"U": self.U.tolist(), "u": self.u.tolist()}

    @classmethod
    def from_payload(cls, p) -> "LinearMap":
        return cls(p["U"], p["u"])


def apply_map(f: LinearMap, x) -> np.ndarray:
    """``U x + u`` for one vector or for each row of a matrix."""
    X = np.asarray(x, dtype=float)
    if X.shape[-1] != f.input_dim or X.ndim not in (1, 2):
        raise InvalidArgumentError(f"map expects inputs of length {f.input_dim}, got shape {X.shape}")
    return X @ f.U.T + f.u


def make_source_features(source: Predictor, f: LinearMap, X) -> np.ndarray:
    """Hard source predictions on mapped target inputs, one row per instance."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != f.input_dim:
        raise InvalidArgumentError(
            f"data->map boundary: data has {X.shape[1]} columns, map reads {f.input_dim}"
        )
    if f.output_dim != source.input_dim:
        raise InvalidArgumentError(
            f"map->source boundary: map emits {f.output_dim} values, source reads {source.input_dim}"
        )
    return np.asarray(source.predict(apply_map(f, X)), dtype=float).reshape(X.shape[0], source.output_dim)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def fold(self, f: LinearMap) -> LinearMap:
        """The raw-input map equal to ``f`` applied after standardizing."""
        U = f.U / self.scale
        return LinearMap(U, f.u - U @ self.mean)


@dataclass(frozen=True)
class SearchConfig:
    budget: int = 100
    proposal_sd: float = 0.1
    objective: str = "cv_loss"
    cv_folds: int = 3
    cv_loss_metric: str = "zero_one"
    rng: RandomSource = field(default_factory=lambda: RandomSource(0))

    def __post_init__(self):
        if self.budget < 0:
            raise InvalidArgumentError("budget must be >= 0")
        if self.cv_folds < 2:
            raise InvalidArgumentError("cv_folds must be >= 2")
        if self.proposal_sd <= 0:
            raise InvalidArgumentError("proposal_sd must be > 0")
        if self.objective not in OBJECTIVES:
            raise InvalidArgumentError(f"objective must be one of {OBJECTIVES}")
        if self.cv_loss_metric not in CV_METRICS:
            raise InvalidArgumentError(f"cv_loss_metric must be one of {tuple(CV_METRICS)}")


def cv_score(data: LabeledDataset, target_spec: LearnerSpec, train_cfg: TrainConfig,
             folds, metric: str = "zero_one") -> float:
    """Mean held-out score of fresh target models over the given folds."""
    scorer = CV_METRICS[metric]
    everything = np.arange(data.n)
    scores = []
    for k, held in enumerate(folds):
        train = data.subset(np.setdiff1d(everything, held))
        model = fit_base(target_spec, train, train_cfg.with_rng(train_cfg.rng.child(f"fold-{k}")))
        scores.append(scorer(data.labels[held], model.predict(data.features[held])))
    return float(np.mean(scores))


def score_map(f: LinearMap, source: Predictor, data: LabeledDataset, cfg: SearchConfig,
              target_spec: LearnerSpec | None = None, train_cfg: TrainConfig | None = None,
              folds=None) -> float:
    """Objective of a map; higher is better for both objectives.

    ``mi`` is the mean pairwise mutual information between source
    features and target labels. ``cv_loss`` trains a fresh target model
    on ``[x, source features]`` per fold and averages the held-out score.
    """
    feats = make_source_features(source, f, data.features)
    if cfg.objective == "mi":
        return vector_mi(feats, data.labels)
    if target_spec is None:
        raise InvalidArgumentError("cv_loss objective needs a target learner spec")
    if folds is None:
        folds = kfold_indices(data.n, cfg.cv_folds, cfg.rng.child("folds"))
    train_cfg = train_cfg or TrainConfig(rng=cfg.rng.child("target"))
    stacked = data.with_features(np.column_stack([data.features, feats]))
    return cv_score(stacked, target_spec, train_cfg, folds, cfg.cv_loss_metric)


def random_map(d_source: int, d_target: int, rng: RandomSource) -> LinearMap:
    """Initial map: Gaussian entries with sd ``1/sqrt(d_target)``, zero offset."""
    U = rng.generator().normal(0.0, 1.0 / np.sqrt(d_target), size=(d_source, d_target))
    return LinearMap(U, np.zeros(d_source))


@dataclass
class SearchResult:
    map: LinearMap  # acts on raw target inputs
    score: float
    accepted: list[float]  # scores of the initial map and every accepted proposal
    best_so_far: list[float]  # one entry per iteration, initial map included
    standardizer: Standardizer
    n_evaluations: int = 0


def hill_climb_map(source: Predictor, data: LabeledDataset, cfg: SearchConfig,
                   target_spec: LearnerSpec | None = None, train_cfg: TrainConfig | None = None) -> SearchResult:
    """Greedy search over maps with Gaussian proposals on both ``U`` and ``u``.

    Inputs are z-scored with statistics of ``data`` before mapping; the
    returned map has the scaling folded in so it reads raw inputs. A
    proposal is accepted only if it strictly improves the score. Folds
    and target-training streams are fixed for the whole search so that
    scores of different maps are compared on equal terms.
    """
    std = Standardizer.fit(data.features)
    zdata = data.with_features(std.transform(data.features), data.feature_names)
    folds = kfold_indices(data.n, cfg.cv_folds, cfg.rng.child("folds")) if cfg.objective == "cv_loss" else None
    train_cfg = train_cfg or TrainConfig(rng=cfg.rng.child("target"))

    def score(f):
        return score_map(f, source, zdata, cfg, target_spec, train_cfg, folds)

    current = random_map(source.input_dim, data.d, cfg.rng.child("init"))
    best = score(current)
    accepted = [best]
    best_so_far = [best]
    gen = cfg.rng.child("proposals").generator()
    for _ in range(cfg.budget):
        U = current.U + cfg.proposal_sd * gen.standard_normal(current.U.shape)
        u = current.u + cfg.proposal_sd * gen.standard_normal(current.u.shape)
        proposal = LinearMap(U, u)
        s = score(proposal)
        if s > best:
            current, best = proposal, s
            accepted.append(s)
        best_so_far.append(best)
    return SearchResult(std.fold(current), best, accepted, best_so_far, std, cfg.budget + 1)


class TransferChainModel(Predictor):
    """``target([x, source(map(x))])``.

    The source is used strictly through ``predict``; it is serialized by
    value from its own artifact.
    """

    kind = "transfer_chain"

    def __init__(self, source: Predictor, map: LinearMap, target: Predictor):
        if map.output_dim != source.input_dim:
            raise InvalidArgumentError("map output width must equal the source input width")
        if target.input_dim != map.input_dim + source.output_dim:
            raise InvalidArgumentError(
                f"target must read {map.input_dim + source.output_dim} inputs, reads {target.input_dim}"
            )
        self.source = source
        self.map = map
        self.target = target
        self.input_dim = map.input_dim
        self.output_dim = target.output_dim
        self.task_kind = target.task_kind

    def target_inputs(self, X):
        return np.column_stack([X, make_source_features(self.source, self.map, X)])

    def _scores_batch(self, X):
        return self.target.predict_scores(self.target_inputs(X))

    def _predict_batch(self, X):
        return self.target.predict(self.target_inputs(X))

    def to_payload(self):
        return {"source": nested_save(self.source), "map": self.map.to_payload(),
                "target": nested_save(self.target)}

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        try:
            return cls(nested_load(p["source"]), LinearMap.from_payload(p["map"]), nested_load(p["target"]))
        except InvalidArgumentError as exc:
            raise CorruptArtifactError(str(exc)) from None


def fit_transfer_chain(source: Predictor, data: LabeledDataset, cfg: SearchConfig,
                       target_spec: LearnerSpec, train_cfg: TrainConfig,
                       fixed_map: LinearMap | None = None) -> TransferChainModel:
    """Search a map (unless one is pinned), then train the target model on
    the inputs widened by the source features."""
    search = None
    f = fixed_map
    if f is None:
        search = hill_climb_map(source, data, cfg, target_spec, train_cfg.with_rng(train_cfg.rng.child("search")))
        f = search.map
    feats = make_source_features(source, f, data.features)
    widened = data.with_features(np.column_stack([data.features, feats]))
    target = fit_base(target_spec, widened, train_cfg.with_rng(train_cfg.rng.child("final")))
    model = TransferChainModel(source, f, target)
    model.search = search
    return model


def fit_etc_member(source: Predictor, data: LabeledDataset, index: int, target_spec: LearnerSpec,
                   train_cfg: TrainConfig, rng: RandomSource) -> TransferChainModel:
    """One random-map chain (no search), standardized on ``data``."""
    std = Standardizer.fit(data.features)
    f = std.fold(random_map(source.input_dim, data.d, rng.child(f"member-{index}/map")))
    return fit_transfer_chain(source, data, SearchConfig(budget=0), target_spec,
                              train_cfg.with_rng(train_cfg.rng.child(f"member-{index}")), fixed_map=f)


def fit_etc(source: Predictor, data: LabeledDataset, n_members: int, target_spec: LearnerSpec,
            train_cfg: TrainConfig, rng: RandomSource) -> EnsembleModel:
    if n_members < 1:
        raise InvalidArgumentError("n_members must be >= 1")
    return EnsembleModel([fit_etc_member(source, data, i, target_spec, train_cfg, rng) for i in range(n_members)])


register_kind(TransferChainModel.kind, TransferChainModel.from_payload)


# ---------------------------------------------------------------------------
# Random layer projection
# ---------------------------------------------------------------------------


class RlpLearner:
    """Random fixed hidden layers with an SGD-trained readout.

    Each :meth:`trial` draws new hidden weights, trains a fresh readout on
    them and keeps them only if the internal cross-validation score
    improves. Hidden weights are never touched by gradient updates.
    """

    def __init__(self, data: LabeledDataset, arch: int, train_cfg: TrainConfig,
                 search_cfg: SearchConfig, readout_steps: int = 1):
        if arch not in (1, 2):
            raise InvalidArgumentError("random projection needs architecture v in {1, 2}")
        self.data = data
        self.arch = arch
        self.train_cfg = train_cfg
        self.search_cfg = search_cfg
        self.readout = LearnerSpec("linear", link=train_link(data), steps=readout_steps)
        self.folds = kfold_indices(data.n, search_cfg.cv_folds, search_cfg.rng.child("folds"))
        self.n_trials = 0
        self.accepted: list[float] = []
        self.best_so_far: list[float] = []
        self.model: MlpModel | None = None
        self.score = -np.inf
        self.trial()

    def _candidate(self, index: int):
        net = init_mlp(self.data.d, self.data.m, self.arch, train_link(self.data),
                       self.search_cfg.rng.child(f"trial-{index}"))
        hidden = self.data.with_features(net.hidden(self.data.features))
        metric = self.search_cfg.cv_loss_metric
        cfg = self.train_cfg.with_rng(self.train_cfg.rng.child(f"trial-{index}"))
        score = cv_score(hidden, self.readout, cfg.with_rng(cfg.rng.child("cv")), self.folds, metric)
        readout = fit_base(self.readout, hidden, cfg.with_rng(cfg.rng.child("final")))
        net.layers[-1] = readout.layers[0]
        net.n_updates = readout.n_updates
        return net, score

    def trial(self) -> bool:
        net, score = self._candidate(self.n_trials)
        self.n_trials += 1
        improved = score > self.score
        if improved:
            self.model, self.score = net, score
            self.accepted.append(score)
        self.best_so_far.append(self.score)
        return improved


def train_link(data: LabeledDataset) -> str:
    return "logistic" if data.task_kind == CLASSIFICATION else "identity"


def fit_rlp(data: LabeledDataset, arch_v: int, train_cfg: TrainConfig, search_cfg: SearchConfig,
            readout_steps: int = 1) -> MlpModel:
    """Random projection learner after ``search_cfg.budget`` extra trials."""
    learner = RlpLearner(data, arch_v, train_cfg, search_cfg, readout_steps)
    for _ in range(search_cfg.budget):
        learner.trial()
    model = learner.model
    model.search = learner
    return model


# ---------------------------------------------------------------------------
# Pooled sources
# ---------------------------------------------------------------------------


class PooledPredictor(Predictor):
    """Several source models behind one input.

    The input width is the largest member width; a narrower member reads
    the leading slice of the input. Outputs are concatenated in member
    order.
    """

    kind = "pooled"

    def __init__(self, members):
        self.members = list(members)
        if not self.members:
            raise InvalidArgumentError("pooling needs at least one source model")
        self.input_dim = max(mbr.input_dim for mbr in self.members)
        self.output_dim = sum(mbr.output_dim for mbr in self.members)
        self.task_kind = CLASSIFICATION

    def _predict_batch(self, X):
        return np.column_stack([
            np.asarray(mbr.predict(X[:, :mbr.input_dim]), dtype=float).reshape(X.shape[0], mbr.output_dim)
            for mbr in self.members
        ])

    def _scores_batch(self, X):
        return self._predict_batch(X)

    def to_payload(self):
        return {"members": [nested_save(mbr) for mbr in self.members]}

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        return cls([nested_load(o) for o in p["members"]])


register_kind(PooledPredictor.kind, PooledPredictor.from_payload)


def pool_sources(members) -> Predictor:
    """A single source is returned as is; several are pooled."""
    members = list(members)
    return members[0] if len(members) == 1 else PooledPredictor(members)
