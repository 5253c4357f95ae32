"""Composers over base learners: independent models (binary relevance),
classifier/regressor chains, bagging, ensembles of chains and stacking."""

from __future__ import annotations

import numpy as np

from .core import (
    CorruptArtifactError,
    InvalidArgumentError,
    LabeledDataset,
    Predictor,
    RandomSource,
    bootstrap_indices,
    nested_load,
    nested_save,
    register_kind,
)
from .learners import LearnerSpec, LinearModel, TrainConfig, fit_base


def _check_same_dims(models):
    if not models:
        raise InvalidArgumentError("need at least one model")
    d = models[0].input_dim
    if any(mdl.input_dim != d for mdl in models):
        raise InvalidArgumentError("all models must share one input width")


class IndependentModel(Predictor):
    """Side-by-side models over the same input; outputs are concatenated."""

    kind = "independent"

    def __init__(self, models):
        self.models = list(models)
        _check_same_dims(self.models)
        self.input_dim = self.models[0].input_dim
        self.output_dim = sum(mdl.output_dim for mdl in self.models)
        self.task_kind = self.models[0].task_kind

    def _scores_batch(self, X):
        return np.hstack([mdl.predict_scores(X) for mdl in self.models])

    def _predict_batch(self, X):
        return np.hstack([mdl.predict(X) for mdl in self.models])

    def to_payload(self):
        return {"models": [nested_save(mdl) for mdl in self.models]}

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        return cls([nested_load(o) for o in p["models"]])


def _label_stream(cfg: TrainConfig, data: LabeledDataset, j: int) -> TrainConfig:
    # keyed by label name so that permuting label columns permutes models
    return cfg.with_rng(cfg.rng.child(f"label-{data.label_names[j]}"))


def fit_br(data: LabeledDataset, base: LearnerSpec, cfg: TrainConfig) -> IndependentModel:
    """One base model per label, each trained on the features alone."""
    models = []
    for j in range(data.m):
        column = data.with_labels(data.labels[:, [j]], (data.label_names[j],))
        models.append(fit_base(base, column, _label_stream(cfg, data, j)))
    return IndependentModel(models)


class ChainModel(Predictor):
    """Links applied in ``order``; the link at chain position j reads the
    input followed by the j preceding predictions (in chain order).

    Hard predictions are fed forward unless ``feed_scores`` is set.
    Outputs come back in the original label order.
    """

    kind = "chain"

    def __init__(self, order, links, feed_scores: bool = False):
        self.order = [int(i) for i in order]
        self.links = list(links)
        m = len(self.order)
        if sorted(self.order) != list(range(m)) or len(self.links) != m or m == 0:
            raise InvalidArgumentError("order must be a permutation matching the number of links")
        d = self.links[0].input_dim
        for pos, link in enumerate(self.links):
            if link.input_dim != d + pos or link.output_dim != 1:
                raise InvalidArgumentError(f"link {pos} must map {d + pos} inputs to one output")
        self.input_dim = d
        self.output_dim = m
        self.feed_scores = bool(feed_scores)
        self.task_kind = self.links[0].task_kind

    def cascade(self, X):
        """Return (scores, hard outputs) in original label order."""
        n = X.shape[0]
        scores = np.empty((n, self.output_dim))
        hard = np.empty((n, self.output_dim))
        Z = X
        for label, link in zip(self.order, self.links):
            s = link.predict_scores(Z)[:, 0]
            h = link.predict(Z)[:, 0]
            scores[:, label] = s
            hard[:, label] = h
            Z = np.column_stack([Z, s if self.feed_scores else h])
        return scores, hard

    def _scores_batch(self, X):
        return self.cascade(X)[0]

    def _predict_batch(self, X):
        return self.cascade(X)[1]

    def to_payload(self):
        return {
            "order": self.order,
            "feed_scores": self.feed_scores,
            "links": [nested_save(link) for link in self.links],
        }

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        try:
            return cls(p["order"], [nested_load(o) for o in p["links"]], p.get("feed_scores", False))
        except InvalidArgumentError as exc:
            raise CorruptArtifactError(str(exc)) from None


def fit_chain(data: LabeledDataset, order, base: LearnerSpec, cfg: TrainConfig,
              feed_scores: bool = False) -> ChainModel:
    """Train links in chain order. Each link sees the true values of the
    labels before it, never predictions."""
    order = [int(i) for i in order]
    if sorted(order) != list(range(data.m)):
        raise InvalidArgumentError(f"order {order} is not a permutation of {data.m} labels")
    links = []
    for pos, label in enumerate(order):
        prev = data.labels[:, order[:pos]]
        step = LabeledDataset(
            np.column_stack([data.features, prev]),
            data.labels[:, [label]],
            task_kind=data.task_kind,
        )
        links.append(fit_base(base, step, _label_stream(cfg, data, label)))
    return ChainModel(order, links, feed_scores)


class EnsembleModel(Predictor):
    """Mean of member scores; classification thresholds the mean at 0.5."""

    kind = "ensemble"

    def __init__(self, members, task_kind: str | None = None):
        self.members = list(members)
        _check_same_dims(self.members)
        if any(mbr.output_dim != self.members[0].output_dim for mbr in self.members):
            raise InvalidArgumentError("ensemble members must share one output width")
        self.input_dim = self.members[0].input_dim
        self.output_dim = self.members[0].output_dim
        self.task_kind = task_kind or self.members[0].task_kind

    def _scores_batch(self, X):
        return np.mean([mbr.predict_scores(X) for mbr in self.members], axis=0)

    def add(self, member: Predictor) -> None:
        if member.input_dim != self.input_dim or member.output_dim != self.output_dim:
            raise InvalidArgumentError("new member has different dimensions")
        self.members.append(member)

    def to_payload(self):
        return {"task_kind": self.task_kind, "members": [nested_save(mbr) for mbr in self.members]}

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        return cls([nested_load(o) for o in p["members"]], p["task_kind"])


def random_order(m: int, rng: RandomSource) -> list[int]:
    return [int(i) for i in rng.generator().permutation(m)]


def fit_chain_member(data: LabeledDataset, index: int, base: LearnerSpec, cfg: TrainConfig,
                     rng: RandomSource) -> ChainModel:
    """Ensemble member ``index``: a chain in its own uniformly random order."""
    order = random_order(data.m, rng.child(f"member-{index}/order"))
    return fit_chain(data, order, base, cfg.with_rng(cfg.rng.child(f"member-{index}")))


def fit_ensemble_of_chains(data: LabeledDataset, n_members: int, base: LearnerSpec,
                           cfg: TrainConfig, rng: RandomSource) -> EnsembleModel:
    if n_members < 1:
        raise InvalidArgumentError("n_members must be >= 1")
    return EnsembleModel([fit_chain_member(data, i, base, cfg, rng) for i in range(n_members)])


def fit_bagging(data: LabeledDataset, n_members: int, base: LearnerSpec, cfg: TrainConfig,
                rng: RandomSource, resample: bool = True) -> EnsembleModel:
    """Independent-model members, each trained on a bootstrap resample."""
    if n_members < 1:
        raise InvalidArgumentError("n_members must be >= 1")
    members = []
    for i in range(n_members):
        part = data.subset(bootstrap_indices(data.n, rng.child(f"member-{i}/rows"))) if resample else data
        members.append(fit_br(part, base, cfg.with_rng(cfg.rng.child(f"member-{i}"))))
    return EnsembleModel(members)


def linear_parameters(model: Predictor) -> tuple[np.ndarray, np.ndarray]:
    """(W, b) of a linear model or of independent linear models."""
    if isinstance(model, LinearModel):
        return model.W, model.b
    if isinstance(model, IndependentModel):
        parts = [linear_parameters(mdl) for mdl in model.models]
        return np.vstack([W for W, _ in parts]), np.concatenate([b for _, b in parts])
    raise InvalidArgumentError(f"{type(model).__name__} is not linear")


def collapse_linear(ensemble: EnsembleModel) -> LinearModel:
    """The single identity-link model whose weights are the member mean."""
    params = [linear_parameters(mbr) for mbr in ensemble.members]
    if any(getattr(mdl, "link", None) != "identity" for mbr in ensemble.members
           for mdl in getattr(mbr, "models", [mbr])):
        raise InvalidArgumentError("only identity-link (regression) members collapse exactly")
    W = np.mean([W for W, _ in params], axis=0)
    b = np.mean([b for _, b in params], axis=0)
    return LinearModel(W, b, "identity")


class StackedModel(Predictor):
    """Meta layer over ``[x, first_layer(x)]``."""

    kind = "stacked"

    def __init__(self, first_layer: Predictor, meta_layer: Predictor):
        d, m = first_layer.input_dim, first_layer.output_dim
        if meta_layer.input_dim != d + m:
            raise InvalidArgumentError(f"meta layer must read {d + m} inputs")
        self.first_layer = first_layer
        self.meta_layer = meta_layer
        self.input_dim = d
        self.output_dim = meta_layer.output_dim
        self.task_kind = meta_layer.task_kind

    def _meta_inputs(self, X):
        return np.column_stack([X, self.first_layer.predict(X)])

    def _scores_batch(self, X):
        return self.meta_layer.predict_scores(self._meta_inputs(X))

    def _predict_batch(self, X):
        return self.meta_layer.predict(self._meta_inputs(X))

    def to_payload(self):
        return {"first": nested_save(self.first_layer), "meta": nested_save(self.meta_layer)}

    @classmethod
    def from_payload(cls, p, input_dim, output_dim):
        return cls(nested_load(p["first"]), nested_load(p["meta"]))


def fit_stacking(data: LabeledDataset, base: LearnerSpec, meta_base: LearnerSpec, cfg: TrainConfig,
                 first_layer: Predictor | None = None) -> StackedModel:
    """Two-level stack. The meta layer learns from the first layer's
    predictions on the training inputs (not from the true labels)."""
    if first_layer is None:
        first_layer = fit_br(data, base, cfg.with_rng(cfg.rng.child("first")))
    preds = first_layer.predict(data.features)
    meta_data = data.with_features(np.column_stack([data.features, preds]))
    meta = fit_br(meta_data, meta_base, cfg.with_rng(cfg.rng.child("meta")))
    return StackedModel(first_layer, meta)


for _cls in (IndependentModel, ChainModel, EnsembleModel, StackedModel):
    register_kind(_cls.kind, _cls.from_payload)
