"""Experiment runners: label-interaction study, shrinkage studies and the
stepwise accuracy-versus-compute benchmark, plus source preparation and
the record CSV format."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .core import (
    CLASSIFICATION,
    REGRESSION,
    BlackBox,
    ChainforgeError,
    InvalidArgumentError,
    LabeledDataset,
    Predictor,
    RandomSource,
    kfold_indices,
    load_model,
    read_csv_dataset,
    save_model,
    split_train_test,
    write_model,
)
from .learners import IDENTITY, LOGISTIC, LearnerSpec, TrainConfig, fit_base, fit_forest, init_linear, init_mlp, sgd_step
from .metrics import exact_match, gain, hamming_score
from .multilabel import (
    EnsembleModel,
    fit_bagging,
    fit_br,
    fit_chain,
    fit_chain_member,
    fit_ensemble_of_chains,
    random_order,
)
from .shrinkage import SampleBundle, js_vs_ls_error, mse
from .synth import IndependentConceptConfig, concept_weights, gen_independent_concepts
from .transfer import (
    RlpLearner,
    SearchConfig,
    Standardizer,
    TransferChainModel,
    fit_etc_member,
    hill_climb_map,
    make_source_features,
    pool_sources,
)

log = logging.getLogger(__name__)

RECORD_FIELDS = ("experiment_id", "method", "step", "metric_name", "value", "cpu_seconds", "seed")
ROSTER = ("SLP", "ECC", "MLP0", "MLP1", "MLP2", "RLP1", "RLP2", "TC0", "TC1", "TC2", "ETC")


@dataclass(frozen=True)
class ExperimentRecord:
    experiment_id: str
    method: str
    step: int
    metric_name: str
    value: float
    cpu_seconds: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidArgumentError(f"{self.method}/{self.metric_name}: value is not finite")
        if not self.cpu_seconds >= 0:
            raise InvalidArgumentError("cpu_seconds must be non-negative")

    def to_row(self) -> list[str]:
        return [self.experiment_id, self.method, str(self.step), self.metric_name,
                repr(float(self.value)), repr(float(self.cpu_seconds)), str(self.seed)]

    @classmethod
    def from_row(cls, row: dict) -> "ExperimentRecord":
        return cls(row["experiment_id"], row["method"], int(row["step"]), row["metric_name"],
                   float(row["value"]), float(row["cpu_seconds"]), int(row["seed"]))


def write_records(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow(rec.to_row())


def read_records(path) -> list[ExperimentRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise InvalidArgumentError(f"{path}: header is not {','.join(RECORD_FIELDS)}")
        return [ExperimentRecord.from_row(row) for row in reader]


def cpu_monotone(records) -> bool:
    """True when cpu_seconds never decreases with step inside a series."""
    series: dict[tuple, list[tuple[int, float]]] = {}
    for rec in records:
        series.setdefault((rec.experiment_id, rec.method, rec.metric_name, rec.seed), []).append(
            (rec.step, rec.cpu_seconds))
    for points in series.values():
        cpu = [c for _, c in sorted(points)]
        if any(b < a for a, b in zip(cpu, cpu[1:])):
            return False
    return True


# ---------------------------------------------------------------------------
# Source preparation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForestParams:
    trees_per_label: int = 100
    max_depth: int = 25


@dataclass
class PreparedSources:
    predictor: Predictor  # black-box handle on the (pooled) source
    artifacts: list
    paths: list = field(default_factory=list)


def prepare_sources(sources, params: ForestParams = ForestParams(), rng: RandomSource = RandomSource(0),
                    out_dir=None) -> PreparedSources:
    """Train one forest per source dataset on all of its rows.

    ``sources`` holds LabeledDatasets or ``(csv_path, labels_last)`` pairs.
    The datasets are dropped after training; the returned predictor is
    rebuilt from the saved artifacts and exposes only ``predict``.
    """
    artifacts, paths = [], []
    for i, src in enumerate(sources):
        data = read_csv_dataset(*src) if isinstance(src, tuple) else src
        forest = fit_forest(data, params.trees_per_label, params.max_depth, rng.child(f"source-{i}"))
        if out_dir is not None:
            path = Path(out_dir) / f"source-{i}.model"
            artifacts.append(write_model(forest, path))
            paths.append(path)
        else:
            artifacts.append(save_model(forest))
        del data, forest
    if not artifacts:
        raise InvalidArgumentError("need at least one source dataset")
    members = [BlackBox(load_model(a), a) for a in artifacts]
    return PreparedSources(BlackBox(pool_sources(members)) if len(members) > 1 else members[0], artifacts, paths)


# ---------------------------------------------------------------------------
# Label-interaction study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionConfig:
    n_members: int = 10
    steps: int = 10
    learning_rate: float = 0.01
    l2_penalty: float = 0.05
    mlp_arch: int = 1
    standardize: bool = True


# experiment id -> (base family, l2 override, loss metric)
INTERACTION_EXPERIMENTS = {
    "exp1": ("linear", None, "zero_one_loss"),
    "exp2": ("linear", None, "hamming_loss"),
    "exp3": ("mlp", 0.0, "hamming_loss"),
    "exp4": ("mlp", None, "hamming_loss"),
}


def _loss(metric: str, Y, Y_hat) -> float:
    if metric == "zero_one_loss":
        return 1.0 - exact_match(Y, Y_hat)
    return 1.0 - hamming_score(Y, Y_hat)


def run_interaction_study(data: LabeledDataset, folds: int = 5, seed: int = 0,
                          cfg: InteractionConfig = InteractionConfig(), name: str = "data",
                          experiments=tuple(INTERACTION_EXPERIMENTS)) -> list[ExperimentRecord]:
    """Independent models (BR) against ensembles of chains (ECC) under the
    four base-learner/loss arrangements, averaged over k-fold CV.

    Records the mean normalized loss of each method and the Gain of ECC
    over BR per experiment.
    """
    if data.task_kind != CLASSIFICATION:
        raise InvalidArgumentError("the interaction study needs classification data")
    rng = RandomSource(seed, f"interaction/{name}")
    parts = kfold_indices(data.n, folds, rng.child("folds"))
    everything = np.arange(data.n)
    records = []
    for exp in experiments:
        family, l2, metric = INTERACTION_EXPERIMENTS[exp]
        spec = LearnerSpec(family, cfg.mlp_arch if family == "mlp" else 0, LOGISTIC, cfg.steps)
        tcfg = TrainConfig(cfg.learning_rate, cfg.l2_penalty if l2 is None else l2)
        losses = {"BR": [], "ECC": []}
        cpu = {"BR": 0.0, "ECC": 0.0}
        for k, held in enumerate(parts):
            train, test = data.subset(np.setdiff1d(everything, held)), data.subset(held)
            if cfg.standardize:
                std = Standardizer.fit(train.features)
                train = train.with_features(std.transform(train.features), train.feature_names)
                test = test.with_features(std.transform(test.features), test.feature_names)
            stream = rng.child(f"{exp}/fold-{k}")
            t0 = time.process_time()
            br = fit_br(train, spec, tcfg.with_rng(stream.child("br")))
            t1 = time.process_time()
            ecc = fit_ensemble_of_chains(train, cfg.n_members, spec, tcfg.with_rng(stream.child("ecc")),
                                         stream.child("orders"))
            t2 = time.process_time()
            cpu["BR"] += t1 - t0
            cpu["ECC"] += t2 - t1
            losses["BR"].append(_loss(metric, test.labels, br.predict(test.features)))
            losses["ECC"].append(_loss(metric, test.labels, ecc.predict(test.features)))
        eid = f"{name}/{exp}"
        mean = {m: float(np.mean(v)) for m, v in losses.items()}
        for method in ("BR", "ECC"):
            records.append(ExperimentRecord(eid, method, 0, metric, mean[method], cpu[method], seed))
        try:
            records.append(ExperimentRecord(eid, "ECC", 0, "gain", gain(mean["ECC"], mean["BR"]), cpu["ECC"], seed))
        except ZeroDivisionError:
            log.warning("%s: gain undefined (BR loss is 1)", eid)
    return records


# ---------------------------------------------------------------------------
# Shrinkage studies
# ---------------------------------------------------------------------------

JS_MODES = ("vs_n", "vs_m", "ensemble_effect")


@dataclass(frozen=True)
class EnsembleEffectConfig:
    m: int = 10
    d: int = 5
    n_test: int = 200
    noise_sd: float = 1.0
    n_members: int = 10
    steps: int = 5
    learning_rate: float = 0.01
    l2_penalty: float = 0.05


def js_vs_n_records(grid, runs: int, seed: int, m: int = 5) -> list[ExperimentRecord]:
    """Zero-mean unit Gaussian bundles of ``n`` vectors in ``m`` dims."""
    records = []
    for n in grid:
        t0 = time.process_time()
        gen = RandomSource(seed, f"js/vs_n/n-{n}").generator()
        samples = gen.standard_normal((runs, n, m))
        errs = np.array([js_vs_ls_error(np.zeros(m), SampleBundle(s)) for s in samples])
        cpu = time.process_time() - t0
        for method, col in (("LS", 0), ("JS", 1)):
            records.append(ExperimentRecord("js_vs_n", method, n, "mse", float(errs[:, col].mean()), cpu, seed))
        records.append(ExperimentRecord("js_vs_n", "JS", n, "improvement",
                                        float(np.mean(errs[:, 0] - errs[:, 1])), cpu, seed))
    return records


def _js_vs_m(grid, runs, seed, n=30, d=5, n_test=50, noise_sd=1.0):
    """Single prediction vectors of logistic independent models, shrunk
    with a variance measured from training residuals, scored against the
    true class probabilities."""
    records = []
    spec = LearnerSpec("linear", 0, LOGISTIC, steps=10)
    for m in grid:
        t0 = time.process_time()
        ls, js = [], []
        for r in range(runs):
            rng = RandomSource(seed, f"js/vs_m/m-{m}/run-{r}")
            gcfg = IndependentConceptConfig(n + n_test, d, m, noise_sd, CLASSIFICATION, rng.child("data"))
            data = gen_independent_concepts(gcfg)
            W = concept_weights(gcfg)
            train, test = data.subset(np.arange(n)), data.subset(np.arange(n, n + n_test))
            model = fit_br(train, spec, TrainConfig(learning_rate=0.1, l2_penalty=0.01, rng=rng.child("fit")))
            resid = train.labels - model.predict_scores(train.features)
            var = float(np.mean(resid ** 2))
            truth = norm.cdf(test.features @ W.T / noise_sd) if noise_sd > 0 else (test.features @ W.T > 0) * 1.0
            scores = model.predict_scores(test.features)
            for p, t in zip(scores, truth):
                e_ls, e_js = js_vs_ls_error(t, SampleBundle(p), variance=var)
                ls.append(e_ls)
                js.append(e_js)
        ls, js = np.array(ls), np.array(js)
        cpu = time.process_time() - t0
        records.append(ExperimentRecord("js_vs_m", "LS", m, "mse", float(ls.mean()), cpu, seed))
        records.append(ExperimentRecord("js_vs_m", "JS", m, "mse", float(js.mean()), cpu, seed))
        records.append(ExperimentRecord("js_vs_m", "JS", m, "improvement", float(np.mean(ls - js)), cpu, seed))
    return records


def ensemble_effect_trial(n: int, cfg: EnsembleEffectConfig, rng: RandomSource) -> dict[str, float]:
    """Test MSE of IR, RC, ERC and EIR on one draw of independent
    regression concepts."""
    data = gen_independent_concepts(
        IndependentConceptConfig(n + cfg.n_test, cfg.d, cfg.m, cfg.noise_sd, REGRESSION, rng.child("data")))
    train, test = data.subset(np.arange(n)), data.subset(np.arange(n, n + cfg.n_test))
    spec = LearnerSpec("linear", 0, IDENTITY, cfg.steps)
    tcfg = TrainConfig(cfg.learning_rate, cfg.l2_penalty, rng=rng.child("fit"))
    models = {
        "IR": fit_br(train, spec, tcfg),
        "RC": fit_chain(train, random_order(cfg.m, rng.child("rc-order")), spec, tcfg),
        "ERC": fit_ensemble_of_chains(train, cfg.n_members, spec, tcfg, rng.child("erc")),
        "EIR": fit_bagging(train, cfg.n_members, spec, tcfg, rng.child("eir")),
    }
    return {k: mse(test.labels, mdl.predict(test.features)) for k, mdl in models.items()}


def run_js_study(mode: str, grid, runs: int, seed: int = 0,
                 ensemble_cfg: EnsembleEffectConfig = EnsembleEffectConfig()) -> list[ExperimentRecord]:
    """``vs_n``: Gaussian bundles with m=5 at zero mean over a grid of n.
    ``vs_m``: shrinking single classifier outputs (n=30) over a grid of m.
    ``ensemble_effect``: MSE of IR/RC/ERC/EIR over a grid of training sizes."""
    grid = [int(g) for g in grid]
    if not grid:
        raise InvalidArgumentError("grid must be non-empty")
    if runs < 1:
        raise InvalidArgumentError("runs must be >= 1")
    if mode == "vs_n":
        return js_vs_n_records(grid, runs, seed)
    if mode == "vs_m":
        return _js_vs_m(grid, runs, seed)
    if mode in ("ensemble_effect", "ensemble"):
        records = []
        for n in grid:
            t0 = time.process_time()
            trials = [ensemble_effect_trial(n, ensemble_cfg, RandomSource(seed, f"ensemble/n-{n}/sim-{r}"))
                      for r in range(runs)]
            cpu = time.process_time() - t0
            for method in ("IR", "RC", "ERC", "EIR"):
                value = float(np.mean([t[method] for t in trials]))
                records.append(ExperimentRecord("ensemble_effect", method, n, "mse", value, cpu, seed))
        return records
    raise InvalidArgumentError(f"mode must be one of {JS_MODES}")


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    target_dataset: str = "target"
    source_datasets: tuple = ()
    steps: int = 50
    train_fraction: float = 0.6
    methods: tuple = ROSTER
    seed: int = 0
    learning_rate: float = 0.01
    l2_penalty: float = 0.05
    search_budget: int = 100
    search_steps: int = 5  # SGD steps of each target model fitted inside the map search
    proposal_sd: float = 0.1
    objective: str = "cv_loss"

    def __post_init__(self):
        unknown = set(self.methods) - set(ROSTER)
        if unknown:
            raise InvalidArgumentError(f"unknown methods {sorted(unknown)}; roster is {ROSTER}")
        if self.steps < 1:
            raise InvalidArgumentError("steps must be >= 1")
        if self.target_dataset in self.source_datasets:
            raise InvalidArgumentError("the target dataset cannot be its own source")
        names = {s.lower() for s in self.source_datasets} | {self.target_dataset.lower()}
        if {"birds", "music"} <= names:
            raise InvalidArgumentError("Birds and Music share audio and cannot be paired")


class _Stepper:
    """One method's training state; ``advance`` spends one step of budget."""

    model: Predictor

    def advance(self) -> None:
        raise NotImplementedError


class _SgdStepper(_Stepper):
    def __init__(self, train, model, cfg):
        self.train, self.model, self.cfg = train, model, cfg

    def advance(self):
        sgd_step(self.model, self.train, self.cfg)


class _EccStepper(_Stepper):
    def __init__(self, train, spec, cfg, rng):
        self.train, self.spec, self.cfg, self.rng = train, spec, cfg, rng
        self.model = None

    def advance(self):
        k = 0 if self.model is None else len(self.model.members)
        member = fit_chain_member(self.train, k, self.spec, self.cfg, self.rng)
        if self.model is None:
            self.model = EnsembleModel([member])
        else:
            self.model.add(member)


class _RlpStepper(_Stepper):
    def __init__(self, train, arch, cfg, search):
        self.args = (train, arch, cfg, search)
        self.learner = None

    def advance(self):
        if self.learner is None:
            self.learner = RlpLearner(*self.args)
        else:
            self.learner.trial()
        self.model = self.learner.model


class _TransferStepper(_Stepper):
    """Map search happens inside the first step; later steps only train
    the target model further."""

    def __init__(self, train, source, arch, cfg, search, search_steps):
        self.train, self.source, self.arch, self.cfg, self.search = train, source, arch, cfg, search
        self.search_spec = LearnerSpec("mlp", arch, LOGISTIC, search_steps)
        self.model = None

    def advance(self):
        if self.model is None:
            result = hill_climb_map(self.source, self.train, self.search, self.search_spec,
                                    self.cfg.with_rng(self.cfg.rng.child("search")))
            feats = make_source_features(self.source, result.map, self.train.features)
            self.widened = self.train.with_features(np.column_stack([self.train.features, feats]))
            target = init_mlp(self.widened.d, self.train.m, self.arch, LOGISTIC, self.cfg.rng.child("init"))
            self.model = TransferChainModel(self.source, result.map, target)
            self.model.search = result
        sgd_step(self.model.target, self.widened, self.cfg.with_rng(self.cfg.rng.child("sgd")))


class _EtcStepper(_Stepper):
    def __init__(self, train, source, cfg, rng):
        self.train, self.source, self.cfg, self.rng = train, source, cfg, rng
        self.spec = LearnerSpec("linear", 0, LOGISTIC, steps=1)
        self.model = None

    def advance(self):
        k = 0 if self.model is None else len(self.model.members)
        member = fit_etc_member(self.source, self.train, k, self.spec, self.cfg, self.rng)
        if self.model is None:
            self.model = EnsembleModel([member])
        else:
            self.model.add(member)


def _make_stepper(method: str, train: LabeledDataset, source: Predictor | None, cfg: BenchmarkConfig,
                  rng: RandomSource) -> _Stepper:
    tcfg = TrainConfig(cfg.learning_rate, cfg.l2_penalty, rng=rng.child("train"))
    search = SearchConfig(cfg.search_budget, cfg.proposal_sd, cfg.objective, rng=rng.child("search"))
    if method == "SLP":
        return _SgdStepper(train, init_linear(train.d, train.m, LOGISTIC, rng.child("init")),
                           tcfg.with_rng(rng.child("sgd")))
    if method.startswith("MLP"):
        return _SgdStepper(train, init_mlp(train.d, train.m, int(method[3]), LOGISTIC, rng.child("init")),
                           tcfg.with_rng(rng.child("sgd")))
    if method == "ECC":
        return _EccStepper(train, LearnerSpec("linear", 0, LOGISTIC, steps=1), tcfg, rng.child("orders"))
    if method.startswith("RLP"):
        return _RlpStepper(train, int(method[3]), tcfg, search)
    if source is None:
        raise InvalidArgumentError(f"{method} needs a source model")
    if method.startswith("TC"):
        return _TransferStepper(train, source, int(method[2]), tcfg, search, cfg.search_steps)
    if method == "ETC":
        return _EtcStepper(train, source, tcfg, rng.child("members"))
    raise InvalidArgumentError(f"unknown method {method!r}")


def run_benchmark(cfg: BenchmarkConfig, data: LabeledDataset, source: Predictor | None) -> list[ExperimentRecord]:
    """Advance every method step by step on a shuffled train split and
    record test exact match after each step together with the cumulative
    process time spent training (evaluation excluded).

    A method that fails stops its own series only.
    """
    train, test = split_train_test(data, cfg.train_fraction, RandomSource(cfg.seed, "benchmark/split"))
    eid = f"benchmark/{cfg.target_dataset}"
    records = []
    for method in cfg.methods:
        rng = RandomSource(cfg.seed, f"benchmark/{method}")
        cpu = 0.0
        try:
            stepper = _make_stepper(method, train, source, cfg, rng)
            for step in range(1, cfg.steps + 1):
                t0 = time.process_time()
                stepper.advance()
                cpu += time.process_time() - t0
                value = exact_match(test.labels, stepper.model.predict(test.features))
                records.append(ExperimentRecord(eid, method, step, "exact_match", value, cpu, cfg.seed))
        except (ChainforgeError, ArithmeticError, ValueError) as exc:
            log.error("%s aborted: %s", method, exc)
    return records
