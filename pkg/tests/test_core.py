import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainforge.core import (
    BlackBox,
    ConstantPredictor,
    CorruptArtifactError,
    InvalidArgumentError,
    LabeledDataset,
    ModelArtifact,
    RandomSource,
    UnsupportedFormatError,
    kfold_indices,
    load_model,
    read_csv_dataset,
    read_model,
    save_model,
    split_train_test,
    write_csv_dataset,
    write_model,
)
from chainforge.learners import IDENTITY, LinearModel, fit_forest, init_mlp
from chainforge.synth import CORNERS, ToyConfig, gen_toy


def roundtrip(model):
    return load_model(ModelArtifact.loads(save_model(model).dumps()))


class TestRandomSource:
    """Seeded, labelled streams."""

    def test_same_seed_and_label_reproduce(self):
        a = RandomSource(42, "fold-3/member-7").generator().random(1000)
        b = RandomSource(42, "fold-3/member-7").generator().random(1000)
        assert np.array_equal(a, b)

    def test_child_extends_path(self):
        assert RandomSource(1, "a").child("b") == RandomSource(1, "a/b")
        assert RandomSource(1).child(3) == RandomSource(1, "3")

    def test_distinct_labels_are_uncorrelated(self):
        a = RandomSource(5, "x").generator().standard_normal(20000)
        b = RandomSource(5, "y").generator().standard_normal(20000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.03
        assert not np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        assert RandomSource(1, "s").generator().random() != RandomSource(2, "s").generator().random()

    def test_generator_restarts(self):
        src = RandomSource(3, "s")
        assert src.generator().random() == src.generator().random()


class TestLabeledDataset:
    def test_shapes_and_default_names(self):
        data = LabeledDataset(np.zeros((3, 2)), np.ones((3, 1)))
        assert (data.n, data.d, data.m) == (3, 2, 1)
        assert data.feature_names == ("x1", "x2")
        assert data.label_names == ("y1",)

    def test_row_mismatch(self):
        with pytest.raises(InvalidArgumentError, match="row count"):
            LabeledDataset(np.zeros((3, 2)), np.zeros((4, 1)))

    def test_non_binary_classification_labels(self):
        with pytest.raises(InvalidArgumentError):
            LabeledDataset(np.zeros((2, 1)), np.array([[0.5], [1.0]]))

    def test_regression_labels_may_be_real(self):
        data = LabeledDataset(np.zeros((2, 1)), np.array([[0.5], [-3.0]]), task_kind="regression")
        assert data.labels[1, 0] == -3.0

    def test_non_finite_features(self):
        with pytest.raises(InvalidArgumentError, match="non-finite"):
            LabeledDataset(np.array([[np.nan]]), np.array([[1.0]]))

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            LabeledDataset(np.zeros((0, 2)), np.zeros((0, 1)))

    def test_arrays_are_read_only(self):
        data = LabeledDataset(np.zeros((2, 1)), np.zeros((2, 1)))
        with pytest.raises(ValueError):
            data.features[0, 0] = 1.0


class TestSplits:
    """Train/test splitting and k-fold index sets."""

    def _data(self, n):
        return LabeledDataset(np.arange(n, dtype=float)[:, None], np.zeros((n, 1)))

    def test_sixty_forty(self):
        train, test = split_train_test(self._data(10), 0.6, RandomSource(0))
        assert (train.n, test.n) == (6, 4)

    def test_minimal(self):
        train, test = split_train_test(self._data(2), 0.5, RandomSource(0))
        assert (train.n, test.n) == (1, 1)

    def test_deterministic_and_complete(self):
        data = self._data(25)
        a = split_train_test(data, 0.6, RandomSource(9, "split"))
        b = split_train_test(data, 0.6, RandomSource(9, "split"))
        assert np.array_equal(a[0].features, b[0].features)
        rows = np.concatenate([a[0].features[:, 0], a[1].features[:, 0]])
        assert Counter(rows.tolist()) == Counter(data.features[:, 0].tolist())

    @pytest.mark.parametrize("fraction", [0.01, 0.19])
    def test_empty_partition(self, fraction):
        with pytest.raises(InvalidArgumentError, match="empty partition"):
            split_train_test(self._data(5), fraction, RandomSource(0))

    def test_kfold_even(self):
        folds = kfold_indices(10, 5, RandomSource(0))
        assert [len(f) for f in folds] == [2] * 5

    def test_kfold_uneven(self):
        folds = kfold_indices(7, 5, RandomSource(0))
        assert sorted(len(f) for f in folds) == [1, 1, 1, 2, 2]

    def test_kfold_too_many(self):
        with pytest.raises(InvalidArgumentError):
            kfold_indices(3, 4, RandomSource(0))

    @given(st.integers(2, 60).flatmap(lambda n: st.tuples(st.just(n), st.integers(2, n))), st.integers(0, 2**32))
    @settings(max_examples=60, deadline=None)
    def test_kfold_partition_property(self, nk, seed):
        n, k = nk
        folds = kfold_indices(n, k, RandomSource(seed))
        assert len(folds) == k
        joined = np.concatenate(folds)
        assert sorted(joined.tolist()) == list(range(n))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1


class TestArtifacts:
    """Save/load round trips and failure modes."""

    def test_identity_linear(self):
        model = LinearModel(np.eye(2), np.zeros(2), IDENTITY)
        again = roundtrip(model)
        assert np.array_equal(again.predict([3.0, 4.0]), [3.0, 4.0])

    def test_bad_version(self):
        art = save_model(LinearModel(np.eye(2), np.zeros(2), IDENTITY))
        obj = art.as_dict()
        obj["format_version"] = 99
        with pytest.raises(UnsupportedFormatError):
            load_model(ModelArtifact.from_dict(obj))

    def test_unknown_kind(self):
        with pytest.raises(UnsupportedFormatError):
            load_model(ModelArtifact("hologram", 1, 1, {}))

    def test_dimension_mismatch(self):
        art = save_model(LinearModel(np.eye(2), np.zeros(2), IDENTITY))
        with pytest.raises(CorruptArtifactError):
            load_model(ModelArtifact("linear", 3, 2, art.payload))

    def test_inconsistent_payload(self):
        art = save_model(LinearModel(np.eye(2), np.zeros(2), IDENTITY))
        payload = json.loads(json.dumps(art.payload))
        payload["layers"][0]["b"] = [0.0]
        with pytest.raises(CorruptArtifactError):
            load_model(ModelArtifact("linear", 2, 2, payload))

    def test_garbage_text(self):
        with pytest.raises(CorruptArtifactError):
            ModelArtifact.loads("{not json")

    def test_forest_on_corners(self):
        data = gen_toy(ToyConfig("and", 40, 0.0, RandomSource(1)))
        forest = fit_forest(data, 10, 3, RandomSource(2))
        again = roundtrip(forest)
        assert np.array_equal(forest.predict(CORNERS), again.predict(CORNERS))
        assert np.array_equal(again.predict(CORNERS)[:, 0], [0, 0, 0, 1])

    @pytest.mark.parametrize("arch", [0, 1, 2])
    def test_mlp_exact_on_random_probes(self, arch):
        model = init_mlp(4, 3, arch, "logistic", RandomSource(arch))
        probes = RandomSource(7).generator().normal(0, 3, size=(200, 4))
        again = roundtrip(model)
        assert np.array_equal(model.predict_scores(probes), again.predict_scores(probes))
        assert np.array_equal(model.predict(probes), again.predict(probes))

    def test_file_round_trip(self, tmp_path):
        model = init_mlp(3, 2, 1, "identity", RandomSource(0))
        write_model(model, tmp_path / "m.model")
        again, art = read_model(tmp_path / "m.model")
        assert art.kind == "mlp"
        x = np.array([0.1, -2.0, 3.3])
        assert np.array_equal(model.predict(x), again.predict(x))

    def test_constant_predictor(self):
        again = roundtrip(ConstantPredictor(3, [1, 0]))
        assert np.array_equal(again.predict(np.zeros(3)), [1.0, 0.0])


class TestPredictorContract:
    def test_output_length(self):
        model = init_mlp(5, 3, 2, "logistic", RandomSource(0))
        assert model.predict(np.ones(5)).shape == (3,)
        assert model.predict(np.ones((4, 5))).shape == (4, 3)

    def test_length_mismatch(self):
        model = init_mlp(5, 3, 0, "logistic", RandomSource(0))
        with pytest.raises(InvalidArgumentError, match="length 5"):
            model.predict(np.ones(4))

    def test_pure(self):
        model = init_mlp(2, 1, 1, "logistic", RandomSource(0))
        x = np.array([0.3, 0.7])
        assert np.array_equal(model.predict_scores(x), model.predict_scores(x))


class TestBlackBox:
    """The opaque handle hides everything but dimensions and predict."""

    def test_only_predict(self):
        inner = LinearModel(np.eye(2), np.zeros(2), IDENTITY)
        box = BlackBox(inner)
        assert box.input_dim == 2 and box.output_dim == 2
        assert np.array_equal(box.predict([1.0, 2.0]), [1.0, 2.0])
        assert not hasattr(box, "W") and not hasattr(box, "layers") and not hasattr(box, "model")
        with pytest.raises(InvalidArgumentError):
            box.predict_scores([1.0, 2.0])

    def test_carries_artifact_unopened(self):
        inner = LinearModel(np.eye(2), np.ones(2), IDENTITY)
        art = save_model(inner)
        box = BlackBox(load_model(art), art)
        assert save_model(box) is art


class TestCsv:
    def test_round_trip(self, tmp_path):
        data = gen_toy(ToyConfig("xor", 20, 0.05, RandomSource(0)))
        write_csv_dataset(data, tmp_path / "x.csv")
        again = read_csv_dataset(tmp_path / "x.csv", 1)
        assert np.array_equal(again.features, data.features)
        assert np.array_equal(again.labels, data.labels)
        assert again.feature_names == ("x1", "x2") and again.label_names == ("y",)

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,y\n1,2,0\n1,oops,1\n")
        with pytest.raises(OSError, match=r"bad.csv:3"):
            read_csv_dataset(path, 1)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,y\n1,2\n")
        with pytest.raises(OSError, match=r":2: expected 3 fields"):
            read_csv_dataset(path, 1)

    def test_non_binary_label(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,y\n1,2\n")
        with pytest.raises(OSError, match="0 or 1"):
            read_csv_dataset(path, 1)
