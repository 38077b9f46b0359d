import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plmatch.dataset import (
    CorruptionSpec,
    DatasetError,
    PartialLabelDataset,
    corrupt,
    dumps_dataset,
    load_dataset,
    load_glass,
    save_dataset,
    synth_clusters,
)

from .conftest import random_dataset


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    p = write(tmp_path / "d.csv", "f0,f1,candidates,truth\n1,2,2,2\n3,4,0|1,0\n5,6,1,1\n")
    ds = load_dataset(p)
    assert ds.n_instances == 3
    assert ds.candidates == ((2,), (0, 1), (1,))
    assert ds.truth.tolist() == [2, 0, 1]
    assert ds.features.tolist() == [[1, 2], [3, 4], [5, 6]]


def test_empty_candidates_names_row(tmp_path):
    rows = "".join(f"{i},{i},0,0\n" for i in range(4)) + "9,9,,0\n"
    p = write(tmp_path / "d.csv", "f0,f1,candidates,truth\n" + rows)
    with pytest.raises(DatasetError, match="row 5"):
        load_dataset(p)


@pytest.mark.parametrize(
    "body, match",
    [
        ("1,2\n", "row 1: expected"),
        ("1,abc,0,0\n", "row 1: bad feature"),
        ("1,2,0,0\n3,4,1|0,2\n", "row 2: truth label 2"),
    ],
)
def test_malformed_rows(tmp_path, body, match):
    p = write(tmp_path / "d.csv", "f0,f1,candidates,truth\n" + body)
    with pytest.raises(DatasetError, match=match):
        load_dataset(p)


def test_label_id_beyond_declared_count(tmp_path):
    p = write(tmp_path / "d.csv", "f0,candidates,truth\n1,0,0\n2,3,3\n")
    write(tmp_path / "d.meta.json", '{"label_count": 3}')
    with pytest.raises(DatasetError, match="row 2"):
        load_dataset(p)


def test_partial_truth_column_rejected(tmp_path):
    p = write(tmp_path / "d.csv", "f0,candidates,truth\n1,0,0\n2,1,\n")
    with pytest.raises(DatasetError, match="row 2"):
        load_dataset(p)


def test_string_labels_dictionary_encoded(tmp_path):
    p = write(tmp_path / "d.csv", "f0,candidates,truth\n1,cat|dog,dog\n2,emu,emu\n")
    ds = load_dataset(p)
    assert ds.label_names == ("cat", "dog", "emu")
    assert ds.candidates == ((0, 1), (2,))
    save_dataset(ds, tmp_path / "e.csv")
    assert load_dataset(tmp_path / "e.csv") == ds


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 20), q=st.integers(2, 6))
def test_round_trip_identity(tmp_path_factory, seed, m, q):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, m, q, 3, d=2)
    ds = ds.with_features(ds.features * 10.0 ** rng.integers(-5, 5))
    path = tmp_path_factory.mktemp("rt") / "x.csv"
    save_dataset(ds, path)
    assert load_dataset(path) == ds


def test_round_trip_without_truth(tmp_path):
    ds = PartialLabelDataset(np.array([[0.1], [0.2]]), ((0, 1), (1,)), 3)
    save_dataset(ds, tmp_path / "x.csv")
    back = load_dataset(tmp_path / "x.csv")
    assert back == ds and back.truth is None and back.label_count == 3


def test_invariants_enforced():
    with pytest.raises(DatasetError):
        PartialLabelDataset(np.zeros((2, 1)), ((0,), ()), 2)
    with pytest.raises(DatasetError):
        PartialLabelDataset(np.zeros((1, 1)), ((2,),), 2)
    with pytest.raises(DatasetError):
        PartialLabelDataset(np.zeros((1, 1)), ((0,),), 1)
    with pytest.raises(DatasetError):
        PartialLabelDataset(np.zeros((1, 1)), ((0,),), 2, truth=np.array([1]))


def test_dataset_is_read_only():
    ds = synth_clusters(2, 3, 2, 1.0)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0


class TestCorrupt:
    base = synth_clusters(7, 10, 4, 3.0, seed=3)

    def test_zero_proportion_is_identity(self):
        assert corrupt(self.base, CorruptionSpec(0.0, 2, 9)) == self.base

    def test_full_proportion_forces_sizes(self):
        out = corrupt(self.base, CorruptionSpec(1.0, 2, 9))
        assert all(len(s) == 3 for s in out.candidates)
        assert all(int(y) in s for y, s in zip(out.truth, out.candidates))

    def test_deterministic(self):
        spec = CorruptionSpec(0.4, 3, 17)
        assert dumps_dataset(corrupt(self.base, spec)) == dumps_dataset(corrupt(self.base, spec))

    def test_seed_matters(self):
        a = corrupt(self.base, CorruptionSpec(0.4, 3, 1))
        b = corrupt(self.base, CorruptionSpec(0.4, 3, 2))
        assert a.candidates != b.candidates

    def test_too_many_false_labels(self):
        with pytest.raises(DatasetError, match="r=7"):
            corrupt(self.base, CorruptionSpec(0.5, 7, 0))

    def test_needs_supervised_input(self):
        out = corrupt(self.base, CorruptionSpec(0.5, 1, 0))
        with pytest.raises(DatasetError):
            corrupt(out, CorruptionSpec(0.5, 1, 0))

    @settings(max_examples=40, deadline=None)
    @given(p=st.floats(0, 1), r=st.integers(1, 6), seed=st.integers(0, 2**64 - 1))
    def test_properties(self, p, r, seed):
        out = corrupt(self.base, CorruptionSpec(p, r, seed))
        m = self.base.n_instances
        ambiguous = [s for s in out.candidates if len(s) > 1]
        assert len(ambiguous) == math.floor(p * m + 1e-9)
        assert all(len(s) == r + 1 for s in ambiguous)
        assert all(int(y) in s for y, s in zip(out.truth, out.candidates))

    @pytest.mark.parametrize("p, expected", [(0.1, 7), (0.3, 21), (0.7, 49)])
    def test_floor_count_on_exact_products(self, p, expected):
        out = corrupt(self.base, CorruptionSpec(p, 1, 0))
        assert sum(len(s) > 1 for s in out.candidates) == expected

    def test_more_corruption_never_adds_supervision(self):
        counts = [sum(len(s) > 1 for s in corrupt(self.base, CorruptionSpec(p / 10, 2, 5)).candidates)
                  for p in range(11)]
        assert counts == sorted(counts)


class TestSynth:
    def test_construction(self):
        ds = synth_clusters(3, 10, 4, 2.0, seed=0)
        assert ds.n_instances == 30 and ds.label_count == 3
        assert np.bincount(ds.truth).tolist() == [10, 10, 10]
        assert all(len(s) == 1 for s in ds.candidates)

    def test_deterministic(self):
        a = synth_clusters(3, 10, 4, 2.0, seed=5)
        b = synth_clusters(3, 10, 4, 2.0, seed=5)
        assert np.array_equal(a.features, b.features)

    @pytest.mark.parametrize("clusters, dim", [(3, 5), (6, 2)])
    def test_large_separation_one_nn_perfect(self, clusters, dim):
        ds = synth_clusters(clusters, 15, dim, 100.0, seed=2)
        x = ds.features
        dist = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(dist, np.inf)
        assert np.mean(ds.truth[dist.argmin(axis=1)] == ds.truth) == 1.0

    def test_more_clusters_than_labels(self):
        with pytest.raises(DatasetError):
            synth_clusters(4, 2, 2, 1.0, label_count=3)


def test_bundled_glass():
    g = load_glass()
    assert g.n_instances == 214 and g.n_features == 9 and g.label_count == 7
    assert np.bincount(g.truth, minlength=7).tolist() == [70, 76, 17, 0, 13, 9, 29]
    assert g.features[0].tolist() == [1.52101, 13.64, 4.49, 1.1, 71.78, 0.06, 8.75, 0.0, 0.0]
