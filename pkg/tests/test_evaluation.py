import json
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from plmatch.dataset import PartialLabelDataset, synth_clusters
from plmatch.evaluation import (
    MATCHING,
    PLKNN,
    MethodConfig,
    cross_validate,
    curves_csv,
    grid_cells,
    paired_t_test,
    pl_knn_disambiguate,
    pl_knn_predict,
    report_json,
    run_cell,
    standardize_features,
    stratified_folds,
    sweep,
    sweep_json,
    tally,
    transductive_accuracy,
)

from .conftest import random_dataset

SMALL = synth_clusters(2, 15, 3, 3.0, seed=7)


class TestPlKnn:
    def test_vote_counts_memberships(self):
        x = np.array([[1.0, 0.0], [1.0, 0.1], [1.0, -0.1], [0.0, 1.0]])
        ds = PartialLabelDataset(x, ((0, 1), (1,), (1, 2), (0,)), 3)
        assert pl_knn_predict(ds, np.array([1.0, 0.0]), k=3) == 1

    def test_ties_go_to_lower_label(self):
        x = np.array([[1.0, 0.0], [1.0, 0.1]])
        ds = PartialLabelDataset(x, ((2,), (1,)), 3)
        assert pl_knn_predict(ds, np.array([1.0, 0.05]), k=2) == 1

    def test_disambiguation_stays_in_candidates(self, rng):
        ds = random_dataset(rng, 30, 5, 3)
        labels = pl_knn_disambiguate(ds, 5)
        assert all(int(y) in s for y, s in zip(labels, ds.candidates))

    def test_disambiguation_excludes_self(self):
        x = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
        ds = PartialLabelDataset(x, ((0, 1), (1,), (0,)), 2)
        assert pl_knn_disambiguate(ds, 1).tolist() == [1, 1, 0]


def test_transductive_accuracy():
    assert transductive_accuracy(np.array([0, 1, 1, 2]), np.array([0, 1, 0, 2])) == 0.75


class TestFolds:
    def test_balanced_sizes(self):
        folds = stratified_folds(np.repeat(np.arange(4), 25), 10, 0)
        assert np.bincount(folds).tolist() == [10] * 10

    def test_class_spread(self):
        truth = np.repeat(np.arange(2), [30, 20])
        folds = stratified_folds(truth, 10, 3)
        for f in range(10):
            assert np.bincount(truth[folds == f], minlength=2).tolist() == [3, 2]

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(10, 80), q=st.integers(1, 5))
    def test_partition(self, seed, n, q):
        truth = np.random.default_rng(seed).integers(0, q, n)
        folds = stratified_folds(truth, 5, seed)
        assert sorted(set(folds.tolist())) == list(range(5))
        sizes = np.bincount(folds)
        assert sizes.max() - sizes.min() <= 1

    def test_deterministic(self):
        truth = np.arange(40) % 3
        assert np.array_equal(stratified_folds(truth, 4, 9), stratified_folds(truth, 4, 9))

    def test_small_class_warns(self, caplog):
        with caplog.at_level("WARNING", logger="plmatch.evaluation"):
            stratified_folds(np.array([0] * 10 + [1]), 5, 0)
        assert "class 1" in caplog.text

    def test_too_many_folds(self):
        with pytest.raises(ValueError):
            stratified_folds(np.zeros(3), 5, 0)


def test_standardize_uses_training_statistics():
    tx = np.array([[0.0, 5.0], [2.0, 5.0]])
    a, b = standardize_features(tx, np.array([[4.0, 6.0]]))
    assert a.tolist() == [[-1.0, 0.0], [1.0, 0.0]]
    assert b.tolist() == [[3.0, 1.0]]


class TestTTest:
    def test_identical_is_tie(self):
        c = paired_t_test([0.5, 0.6, 0.7], [0.5, 0.6, 0.7])
        assert (c.t_statistic, c.p_value, c.verdict) == (0.0, 1.0, "tie")
        assert c.to_dict()["t_statistic"] == 0.0

    def test_constant_shift_is_win(self):
        c = paired_t_test([0.6, 0.7, 0.8], [0.5, 0.6, 0.7])
        assert c.verdict == "win" and c.p_value == 0.0
        assert c.to_dict()["t_statistic"] is None

    def test_mirrored(self):
        a, b = [0.8, 0.82, 0.79, 0.85], [0.7, 0.71, 0.74, 0.69]
        assert paired_t_test(a, b).verdict == "win"
        assert paired_t_test(b, a).verdict == "loss"

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), n=st.integers(2, 15))
    def test_matches_reference(self, seed, n):
        rng = np.random.default_rng(seed)
        a, b = rng.random(n), rng.random(n)
        c = paired_t_test(a, b)
        d = (a - b).tolist()
        t_ref = statistics.mean(d) / (statistics.stdev(d) / math.sqrt(n))
        assert c.t_statistic == pytest.approx(t_ref, rel=1e-9)
        ref = stats.ttest_rel(a, b)
        assert c.p_value == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0])


class TestCrossValidate:
    def test_report_shape(self):
        rep = cross_validate(SMALL, MethodConfig(MATCHING), folds=3, seed=0)
        assert rep.folds == 3 and len(rep.inductive) == 3 and len(rep.transductive) == 3
        assert all(0 <= a <= 1 for a in rep.inductive)
        assert rep.inductive_std == pytest.approx(float(np.std(rep.inductive)))

    def test_baseline_runs(self):
        rep = cross_validate(SMALL, MethodConfig(PLKNN), folds=3, seed=0)
        assert rep.method == PLKNN and rep.transductive_mean == 1.0

    def test_needs_truth(self):
        ds = PartialLabelDataset(np.eye(3), ((0,), (1,), (0,)), 2)
        with pytest.raises(ValueError, match="truth"):
            cross_validate(ds)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            MethodConfig("svm")

    def test_json_repeatable(self):
        a = report_json(cross_validate(SMALL, folds=3, seed=2))
        b = report_json(cross_validate(SMALL, folds=3, seed=2))
        assert a == b
        assert json.loads(a)["schema"] == "plmatch-report"


class TestSweep:
    def test_grid_order_and_size(self):
        cells = grid_cells({})
        assert len(cells) == 21
        assert cells[0] == (0.1, 1, 0.5, 0.1) and cells[7] == (0.1, 2, 0.5, 0.1)

    def test_single_cell_matches_direct_run(self):
        cell = sweep(SMALL, {"p": [0.4], "r": [1]}, folds=3, seed=1)[0]
        direct = run_cell(SMALL, (0.4, 1, 0.5, 0.1), folds=3, seed=1)
        assert cell.to_dict() == direct.to_dict()

    def test_cell_independent_of_position(self):
        many = sweep(SMALL, {"p": [0.2, 0.4], "r": [1]}, folds=3, seed=1)
        alone = sweep(SMALL, {"p": [0.4], "r": [1]}, folds=3, seed=1)
        assert many[1].to_dict() == alone[0].to_dict()

    def test_outputs(self):
        cells = sweep(SMALL, {"p": [0.2], "r": [1]}, folds=3, seed=0)
        assert sum(tally(cells).values()) == 1
        csv = curves_csv(cells).splitlines()
        assert csv[0] == "p,mean_acc,std_acc,method,r,beta,alpha"
        assert len(csv) == 3
        doc = json.loads(sweep_json(cells))
        assert doc["cells"][0]["comparison"]["pairing"] == "per-fold"
