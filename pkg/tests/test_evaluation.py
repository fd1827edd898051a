import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rankedlist.data import Dataset
from rankedlist.evaluation import RecallReport, evaluate_model, rank_gallery, recall_at_k
from rankedlist.exceptions import PreconditionError, RangeError, ShapeError
from rankedlist.pipeline import EmbeddingModel


class TestRankGallery:
    def test_single_item(self):
        assert rank_gallery([0.0, 1.0], [[3.0, 3.0]]).tolist() == [0]

    def test_coincident_first(self):
        gallery = np.array([[1.0, 0.0], [0.2, 0.3], [0.0, 1.0]])
        assert rank_gallery([0.2, 0.3], gallery)[0] == 1

    def test_colinear_order(self):
        gallery = np.array([[0.1, 0.0], [0.2, 0.0], [0.3, 0.0]])
        assert rank_gallery([0.0, 0.0], gallery).tolist() == [0, 1, 2]
        assert rank_gallery([0.0, 0.0], gallery[::-1]).tolist() == [2, 1, 0]

    def test_ties_by_index(self):
        gallery = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        assert rank_gallery([0.0, 0.0], gallery).tolist() == [0, 1, 2]

    def test_errors(self):
        with pytest.raises(ShapeError):
            rank_gallery([0.0, 0.0], [[1.0, 2.0, 3.0]])
        with pytest.raises(PreconditionError):
            rank_gallery([0.0, 0.0], np.zeros((0, 2)))


class TestRecall:
    def test_perfect(self):
        emb = np.array([[0.0], [0.1], [5.0], [5.1]])
        assert recall_at_k(emb, [0, 0, 1, 1], emb, [0, 0, 1, 1], [1], exclude_self=True)[1] == 1.0

    def test_zero(self):
        queries = np.array([[0.0], [10.0]])
        gallery = np.array([[0.1], [10.1], [9.9], [-0.1], [20.0], [-20.0]])
        report = recall_at_k(queries, [0, 1], gallery, [1, 0, 0, 1, 0, 1], [2])
        assert report[2] == 0.0

    def test_three_of_four(self):
        queries = np.array([[0.0], [1.0], [2.0], [3.0]])
        gallery = np.array([[0.0], [1.0], [2.0], [3.0], [100.0]])
        report = recall_at_k(queries, [0, 1, 2, 3], gallery, [0, 1, 2, 9, 3], [1])
        assert report[1] == 0.75
        assert report.query_count == 4

    def test_monotone_and_complete(self, rng):
        emb = rng.normal(size=(12, 3))
        labels = np.repeat(np.arange(4), 3)
        report = recall_at_k(emb, labels, emb, labels, range(1, 12), exclude_self=True)
        assert report.recall_values == sorted(report.recall_values)
        assert report[11] == 1.0

    def test_gallery_permutation(self, rng):
        emb = rng.normal(size=(10, 3))
        labels = np.repeat(np.arange(5), 2)
        perm = rng.permutation(10)
        a = recall_at_k(emb, labels, emb, labels, [1, 3])
        b = recall_at_k(emb, labels, emb[perm], labels[perm], [1, 3])
        assert a.recall_values == b.recall_values

    def test_k_too_large(self):
        emb = np.eye(3)
        with pytest.raises(RangeError):
            recall_at_k(emb, [0, 0, 1], emb, [0, 0, 1], [3], exclude_self=True)
        with pytest.raises(RangeError):
            recall_at_k(emb, [0, 0, 1], emb, [0, 0, 1], [0])

    def test_no_match(self):
        emb = np.eye(3)
        with pytest.raises(PreconditionError):
            recall_at_k(emb, [0, 0, 1], emb, [0, 0, 1], [1], exclude_self=True)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            recall_at_k(np.eye(2), [0, 1], np.eye(3), [0, 1, 2], [1])
        with pytest.raises(ShapeError):
            recall_at_k(np.eye(2), [0, 1], np.eye(2), [1, 0], [1], exclude_self=True)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 5), st.integers(2, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, c, k, dim, seed):
        rng = np.random.default_rng(seed)
        emb = rng.normal(size=(c * k, dim))
        labels = np.repeat(np.arange(c), k)
        ks = [1, 2, c * k - 1]
        report = recall_at_k(emb, labels, emb, labels, ks, exclude_self=True)
        for kk in ks:
            assert report[kk] == oracles.recall_at_k(emb.tolist(), labels.tolist(), kk)


class TestReport:
    def test_serialisation(self):
        report = RecallReport([1, 10], [0.953, 1.0], 200)
        doc = json.loads(report.to_json())
        assert doc == {"recall@1": 0.953, "recall@10": 1.0, "queries": 200}
        text = report.to_text()
        assert "recall@1 " in text and "0.9530" in text and "200" in text


class TestEvaluateModel:
    def test_orthonormal_axes(self):
        labels = np.repeat(np.arange(3), 2)
        ds = Dataset(np.eye(3)[labels] * rng_scale(labels), labels, "test")
        assert evaluate_model(EmbeddingModel.identity(3), ds)[1] == 1.0

    def test_one_point_per_class(self):
        ds = Dataset(np.eye(3), [0, 1, 2], "test")
        with pytest.raises(PreconditionError):
            evaluate_model(EmbeddingModel.identity(3), ds)

    def test_overlapping_classes(self):
        ds = Dataset(np.eye(3)[[0, 0, 1, 1]], [0, 0, 1, 1], "test")
        with pytest.raises(PreconditionError):
            evaluate_model(EmbeddingModel.identity(3), ds, train_labels=[1, 5])


def rng_scale(labels):
    return (1.0 + np.arange(labels.size))[:, None]
