import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from rankedlist import RankedListEmbedding
from rankedlist.data import SynthSpec, generate_synthetic
from rankedlist.exceptions import ConfigurationError, ParameterError


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(SynthSpec(n_train_classes=6, n_test_classes=4, per_class=8, input_dim=12, signal_dim=4))


def test_params_round_trip():
    est = RankedListEmbedding(margin=0.6, t_n=5.0, max_iter=10)
    params = est.get_params()
    assert params["margin"] == 0.6 and params["t_n"] == 5.0
    copy = clone(est)
    assert copy.get_params() == params
    copy.set_params(margin=0.2)
    assert copy.margin == 0.2 and est.margin == 0.6


def test_fit_transform(data):
    train, test = data
    est = RankedListEmbedding(n_components=4, batch_classes=4, max_iter=40, random_state=3)
    emb = est.fit(train.features, train.labels).transform(test.features)
    assert emb.shape == (len(test), 4)
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-12)
    assert est.n_features_in_ == 12
    assert est.loss_history_.shape == (40,)
    assert 0.0 <= est.score(test.features, test.labels) <= 1.0


def test_deterministic(data):
    train, _ = data
    kwargs = dict(n_components=4, batch_classes=4, max_iter=20, random_state=5)
    a = RankedListEmbedding(**kwargs).fit(train.features, train.labels)
    b = RankedListEmbedding(**kwargs).fit(train.features, train.labels)
    assert np.array_equal(a.model_.params["weight"], b.model_.params["weight"])


def test_string_labels(data):
    train, _ = data
    y = np.array([f"c{v}" for v in train.labels])
    est = RankedListEmbedding(n_components=3, batch_classes=3, max_iter=5).fit(train.features, y)
    assert est.classes_.tolist() == sorted(set(y.tolist()))


def test_pipeline_composition(data):
    train, test = data
    pipe = make_pipeline(StandardScaler(), RankedListEmbedding(n_components=4, batch_classes=4, max_iter=20))
    pipe.fit(train.features, train.labels)
    assert pipe.transform(test.features).shape == (len(test), 4)
    assert 0.0 <= pipe.score(test.features, test.labels) <= 1.0


def test_recall_report(data):
    train, test = data
    est = RankedListEmbedding(n_components=4, batch_classes=4, max_iter=10).fit(train.features, train.labels)
    report = est.recall(test.features, test.labels, ks=(1, 4))
    assert report.ks == [1, 4] and report[1] <= report[4]


def test_not_fitted():
    with pytest.raises(NotFittedError):
        RankedListEmbedding().transform(np.ones((2, 3)))


def test_feature_count_checked(data):
    train, _ = data
    est = RankedListEmbedding(n_components=3, batch_classes=3, max_iter=2).fit(train.features, train.labels)
    with pytest.raises(ValueError):
        est.transform(np.ones((2, 5)))


def test_invalid_settings(data):
    train, _ = data
    with pytest.raises(ConfigurationError):
        RankedListEmbedding(batch_classes=50).fit(train.features, train.labels)
    with pytest.raises(ParameterError):
        RankedListEmbedding(loss="hinge", batch_classes=3).fit(train.features, train.labels)
