"""scikit-learn compatible wrapper around the trainer."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .evaluation import recall_at_k
from .exceptions import ConfigurationError
from .pipeline import TrainConfig, train


class RankedListEmbedding(TransformerMixin, BaseEstimator):
    """Learn a unit-norm embedding of feature rows with a metric-learning loss.

    ``fit`` trains on labelled rows with episodic ``batch_classes`` x
    ``batch_per_class`` batches; ``transform`` maps rows to the learned
    ``n_components``-dimensional unit sphere. ``score`` is Recall@1 of the
    data against itself, so it measures retrieval quality on classes that
    need not have been seen during ``fit``.

    Parameters
    ----------
    loss : {"rll-simpler", "rll", "triplet", "npair", "lifted", "proxy-nca"}
    margin, alpha, t_n, t_p, lam : float
        Loss hyperparameters. ``rll-simpler`` only reads ``margin`` and
        ``t_n``; ``alpha=None`` means 1.2 for ``rll`` and 1.0 for ``lifted``.
    t1, t2 : float, optional
        When both are set, the negative temperature ramps linearly from
        ``t1`` to ``t2`` over ``max_iter`` iterations.
    random_state : int
        Seed for initialisation and batch sampling.
    """

    def __init__(
        self,
        loss="rll-simpler",
        margin=0.4,
        alpha=None,
        t_n=10.0,
        t_p=0.0,
        lam=0.5,
        t1=None,
        t2=None,
        n_components=8,
        architecture="linear",
        hidden_dim=64,
        batch_classes=8,
        batch_per_class=3,
        learning_rate=1e-2,
        momentum=0.9,
        weight_decay=2e-5,
        max_iter=2000,
        random_state=0,
    ):
        self.loss = loss
        self.margin = margin
        self.alpha = alpha
        self.t_n = t_n
        self.t_p = t_p
        self.lam = lam
        self.t1 = t1
        self.t2 = t2
        self.n_components = n_components
        self.architecture = architecture
        self.hidden_dim = hidden_dim
        self.batch_classes = batch_classes
        self.batch_per_class = batch_per_class
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.max_iter = max_iter
        self.random_state = random_state

    def _config(self):
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % 2**32)
        return TrainConfig(
            loss=self.loss,
            margin=self.margin,
            alpha=self.alpha,
            t_n=self.t_n,
            t_p=self.t_p,
            lam=self.lam,
            t1=self.t1,
            t2=self.t2,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            max_iter=self.max_iter,
            batch_classes=self.batch_classes,
            batch_per_class=self.batch_per_class,
            seed=seed,
            output_dim=self.n_components,
            architecture=self.architecture,
            hidden_dim=self.hidden_dim,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < self.batch_classes:
            raise ConfigurationError(
                f"batch_classes={self.batch_classes} exceeds the {self.classes_.size} classes in y"
            )
        config = self._config()
        result = train(Dataset(X, encoded), config)
        self.n_features_in_ = X.shape[1]
        self.model_ = result.model
        self.loss_history_ = result.loss_history
        self.temperature_history_ = result.temperature_history
        self.proxies_ = result.proxies
        self.config_ = config
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the estimator was fitted with {self.n_features_in_}")
        return self.model_.forward(X)

    def recall(self, X, y, ks=(1,)):
        """Recall@K report of ``X`` retrieved against itself (self-matches excluded)."""
        emb = self.transform(X)
        y = np.asarray(y)
        return recall_at_k(emb, y, emb, y, ks, exclude_self=True)

    def score(self, X, y):
        return self.recall(X, y, (1,))[1]
