"""Ranking-motivated baseline losses: triplet, N-pair-mc, Lifted Struct, Proxy-NCA.

Each is a literal evaluation of the textbook formula over a whole batch:
the triplet set is enumerated exhaustively, Lifted Struct keeps an unsquared
hinge, and Proxy-NCA's denominator sums over negative-class proxies only.
"""

from dataclasses import dataclass

import numpy as np

from .core import as_float_array, l2_normalize, pairwise_distances
from .exceptions import ConfigurationError, ParameterError, ShapeError


@dataclass
class ProxySet:
    """One learnable proxy vector per training class; row ``c`` is class ``c``."""

    proxies: np.ndarray

    def __post_init__(self):
        self.proxies = as_float_array(self.proxies, ndim=2)

    @classmethod
    def random(cls, n_classes, dim, rng):
        return cls(l2_normalize(rng.normal(size=(n_classes, dim))))

    @property
    def n_classes(self):
        return self.proxies.shape[0]


def _logsumexp(a, axis=None):
    a = np.asarray(a)
    peak = np.max(a, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    out = np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True)) + peak
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def triplet_indices(labels):
    """All (anchor, positive, negative) index triples of a batch, as three arrays."""
    labels = np.asarray(labels)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    i, j, k = np.nonzero(same[:, :, None] & ~np.eye(n, dtype=bool)[:, :, None] & ~same[:, None, :])
    return i, j, k


def _check_margin(margin):
    if not np.isfinite(margin) or margin < 0:
        raise ParameterError(f"margin must be a non-negative number, got {margin}")


def triplet_loss(embeddings, labels, margin):
    """Mean of ``[d_ap^2 + margin - d_an^2]_+`` over every valid triplet."""
    _check_margin(margin)
    x = as_float_array(embeddings, ndim=2)
    i, j, k = triplet_indices(labels)
    if i.size == 0:
        raise ConfigurationError("batch contains no valid triplet")
    sq = pairwise_distances(x) ** 2
    return np.mean(np.maximum(sq[i, j] + margin - sq[i, k], 0.0))


def npair_pairs(labels):
    """Pick one (anchor, positive) index pair per class: its first two batch members."""
    labels = np.asarray(labels)
    anchors, positives = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < 2:
            raise ConfigurationError(f"class {c} has fewer than two points; cannot form an N-pair")
        anchors.append(members[0])
        positives.append(members[1])
    return np.array(anchors), np.array(positives)


def npair_mc_loss(anchors, positives, classes=None):
    """Multi-class N-pair loss over ``N`` (anchor, positive) pairs from distinct classes.

    ``classes`` (optional) labels each pair and is only used to reject
    duplicates.
    """
    f = as_float_array(anchors, ndim=2)
    fp = as_float_array(positives, ndim=2)
    if f.shape != fp.shape:
        raise ShapeError(f"anchors {f.shape} and positives {fp.shape} differ in shape")
    if f.shape[0] < 2:
        raise ConfigurationError("N-pair loss needs pairs from at least two classes")
    if classes is not None and np.unique(classes).size != len(classes):
        raise ConfigurationError("N-pair loss needs exactly one pair per class")
    sim = f @ fp.T
    logits = sim - np.diag(sim)[:, None]
    np.fill_diagonal(logits, 0.0)
    # diagonal entry exp(0) = 1 supplies the "1 +" inside the log
    return np.mean(_logsumexp(logits, axis=1))


def lifted_positive_pairs(labels):
    labels = np.asarray(labels)
    i, j = np.nonzero(np.triu(labels[:, None] == labels[None, :], k=1))
    return i, j


def lifted_struct_loss(embeddings, labels, alpha):
    """Lifted structured loss with an unsquared hinge per positive pair."""
    x = as_float_array(embeddings, ndim=2)
    labels = np.asarray(labels)
    i, j = lifted_positive_pairs(labels)
    if i.size == 0:
        raise ConfigurationError("batch contains no positive pair")
    dist = pairwise_distances(x)
    neg = labels[:, None] != labels[None, :]
    if not np.all(neg[i].any(axis=1)):
        raise ConfigurationError("a positive pair has no negatives")
    logits = np.where(neg, alpha - dist, -np.inf)
    terms = dist[i, j] + _logsumexp(np.concatenate([logits[i], logits[j]], axis=1), axis=1)
    return np.sum(np.maximum(terms, 0.0)) / (2 * i.size)


def proxy_nca_loss(embeddings, labels, proxies):
    """Mean NCA loss of each anchor against its class proxy.

    The value can be negative: the positive proxy is not part of the
    denominator.
    """
    x = as_float_array(embeddings, ndim=2)
    p = proxies.proxies if isinstance(proxies, ProxySet) else as_float_array(proxies, ndim=2)
    labels = np.asarray(labels)
    if p.shape[1] != x.shape[1]:
        raise ShapeError(f"proxy dimension {p.shape[1]} differs from embedding dimension {x.shape[1]}")
    if p.shape[0] < 2:
        raise ConfigurationError("Proxy-NCA needs at least two classes")
    if labels.size and (labels.min() < 0 or labels.max() >= p.shape[0]):
        missing = sorted({int(c) for c in labels if not 0 <= c < p.shape[0]})
        raise ConfigurationError(f"no proxy for classes {missing}; {p.shape[0]} proxies given")
    dist = pairwise_distances(x, p)
    rows = np.arange(x.shape[0])
    pos = dist[rows, labels]
    neg = -dist.copy()
    neg[rows, labels] = -np.inf
    return np.mean(pos + _logsumexp(neg, axis=1))
