"""Ranked retrieval and Recall@K."""

import json
from dataclasses import dataclass

import numpy as np

from .core import as_float_array, pairwise_distances
from .exceptions import PreconditionError, RangeError, ShapeError


@dataclass
class RecallReport:
    ks: list
    recall_values: list
    query_count: int

    def as_dict(self):
        out = {f"recall@{k}": float(v) for k, v in zip(self.ks, self.recall_values)}
        out["queries"] = self.query_count
        return out

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        width = max(len(f"recall@{k}") for k in self.ks)
        lines = [f"{'metric':<{width}}  value", f"{'-' * width}  ------"]
        lines += [f"{'recall@' + str(k):<{width}}  {v:.4f}" for k, v in zip(self.ks, self.recall_values)]
        lines.append(f"{'queries':<{width}}  {self.query_count}")
        return "\n".join(lines) + "\n"

    def __getitem__(self, k):
        return self.recall_values[self.ks.index(k)]


def rank_gallery(query, gallery):
    """Gallery indices by ascending distance to ``query``; ties go to the lower index."""
    q = as_float_array(query, ndim=1)
    g = as_float_array(gallery, ndim=2)
    if g.shape[0] == 0:
        raise PreconditionError("gallery is empty")
    if g.shape[1] != q.size:
        raise ShapeError(f"query has dimension {q.size}, gallery {g.shape[1]}")
    return np.argsort(pairwise_distances(q[None, :], g)[0], kind="stable")


def recall_at_k(query_embeddings, query_labels, gallery_embeddings, gallery_labels, ks, exclude_self=False):
    """Fraction of queries with at least one same-class item among their top K.

    With ``exclude_self`` the queries and the gallery are the same collection
    and each query is removed from its own ranked list.
    """
    q = as_float_array(query_embeddings, ndim=2)
    g = as_float_array(gallery_embeddings, ndim=2)
    q_labels = np.asarray(query_labels)
    g_labels = np.asarray(gallery_labels)
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"query dimension {q.shape[1]} != gallery dimension {g.shape[1]}")
    if exclude_self and (q.shape[0] != g.shape[0] or not np.array_equal(q_labels, g_labels)):
        raise ShapeError("exclude_self requires the queries and the gallery to be the same collection")
    ks = sorted(int(k) for k in ks)
    available = g.shape[0] - (1 if exclude_self else 0)
    if not ks or ks[0] < 1:
        raise RangeError("K values must be positive")
    if ks[-1] > available:
        raise RangeError(f"K={ks[-1]} exceeds the gallery size {available}")

    order = np.argsort(pairwise_distances(q, g), axis=1, kind="stable")
    if exclude_self:
        keep = order != np.arange(q.shape[0])[:, None]
        order = order[keep].reshape(q.shape[0], available)
    hits = g_labels[order] == q_labels[:, None]
    has_match = hits.any(axis=1)
    if not has_match.all():
        missing = np.flatnonzero(~has_match)
        raise PreconditionError(
            f"{missing.size} queries have no same-class item in the gallery (first: query {missing[0]})"
        )
    first_hit = np.argmax(hits, axis=1)
    values = [float(np.mean(first_hit < k)) for k in ks]
    return RecallReport(ks, values, int(q.shape[0]))


def evaluate_model(model, dataset, ks=(1,), train_labels=None):
    """Embed ``dataset`` and score it against itself with self-exclusion.

    ``train_labels``, when given, must not share any class with the test set.
    """
    if train_labels is not None:
        shared = np.intersect1d(np.asarray(train_labels), dataset.labels)
        if shared.size:
            raise PreconditionError(f"test classes overlap training classes: {shared[:5].tolist()}")
    emb = model.forward(dataset.features)
    return recall_at_k(emb, dataset.labels, emb, dataset.labels, ks, exclude_self=True)
