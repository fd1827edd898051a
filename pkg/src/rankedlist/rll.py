"""Ranked List Loss: mining, weighting and per-query / per-batch loss values.

Every point of a mini-batch acts as a query against the rest of the batch.
For query ``i`` the non-trivial positives are same-class points farther than
``alpha - margin`` and the non-trivial negatives are other-class points
closer than ``alpha``. Each mined set gets its own exponential weighting,
normalised to sum to one, and the query loss is the ``lam``-weighted
combination of the two weighted hinge sums.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import as_float_array, pairwise_distances
from .exceptions import ConfigurationError, EmptySetError, ParameterError, RangeError, ShapeError


@dataclass(frozen=True)
class RllParams:
    """Loss hyperparameters.

    Parameters
    ----------
    alpha : float
        Negative boundary; negatives closer than this are mined.
    margin : float
        Gap between the positive boundary ``alpha - margin`` and ``alpha``.
    t_n : float
        Temperature of the negative weighting (0 = uniform).
    t_p : float
        Temperature of the positive weighting. Positive values emphasise far
        positives, negative values near ones.
    lam : float
        Weight of the negative term; the positive term gets ``1 - lam``.
    """

    alpha: float
    margin: float
    t_n: float = 0.0
    t_p: float = 0.0
    lam: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "margin", "t_n", "t_p", "lam"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if not 0.0 <= self.margin <= self.alpha:
            raise ParameterError(f"need 0 <= margin <= alpha, got margin={self.margin}, alpha={self.alpha}")
        if self.t_n < 0:
            raise ParameterError(f"t_n must be non-negative, got {self.t_n}")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError(f"lam must lie in [0, 1], got {self.lam}")

    @property
    def positive_boundary(self):
        """Class hypersphere diameter ``alpha - margin``."""
        return self.alpha - self.margin


@dataclass(frozen=True)
class MinedSets:
    query_index: int
    positive_indices: np.ndarray
    negative_indices: np.ndarray
    positive_distances: np.ndarray
    negative_distances: np.ndarray


@dataclass(frozen=True)
class QueryLossBreakdown:
    loss_p: float
    loss_n: float
    loss_total: float
    mined_positive_count: int
    mined_negative_count: int


@dataclass(frozen=True)
class TemperatureSchedule:
    """Linear ramp of the negative temperature from ``t1`` to ``t2``."""

    t1: float
    t2: float
    max_iter: int

    def __post_init__(self):
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError(f"max_iter must be a positive integer, got {self.max_iter}")

    def __call__(self, cur_iter):
        return schedule_temperature(self, cur_iter)


def simpler_params(margin, t_n):
    """Two-parameter variant: ``alpha = 1 + margin / 2`` and ``t_p = 0``.

    On the unit sphere this puts the positive and negative boundaries
    symmetrically around distance 1.
    """
    if not 0.0 <= margin <= 2.0:
        raise ParameterError(f"margin must lie in [0, 2], got {margin}")
    return RllParams(alpha=1.0 + margin / 2.0, margin=margin, t_n=t_n, t_p=0.0, lam=0.5)


def schedule_temperature(schedule, cur_iter):
    if not 0 <= cur_iter < schedule.max_iter:
        raise RangeError(f"cur_iter must lie in [0, {schedule.max_iter}), got {cur_iter}")
    return schedule.t1 - cur_iter * (schedule.t1 - schedule.t2) / schedule.max_iter


def margin_pair_loss(d, same_class, params):
    if d < 0:
        raise ParameterError(f"distance must be non-negative, got {d}")
    if same_class:
        return max(d - params.positive_boundary, 0.0)
    return max(params.alpha - d, 0.0)


def _check_labels(dist, labels):
    labels = np.asarray(labels)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ShapeError(f"distance matrix must be square, got {dist.shape}")
    if labels.shape != (dist.shape[0],):
        raise ShapeError(f"{labels.shape[0] if labels.ndim else 0} labels for {dist.shape[0]} points")
    return labels


def mine_sets(query_index, distances, labels, params):
    dist = as_float_array(distances)
    labels = _check_labels(dist, labels)
    n = dist.shape[0]
    if not 0 <= query_index < n:
        raise RangeError(f"query_index {query_index} out of range for {n} points")
    row = dist[query_index]
    same = labels == labels[query_index]
    same[query_index] = False
    pos = np.flatnonzero(same & (row > params.positive_boundary))
    neg = np.flatnonzero((labels != labels[query_index]) & (row < params.alpha))
    return MinedSets(query_index, pos, neg, row[pos], row[neg])


def _softmax(logits):
    shifted = np.exp(logits - np.max(logits))
    return shifted / np.sum(shifted)


def weight_negatives(negative_distances, params):
    """Normalised weights ``exp(t_n * (alpha - d))`` over a mined negative set."""
    d = as_float_array(negative_distances, ndim=1)
    if d.size == 0:
        raise EmptySetError("no mined negatives to weight")
    return _softmax(params.t_n * (params.alpha - d))


def weight_positives(positive_distances, params):
    """Normalised weights ``exp(t_p * (d - (alpha - margin)))`` over mined positives."""
    d = as_float_array(positive_distances, ndim=1)
    if d.size == 0:
        raise EmptySetError("no mined positives to weight")
    return _softmax(params.t_p * (d - params.positive_boundary))


def loss_positive_set(mined, params):
    d = mined.positive_distances
    if len(d) == 0:
        return 0.0
    hinge = np.maximum(d - params.positive_boundary, 0.0)
    return float(np.sum(weight_positives(d, params) * hinge))


def loss_negative_set(mined, params):
    d = mined.negative_distances
    if len(d) == 0:
        return 0.0
    hinge = np.maximum(params.alpha - d, 0.0)
    return float(np.sum(weight_negatives(d, params) * hinge))


def rll_query_loss(query_index, distances, labels, params):
    mined = mine_sets(query_index, distances, labels, params)
    loss_p = loss_positive_set(mined, params)
    loss_n = loss_negative_set(mined, params)
    return QueryLossBreakdown(
        loss_p=loss_p,
        loss_n=loss_n,
        loss_total=(1.0 - params.lam) * loss_p + params.lam * loss_n,
        mined_positive_count=len(mined.positive_indices),
        mined_negative_count=len(mined.negative_indices),
    )


@dataclass
class BatchMining:
    """Mined masks and normalised weights for every query of a batch at once.

    Row ``i`` of each matrix describes the ranked list of query ``i``;
    weights are zero outside the mined sets and each non-empty row sums
    to one.
    """

    distances: np.ndarray
    positive_mask: np.ndarray
    negative_mask: np.ndarray
    positive_weights: np.ndarray
    negative_weights: np.ndarray
    positive_hinge: np.ndarray = field(repr=False)
    negative_hinge: np.ndarray = field(repr=False)


def _masked_row_softmax(logits, mask):
    masked = np.where(mask, logits, -np.inf)
    row_max = np.max(masked, axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    w = np.where(mask, np.exp(np.where(mask, logits - row_max, 0.0)), 0.0)
    total = np.sum(w, axis=1, keepdims=True)
    return w / np.where(total > 0, total, 1.0)


def mine_batch(distances, labels, params):
    dist = as_float_array(distances)
    labels = _check_labels(dist, labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    different = labels[:, None] != labels[None, :]
    pos_mask = same & (dist > params.positive_boundary)
    neg_mask = different & (dist < params.alpha)
    pos_hinge = np.where(pos_mask, dist - params.positive_boundary, 0.0)
    neg_hinge = np.where(neg_mask, params.alpha - dist, 0.0)
    return BatchMining(
        distances=dist,
        positive_mask=pos_mask,
        negative_mask=neg_mask,
        positive_weights=_masked_row_softmax(params.t_p * (dist - params.positive_boundary), pos_mask),
        negative_weights=_masked_row_softmax(params.t_n * (params.alpha - dist), neg_mask),
        positive_hinge=pos_hinge,
        negative_hinge=neg_hinge,
    )


def check_batch(embeddings, labels):
    x = as_float_array(embeddings, ndim=2)
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise ShapeError(f"{labels.size} labels for {x.shape[0]} embeddings")
    if x.shape[0] < 2:
        raise ConfigurationError("a batch needs at least two points")
    if np.unique(labels).size < 2:
        raise ConfigurationError("a batch needs at least two classes; a single class has no negatives")
    return x, labels


def rll_batch_loss(embeddings, labels, params):
    """Mean Ranked List Loss over all queries of a batch.

    Returns
    -------
    loss : float
    breakdowns : list of QueryLossBreakdown
        One entry per point, in batch order.
    """
    x, labels = check_batch(embeddings, labels)
    mined = mine_batch(pairwise_distances(x), labels, params)
    loss_p = np.sum(mined.positive_weights * mined.positive_hinge, axis=1)
    loss_n = np.sum(mined.negative_weights * mined.negative_hinge, axis=1)
    totals = (1.0 - params.lam) * loss_p + params.lam * loss_n
    n_pos = mined.positive_mask.sum(axis=1)
    n_neg = mined.negative_mask.sum(axis=1)
    breakdowns = [
        QueryLossBreakdown(float(lp), float(ln), float(t), int(cp), int(cn))
        for lp, ln, t, cp, cn in zip(loss_p, loss_n, totals, n_pos, n_neg)
    ]
    return np.mean(totals), breakdowns
