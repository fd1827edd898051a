"""Embedding-space primitives: L2 normalization and Euclidean distance matrices."""

import numpy as np

from .exceptions import DegenerateInputError, ShapeError

NORM_EPS = 1e-12


def as_float_array(x, ndim=None):
    """Return ``x`` as an array of at least double precision.

    Extended precision (``np.longdouble``) is preserved so the finite
    difference oracles can evaluate losses with less round-off.
    """
    x = np.asarray(x)
    dtype = np.result_type(x.dtype, np.float64)
    x = x.astype(dtype, copy=False)
    if ndim is not None and x.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got shape {x.shape}")
    return x


def l2_normalize(v):
    """Scale a vector (or each row of a matrix) to unit Euclidean norm.

    Raises
    ------
    DegenerateInputError
        If any vector has norm at or below ``NORM_EPS``.
    """
    v = as_float_array(v)
    if v.ndim not in (1, 2) or v.shape[-1] == 0:
        raise ShapeError(f"cannot normalize array of shape {v.shape}")
    norms = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if not np.all(np.isfinite(norms)):
        raise DegenerateInputError("non-finite entries in input")
    if np.any(norms <= NORM_EPS):
        raise DegenerateInputError(f"vector norm below {NORM_EPS:g}; cannot normalize")
    return v / norms


def pairwise_distances(points, others=None):
    """Euclidean distance matrix between the rows of ``points``.

    With ``others`` given, distances are between rows of ``points`` and rows
    of ``others`` (an N x M matrix). Distances come from explicit coordinate
    differences, so the self-distance matrix is exactly symmetric with an
    exactly zero diagonal.
    """
    x = as_float_array(points, ndim=2)
    y = x if others is None else as_float_array(others, ndim=2)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    dtype = np.result_type(x.dtype, y.dtype)
    dist = np.empty((x.shape[0], y.shape[0]), dtype=dtype)
    # bound the N x chunk x D temporary
    chunk = max(1, _CHUNK_ELEMENTS // max(1, y.shape[0] * x.shape[1]))
    for start in range(0, x.shape[0], chunk):
        diff = x[start:start + chunk, None, :] - y[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        np.maximum(sq, 0.0, out=sq)
        dist[start:start + chunk] = np.sqrt(sq)
    return dist


_CHUNK_ELEMENTS = 4_000_000
