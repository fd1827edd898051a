"""Hand-derived gradients of every loss, and a central finite-difference checker.

Ranked List Loss gradients follow a stop-gradient contract: within the
ranked list of query ``i`` the other embeddings, the mined sets and the
exponential weights are constants, so only row ``i`` receives gradient from
that list. The baselines are differentiated fully, including proxies.

Distance terms use a zero subgradient at ``d == 0`` for the baselines (a
symmetric difference quotient gives the same). For the Ranked List Loss a
hinge-active pair at zero distance is an error instead.
"""

from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .core import as_float_array, l2_normalize, pairwise_distances
from .exceptions import (
    ConfigurationError,
    NumericalInstabilityError,
    ParameterError,
    ShapeError,
    SingularPairError,
)
from .rll import RllParams, check_batch, mine_batch, simpler_params

LOSSES = ("rll", "rll-simpler", "triplet", "npair", "lifted", "proxy-nca")


def _distance_backward(coef, x, y, dist):
    """Gradient w.r.t. ``x`` of ``sum_ab coef_ab * ||x_a - y_b||``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(dist > 0, coef / dist, 0.0)
    return scaled.sum(axis=1)[:, None] * x - scaled @ y


# --- Ranked List Loss -------------------------------------------------------


def rll_batch_gradients(embeddings, labels, params):
    """Gradient of the batch Ranked List Loss w.r.t. each embedding row.

    Row ``i`` is ``1/N * [(1 - lam) * sum_j w_ij (f_i - f_j) / d_ij
    - lam * sum_k w_ik (f_i - f_k) / d_ik]`` over the mined positives ``j`` and
    negatives ``k`` of query ``i``, with weights frozen at their forward values.
    """
    x, labels = check_batch(embeddings, labels)
    mined = mine_batch(pairwise_distances(x), labels, params)
    active = mined.positive_mask | mined.negative_mask
    if np.any(mined.distances[active] == 0):
        i, j = np.argwhere(active & (mined.distances == 0))[0]
        raise SingularPairError(f"hinge-active pair ({i}, {j}) has zero distance")
    coef = (1.0 - params.lam) * mined.positive_weights - params.lam * mined.negative_weights
    return _distance_backward(coef, x, x, mined.distances) / x.shape[0]


def frozen_rll_loss(embeddings, labels, params):
    """Batch loss as a function of the query rows only, with mining frozen.

    The returned callable evaluates every ranked list against the base-point
    gallery, using the base-point mined sets and weights. Its derivative is
    what :func:`rll_batch_gradients` must reproduce.
    """
    base, labels = check_batch(embeddings, labels)
    mined = mine_batch(pairwise_distances(base), labels, params)
    boundary, alpha, lam = params.positive_boundary, params.alpha, params.lam

    def loss(points):
        dist = pairwise_distances(points, base)
        pos = np.where(mined.positive_mask, np.maximum(dist - boundary, 0.0), 0.0)
        neg = np.where(mined.negative_mask, np.maximum(alpha - dist, 0.0), 0.0)
        per_query = (1.0 - lam) * np.sum(mined.positive_weights * pos, axis=1) + lam * np.sum(
            mined.negative_weights * neg, axis=1
        )
        return np.mean(per_query)

    return loss


def rll_kink_rows(embeddings, labels, params, step):
    """Rows whose mined pairs sit within ``10 * step`` of a hinge boundary."""
    x, labels = check_batch(embeddings, labels)
    mined = mine_batch(pairwise_distances(x), labels, params)
    width = 10 * step
    near_pos = mined.positive_mask & (np.abs(mined.distances - params.positive_boundary) < width)
    near_neg = mined.negative_mask & (np.abs(mined.distances - params.alpha) < width)
    return (near_pos | near_neg).any(axis=1)


# --- Baselines --------------------------------------------------------------


def triplet_gradients(embeddings, labels, margin):
    x = as_float_array(embeddings, ndim=2)
    i, j, k = baselines.triplet_indices(labels)
    if i.size == 0:
        raise ConfigurationError("batch contains no valid triplet")
    sq = pairwise_distances(x) ** 2
    active = sq[i, j] + margin - sq[i, k] > 0
    i, j, k = i[active], j[active], k[active]
    grad = np.zeros_like(x)
    np.add.at(grad, i, 2.0 * (x[k] - x[j]))
    np.add.at(grad, j, 2.0 * (x[j] - x[i]))
    np.add.at(grad, k, 2.0 * (x[i] - x[k]))
    return grad / active.size


def npair_mc_gradients(anchors, positives):
    """Gradients w.r.t. anchors and positives of :func:`baselines.npair_mc_loss`."""
    f = as_float_array(anchors, ndim=2)
    fp = as_float_array(positives, ndim=2)
    n = f.shape[0]
    sim = f @ fp.T
    logits = sim - np.diag(sim)[:, None]
    np.fill_diagonal(logits, 0.0)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    np.fill_diagonal(probs, 0.0)
    mass = probs.sum(axis=1)[:, None]
    grad_f = (probs @ fp - mass * fp) / n
    grad_fp = (probs.T @ f - mass * f) / n
    return grad_f, grad_fp


def npair_batch_gradients(embeddings, labels):
    x = as_float_array(embeddings, ndim=2)
    a, p = baselines.npair_pairs(labels)
    grad_f, grad_fp = npair_mc_gradients(x[a], x[p])
    grad = np.zeros_like(x)
    grad[a] += grad_f
    grad[p] += grad_fp
    return grad


def npair_batch_loss(embeddings, labels):
    x = as_float_array(embeddings, ndim=2)
    a, p = baselines.npair_pairs(labels)
    return baselines.npair_mc_loss(x[a], x[p])


def _lifted_terms(x, labels, alpha):
    labels = np.asarray(labels)
    i, j = baselines.lifted_positive_pairs(labels)
    if i.size == 0:
        raise ConfigurationError("batch contains no positive pair")
    dist = pairwise_distances(x)
    neg = labels[:, None] != labels[None, :]
    logits = np.concatenate(
        [np.where(neg[i], alpha - dist[i], -np.inf), np.where(neg[j], alpha - dist[j], -np.inf)], axis=1
    )
    peak = logits.max(axis=1, keepdims=True)
    expd = np.exp(logits - peak)
    total = expd.sum(axis=1, keepdims=True)
    hinge_arg = dist[i, j] + (np.log(total) + peak)[:, 0]
    return i, j, dist, hinge_arg, expd / total


def lifted_struct_gradients(embeddings, labels, alpha):
    x = as_float_array(embeddings, ndim=2)
    n = x.shape[0]
    i, j, dist, hinge_arg, soft = _lifted_terms(x, labels, alpha)
    on = (hinge_arg > 0).astype(x.dtype)[:, None]
    # coef[a, b]: derivative of the summed hinges w.r.t. d_ab
    coef = np.zeros((n, n), dtype=x.dtype)
    np.add.at(coef, (i, j), on[:, 0])
    np.add.at(coef, i, -on * soft[:, :n])
    np.add.at(coef, j, -on * soft[:, n:])
    coef = coef + coef.T
    return _distance_backward(coef, x, x, dist) / (2 * i.size)


def proxy_nca_gradients(embeddings, labels, proxies):
    """Gradients of :func:`baselines.proxy_nca_loss` w.r.t. embeddings and proxies."""
    x = as_float_array(embeddings, ndim=2)
    p = proxies.proxies if isinstance(proxies, baselines.ProxySet) else as_float_array(proxies, ndim=2)
    labels = np.asarray(labels)
    n = x.shape[0]
    rows = np.arange(n)
    dist = pairwise_distances(x, p)
    logits = -dist.copy()
    logits[rows, labels] = -np.inf
    soft = np.exp(logits - logits.max(axis=1, keepdims=True))
    soft /= soft.sum(axis=1, keepdims=True)
    coef = -soft
    coef[rows, labels] = 1.0
    grad_x = _distance_backward(coef, x, p, dist) / n
    grad_p = _distance_backward(coef.T, p, x, dist.T) / n
    return grad_x, grad_p


def baseline_gradients(loss_id, embeddings, labels, margin=None, alpha=None, proxies=None):
    """Dispatch to the gradient of a baseline loss.

    Returns ``(grad_embeddings, grad_proxies)``; the second item is ``None``
    unless ``loss_id == "proxy-nca"``.
    """
    if loss_id == "triplet":
        return triplet_gradients(embeddings, labels, margin), None
    if loss_id == "npair":
        return npair_batch_gradients(embeddings, labels), None
    if loss_id == "lifted":
        return lifted_struct_gradients(embeddings, labels, alpha), None
    if loss_id == "proxy-nca":
        return proxy_nca_gradients(embeddings, labels, proxies)
    raise ParameterError(f"unknown baseline loss {loss_id!r}")


def baseline_kink_rows(loss_id, embeddings, labels, step, margin=None, alpha=None, proxies=None):
    """Rows of the (embeddings, proxies) stack whose perturbation can cross a kink."""
    x = as_float_array(embeddings, ndim=2)
    n = x.shape[0]
    width = 10 * step
    if loss_id == "triplet":
        i, j, k = baselines.triplet_indices(labels)
        d = pairwise_distances(x)
        arg = d[i, j] ** 2 + margin - d[i, k] ** 2
        # one coordinate step of size h moves the argument by at most 2h(d_ij + d_ik)
        near = np.abs(arg) < width * 2 * (d[i, j] + d[i, k])
        rows = np.zeros(n, dtype=bool)
        rows[np.concatenate([i[near], j[near], k[near]])] = True
        return rows
    if loss_id == "lifted":
        i, j, dist, hinge_arg, _ = _lifted_terms(x, labels, alpha)
        rows = np.zeros(n, dtype=bool)
        near = np.abs(hinge_arg) < 2 * width
        labels = np.asarray(labels)
        for a, b in zip(i[near], j[near]):
            rows |= labels != labels[a]
            rows[[a, b]] = True
        tiny = (dist[i, j] > 0) & (dist[i, j] < width)
        rows[i[tiny]] = rows[j[tiny]] = True
        return rows
    if loss_id == "proxy-nca":
        p = proxies.proxies if isinstance(proxies, baselines.ProxySet) else np.asarray(proxies)
        d = pairwise_distances(x, p)
        tiny = (d > 0) & (d < width)
        return np.concatenate([tiny.any(axis=1), tiny.any(axis=0)])
    return np.zeros(n, dtype=bool)


# --- finite differences -----------------------------------------------------


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_coordinate_errors: np.ndarray = field(repr=False)
    tolerance: float
    worst_index: tuple = None
    excluded: int = 0

    @property
    def passed(self):
        return bool(self.max_relative_error <= self.tolerance)


def finite_difference_gradient(loss_fn, point, step=1e-6, mask=None):
    """Central-difference gradient of ``loss_fn`` at ``point``.

    Evaluation happens in extended precision, which keeps the round-off of the
    difference quotient far below the tolerances used for checking. Entries
    where ``mask`` is False are skipped and left at zero.
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    base = np.array(point, dtype=np.longdouble)
    grad = np.zeros(base.shape, dtype=np.longdouble)
    h = np.longdouble(step)
    for idx in np.ndindex(base.shape):
        if mask is not None and not mask[idx]:
            continue
        orig = base[idx]
        base[idx] = orig + h
        f_plus = loss_fn(base)
        base[idx] = orig - h
        f_minus = loss_fn(base)
        base[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalInstabilityError(f"non-finite loss when perturbing coordinate {idx}")
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def finite_difference_check(loss_fn, point, analytic, step=1e-6, tolerance=1e-5, exclude_rows=None):
    """Compare an analytic gradient with central differences, coordinate by coordinate.

    Relative error is ``|fd - an| / max(1e-8, |fd| + |an|)``. Rows flagged in
    ``exclude_rows`` (kink-adjacent) are not compared.
    """
    analytic = np.asarray(analytic)
    if np.shape(point) != analytic.shape:
        raise ShapeError(f"analytic gradient shape {analytic.shape} != point shape {np.shape(point)}")
    mask = np.ones(analytic.shape, dtype=bool)
    if exclude_rows is not None:
        mask[np.asarray(exclude_rows, dtype=bool)] = False
    fd = finite_difference_gradient(loss_fn, point, step, mask)
    an = analytic.astype(np.longdouble)
    err = np.abs(fd - an) / np.maximum(1e-8, np.abs(fd) + np.abs(an))
    err = np.where(mask, err, 0.0).astype(np.float64)
    worst = np.unravel_index(np.argmax(err), err.shape) if err.size else None
    return GradCheckReport(
        max_relative_error=float(err.max()) if err.size else 0.0,
        per_coordinate_errors=err,
        tolerance=tolerance,
        worst_index=tuple(int(v) for v in worst) if worst is not None else None,
        excluded=int((~mask).sum()),
    )


# --- randomized protocol ----------------------------------------------------


@dataclass
class GradCheckTrial:
    trial: int
    loss_id: str
    n_classes: int
    per_class: int
    dim: int
    params: dict
    report: GradCheckReport


def random_trial_batch(rng, n_classes, per_class, dim):
    labels = np.repeat(np.arange(n_classes), per_class)
    embeddings = l2_normalize(rng.normal(size=(labels.size, dim)))
    return embeddings, labels


def check_loss_once(loss_id, embeddings, labels, step=1e-6, tolerance=1e-5, params=None, rng=None):
    """Run one gradient check of ``loss_id`` at a given batch.

    ``params`` holds the loss hyperparameters (``RllParams`` for the Ranked
    List Loss, a dict with ``margin`` / ``alpha`` / ``proxies`` otherwise).
    """
    params = params or {}
    if loss_id in ("rll", "rll-simpler"):
        analytic = rll_batch_gradients(embeddings, labels, params)
        loss_fn = frozen_rll_loss(embeddings, labels, params)
        exclude = rll_kink_rows(embeddings, labels, params, step)
        return finite_difference_check(loss_fn, embeddings, analytic, step, tolerance, exclude)
    margin, alpha, proxies = params.get("margin"), params.get("alpha"), params.get("proxies")
    grad_x, grad_p = baseline_gradients(loss_id, embeddings, labels, margin, alpha, proxies)
    exclude = baseline_kink_rows(loss_id, embeddings, labels, step, margin, alpha, proxies)
    if loss_id == "proxy-nca":
        n = embeddings.shape[0]
        point = np.vstack([embeddings, proxies])
        analytic = np.vstack([grad_x, grad_p])

        def loss_fn(z):
            return baselines.proxy_nca_loss(z[:n], labels, z[n:])

        return finite_difference_check(loss_fn, point, analytic, step, tolerance, exclude)
    loss_fn = {
        "triplet": lambda z: baselines.triplet_loss(z, labels, margin),
        "npair": lambda z: npair_batch_loss(z, labels),
        "lifted": lambda z: baselines.lifted_struct_loss(z, labels, alpha),
    }[loss_id]
    return finite_difference_check(loss_fn, embeddings, grad_x, step, tolerance, exclude)


def _random_params(loss_id, rng, n_classes, dim):
    if loss_id == "rll":
        alpha = rng.uniform(0.6, 1.6)
        return RllParams(
            alpha=alpha,
            margin=rng.uniform(0.0, alpha),
            t_n=rng.uniform(0.0, 20.0),
            t_p=rng.uniform(-10.0, 10.0),
            lam=rng.uniform(0.0, 1.0),
        )
    if loss_id == "rll-simpler":
        return simpler_params(rng.uniform(0.0, 1.2), rng.uniform(0.0, 20.0))
    if loss_id == "triplet":
        return {"margin": rng.uniform(0.0, 1.0)}
    if loss_id == "lifted":
        return {"alpha": rng.uniform(0.5, 1.5)}
    if loss_id == "proxy-nca":
        return {"proxies": l2_normalize(rng.normal(size=(n_classes, dim)))}
    return {}


def run_gradcheck(loss_id, trials=50, tolerance=1e-5, seed=0, step=1e-6):
    """Gradient-check ``loss_id`` on ``trials`` random batches and parameters.

    Batches have 2-4 classes with 2-3 points each in 2-6 dimensions, so
    every trial stays within N <= 12.
    """
    if loss_id not in LOSSES:
        raise ParameterError(f"unknown loss {loss_id!r}; choose from {', '.join(LOSSES)}")
    rng = np.random.default_rng(seed)
    results = []
    for t in range(trials):
        n_classes = int(rng.integers(2, 5))
        per_class = int(rng.integers(2, 4))
        dim = int(rng.integers(2, 7))
        embeddings, labels = random_trial_batch(rng, n_classes, per_class, dim)
        params = _random_params(loss_id, rng, n_classes, dim)
        report = check_loss_once(loss_id, embeddings, labels, step, tolerance, params)
        shown = {k: v for k, v in (vars(params) if isinstance(params, RllParams) else params).items() if k != "proxies"}
        results.append(GradCheckTrial(t, loss_id, n_classes, per_class, dim, shown, report))
    return results
