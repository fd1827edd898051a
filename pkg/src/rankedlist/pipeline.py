"""Episodic batch sampling, the embedding model, SGD with momentum and the training loop."""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines, gradients
from .core import l2_normalize
from .exceptions import DataError, DegenerateInputError, ParameterError, RankedListError, ShapeError, TrainingError
from .rll import RllParams, TemperatureSchedule, rll_batch_loss, simpler_params

CHECKPOINT_FORMAT = "rankedlist-checkpoint"
CHECKPOINT_VERSION = 1
ARCHITECTURES = ("linear", "mlp")


@dataclass
class MiniBatch:
    """``n_classes`` x ``per_class`` points, grouped by class in draw order."""

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    classes: np.ndarray
    per_class: int

    def __len__(self):
        return self.labels.size


def sample_batch(dataset, n_classes, per_class, rng):
    """Draw ``n_classes`` classes uniformly without replacement, then ``per_class`` points each.

    Points are drawn without replacement, falling back to sampling with
    replacement for classes smaller than ``per_class``.
    """
    classes = dataset.classes
    if classes.size < n_classes:
        raise DataError(f"dataset has {classes.size} classes, batch needs {n_classes}")
    if n_classes < 2 or per_class < 1:
        raise ParameterError("a batch needs at least 2 classes and 1 point per class")
    chosen = rng.choice(classes, size=n_classes, replace=False)
    picks = []
    for c in chosen:
        members = np.flatnonzero(dataset.labels == c)
        picks.append(rng.choice(members, size=per_class, replace=members.size < per_class))
    idx = np.concatenate(picks)
    return MiniBatch(dataset.features[idx], dataset.labels[idx], idx, chosen, per_class)


class EmbeddingModel:
    """Linear map or one-hidden-layer tanh network followed by L2 normalisation.

    The linear architecture has no offset, so scaling an input by a positive
    constant leaves its embedding unchanged.
    """

    def __init__(self, input_dim, output_dim, architecture="linear", hidden_dim=64, params=None, seed=0):
        if architecture not in ARCHITECTURES:
            raise ParameterError(f"architecture must be one of {ARCHITECTURES}, got {architecture!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.architecture = architecture
        self.hidden_dim = int(hidden_dim) if architecture == "mlp" else None
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        for name, shape in self.param_shapes().items():
            if self.params.get(name, np.empty(0)).shape != shape:
                raise ShapeError(f"parameter {name} should have shape {shape}")

    @classmethod
    def identity(cls, dim):
        return cls(dim, dim, "linear", params={"weight": np.eye(dim)})

    def param_shapes(self):
        if self.architecture == "linear":
            return {"weight": (self.output_dim, self.input_dim)}
        return {
            "hidden_weight": (self.hidden_dim, self.input_dim),
            "hidden_bias": (self.hidden_dim,),
            "weight": (self.output_dim, self.hidden_dim),
            "bias": (self.output_dim,),
        }

    def _init_params(self, rng):
        params = {}
        for name, shape in self.param_shapes().items():
            fan_in = self.input_dim if name.startswith("hidden") else (self.hidden_dim or self.input_dim)
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        return params

    def copy(self):
        return EmbeddingModel(self.input_dim, self.output_dim, self.architecture, self.hidden_dim or 64, self.params)

    def _check_inputs(self, inputs):
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected inputs with {self.input_dim} columns, got shape {x.shape}")
        return x

    def _pre_normalized(self, x):
        if self.architecture == "linear":
            return x @ self.params["weight"].T, None
        hidden = np.tanh(x @ self.params["hidden_weight"].T + self.params["hidden_bias"])
        return hidden @ self.params["weight"].T + self.params["bias"], hidden

    def forward(self, inputs):
        """Unit-norm embeddings, one row per input row."""
        z, _ = self._pre_normalized(self._check_inputs(inputs))
        try:
            return l2_normalize(z)
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"degenerate embedding before normalisation: {exc}") from None

    def backward(self, inputs, upstream):
        """Parameter gradients given ``upstream`` = dLoss/dEmbedding (N x output_dim)."""
        x = self._check_inputs(inputs)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (x.shape[0], self.output_dim):
            raise ShapeError(f"upstream gradient should be {(x.shape[0], self.output_dim)}, got {upstream.shape}")
        z, hidden = self._pre_normalized(x)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        u = z / norms
        # Jacobian of z / |z| is (I - u u^T) / |z|
        grad_z = (upstream - np.sum(upstream * u, axis=1, keepdims=True) * u) / norms
        if self.architecture == "linear":
            return {"weight": grad_z.T @ x}
        grad_hidden = (grad_z @ self.params["weight"]) * (1.0 - hidden**2)
        return {
            "hidden_weight": grad_hidden.T @ x,
            "hidden_bias": grad_hidden.sum(axis=0),
            "weight": grad_z.T @ hidden,
            "bias": grad_z.sum(axis=0),
        }


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()})


def sgd_update(params, grads, state, learning_rate, momentum=0.9, weight_decay=0.0):
    """One in-place SGD step with momentum and L2 weight decay.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        v = state.velocity.setdefault(name, np.zeros_like(p))
        v *= momentum
        v += g + weight_decay * p
        p -= learning_rate * v
    return params, state


@dataclass
class TrainConfig:
    loss: str = "rll-simpler"
    margin: float = 0.4
    alpha: float = None
    t_n: float = 10.0
    t_p: float = 0.0
    lam: float = 0.5
    t1: float = None
    t2: float = None
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 2e-5
    max_iter: int = 2000
    batch_classes: int = 8
    batch_per_class: int = 3
    seed: int = 0
    output_dim: int = 8
    architecture: str = "linear"
    hidden_dim: int = 64

    def __post_init__(self):
        if self.loss not in gradients.LOSSES:
            raise ParameterError(f"unknown loss {self.loss!r}; choose from {', '.join(gradients.LOSSES)}")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")
        if self.max_iter < 0:
            raise ParameterError("max_iter must be non-negative")
        if (self.t1 is None) != (self.t2 is None):
            raise ParameterError("t1 and t2 must be given together")
        if self.schedule is not None and self.loss not in ("rll", "rll-simpler"):
            raise ParameterError("temperature schedules apply to the ranked list losses only")
        if self.loss in ("rll", "rll-simpler"):
            self.rll_params()

    @property
    def schedule(self):
        if self.t1 is None or self.max_iter < 1:
            return None
        return TemperatureSchedule(self.t1, self.t2, self.max_iter)

    def rll_params(self, t_n=None):
        t_n = self.t_n if t_n is None else t_n
        if self.loss == "rll-simpler":
            return simpler_params(self.margin, t_n)
        alpha = 1.2 if self.alpha is None else self.alpha
        return RllParams(alpha=alpha, margin=self.margin, t_n=t_n, t_p=self.t_p, lam=self.lam)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainResult:
    model: EmbeddingModel
    loss_history: np.ndarray
    temperature_history: np.ndarray
    proxies: np.ndarray = None
    config: TrainConfig = None


def batch_loss_and_gradient(config, embeddings, labels, t_n=None, proxies=None):
    """Loss value and dLoss/dEmbedding (plus dLoss/dProxies) for one batch."""
    if config.loss in ("rll", "rll-simpler"):
        params = config.rll_params(t_n)
        loss, _ = rll_batch_loss(embeddings, labels, params)
        return loss, gradients.rll_batch_gradients(embeddings, labels, params), None
    if config.loss == "triplet":
        return (
            baselines.triplet_loss(embeddings, labels, config.margin),
            gradients.triplet_gradients(embeddings, labels, config.margin),
            None,
        )
    if config.loss == "npair":
        return gradients.npair_batch_loss(embeddings, labels), gradients.npair_batch_gradients(embeddings, labels), None
    if config.loss == "lifted":
        alpha = 1.0 if config.alpha is None else config.alpha
        return (
            baselines.lifted_struct_loss(embeddings, labels, alpha),
            gradients.lifted_struct_gradients(embeddings, labels, alpha),
            None,
        )
    grad_x, grad_p = gradients.proxy_nca_gradients(embeddings, labels, proxies)
    return baselines.proxy_nca_loss(embeddings, labels, proxies), grad_x, grad_p


def train(dataset, config, model=None, callback=None):
    """Run ``config.max_iter`` iterations of sample, embed, loss, backprop, update.

    Labels are remapped to ``0..C-1`` internally (proxies are indexed by
    the remapped id). Everything random flows from ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = EmbeddingModel(
            dataset.dim, config.output_dim, config.architecture, config.hidden_dim, seed=int(rng.integers(2**32))
        )
    else:
        model = model.copy()
    classes, remapped = np.unique(dataset.labels, return_inverse=True)
    params = model.params
    proxy_raw = None
    if config.loss == "proxy-nca":
        proxy_raw = rng.normal(size=(classes.size, config.output_dim))
        params = {**params, "proxies": proxy_raw}
    state = OptimizerState.zeros_like(params)
    schedule = config.schedule
    losses = np.zeros(config.max_iter)
    temps = np.full(config.max_iter, np.nan)
    sampler_view = _Remapped(dataset.features, remapped)
    for it in range(config.max_iter):
        try:
            batch = sample_batch(sampler_view, config.batch_classes, config.batch_per_class, rng)
            emb = model.forward(batch.features)
            t_n = schedule(it) if schedule is not None else None
            proxies = l2_normalize(proxy_raw) if proxy_raw is not None else None
            loss, grad_emb, grad_proxy = batch_loss_and_gradient(config, emb, batch.labels, t_n, proxies)
            grads = model.backward(batch.features, grad_emb)
            if proxy_raw is not None:
                grads["proxies"] = _normalize_backward(proxy_raw, grad_proxy)
            if not np.isfinite(loss):
                raise RankedListError("loss became non-finite")
            sgd_update(params, grads, state, config.learning_rate, config.momentum, config.weight_decay)
        except RankedListError as exc:
            raise TrainingError(it, exc) from exc
        losses[it] = loss
        if config.loss in ("rll", "rll-simpler"):
            temps[it] = config.t_n if t_n is None else t_n
        if callback is not None:
            callback(it, loss)
    return TrainResult(model, losses, temps, None if proxy_raw is None else l2_normalize(proxy_raw), config)


class _Remapped:
    """Minimal dataset view with contiguous labels for the sampler."""

    def __init__(self, features, labels):
        self.features = features
        self.labels = labels
        self.classes = np.unique(labels)


def _normalize_backward(raw, upstream):
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    u = raw / norms
    return (upstream - np.sum(upstream * u, axis=1, keepdims=True) * u) / norms


def save_checkpoint(path, model, config=None):
    """Write a model to a JSON checkpoint.

    Layout: ``format``, ``version``, ``architecture``, ``input_dim``,
    ``output_dim``, ``hidden_dim``, ``parameters`` (name -> ``{"shape",
    "data"}`` with data flattened row-major), and ``config`` (the training
    configuration, or null).
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": model.architecture,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "hidden_dim": model.hidden_dim,
        "parameters": {
            name: {"shape": list(p.shape), "data": p.ravel(order="C").tolist()} for name, p in model.params.items()
        },
        "config": None if config is None else config.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


def load_checkpoint(path):
    """Return ``(model, config)``; ``config`` is None when the file carries none."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')}")
    params = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"]) for name, entry in doc["parameters"].items()
    }
    model = EmbeddingModel(
        doc["input_dim"], doc["output_dim"], doc["architecture"], doc.get("hidden_dim") or 64, params=params
    )
    config = TrainConfig.from_dict(doc["config"]) if doc.get("config") else None
    return model, config
