"""Synthetic benchmark generation and the plain-text point file format.

File format: UTF-8 text, one point per line as ``class_id,x_0,...,x_{D-1}``,
with an optional first line starting with ``#`` as a header. Coordinates are
written with 9 significant digits.
"""

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError, EmptyDatasetError, ParameterError, ParseError, ShapeError

COORD_FORMAT = "{:.9g}"


@dataclass
class Dataset:
    """Feature rows with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    note: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(f"{self.labels.size} labels for {self.features.shape[0]} rows")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("class ids must be non-negative")

    def __len__(self):
        return self.labels.size

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def classes(self):
        return np.unique(self.labels)

    @property
    def n_classes(self):
        return self.classes.size


@dataclass
class SynthSpec:
    """Parameters of the Gaussian-cluster benchmark.

    Class centers lie in a random ``signal_dim``-dimensional subspace shared
    by the train and test classes; every point gets unit-variance isotropic
    noise in all ``input_dim`` coordinates. Centers are rescaled so that the
    mean pairwise center distance equals ``separation`` (in noise standard
    deviations). ``mixing`` applies one random rotation to everything so the
    signal subspace is not axis-aligned.
    """

    n_train_classes: int = 10
    n_test_classes: int = 10
    per_class: int = 20
    input_dim: int = 32
    separation: float = 4.0
    mixing: bool = True
    seed: int = 7
    signal_dim: int = 8

    def __post_init__(self):
        for name in ("n_train_classes", "n_test_classes", "per_class", "input_dim", "signal_dim"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be at least 1")
        if self.signal_dim > self.input_dim:
            raise ParameterError("signal_dim cannot exceed input_dim")
        if not self.separation > 0:
            raise ParameterError(f"separation must be positive, got {self.separation}")


def random_rotation(dim, rng):
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


def generate_synthetic(spec):
    """Return ``(train, test)`` datasets with disjoint class ids.

    Train classes are numbered ``0..n_train-1`` and test classes continue
    from ``n_train``.
    """
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.n_train_classes + spec.n_test_classes
    centers = np.zeros((n_classes, spec.input_dim))
    centers[:, : spec.signal_dim] = rng.normal(size=(n_classes, spec.signal_dim))
    if n_classes > 1:
        iu = np.triu_indices(n_classes, k=1)
        gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)[iu]
        centers *= spec.separation * np.sqrt(spec.signal_dim) / gaps.mean()
    labels = np.repeat(np.arange(n_classes), spec.per_class)
    features = centers[labels] + rng.normal(size=(labels.size, spec.input_dim))
    if spec.mixing:
        features = features @ random_rotation(spec.input_dim, rng).T
    is_train = labels < spec.n_train_classes
    note = f"synthetic seed={spec.seed} sep={spec.separation:g} signal_dim={spec.signal_dim} mixing={spec.mixing}"
    train = Dataset(features[is_train], labels[is_train], "train", note)
    test = Dataset(features[~is_train], labels[~is_train], "test", note)
    return train, test


def format_rows(labels, rows):
    out = io.StringIO()
    for label, row in zip(labels, rows):
        out.write(",".join([str(int(label)), *(COORD_FORMAT.format(v) for v in row)]))
        out.write("\n")
    return out.getvalue()


def save_dataset(dataset, path, header=True):
    path = Path(path)
    text = format_rows(dataset.labels, dataset.features)
    if header:
        cols = ",".join(f"x{i}" for i in range(dataset.dim))
        note = f" {dataset.note}" if dataset.note else ""
        text = f"# class_id,{cols} split={dataset.split}{note}\n" + text
    path.write_text(text, encoding="utf-8")
    return path


def load_dataset(path, split=None):
    """Read a point file written by :func:`save_dataset` or :func:`export_embeddings`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    labels, rows = [], []
    dim = None
    for lineno, record in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not record or (len(record) == 1 and not record[0].strip()):
            continue
        if lineno == 1 and record[0].lstrip().startswith("#"):
            continue
        try:
            label = int(record[0])
            values = [float(v) for v in record[1:]]
        except ValueError as exc:
            raise ParseError(f"non-numeric token in {path.name}: {exc}", line=lineno) from None
        if label < 0:
            raise ParseError(f"negative class id {label}", line=lineno)
        if not values:
            raise ParseError("row has a class id but no coordinates", line=lineno)
        if not all(np.isfinite(values)):
            raise ParseError("non-finite coordinate", line=lineno)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise ShapeError(f"line {lineno}: expected {dim} coordinates, found {len(values)}")
        labels.append(label)
        rows.append(values)
    if not rows:
        raise EmptyDatasetError(f"{path} contains no points")
    split = split or ("test" if "test" in path.stem else "train")
    return Dataset(np.array(rows), np.array(labels), split, note=f"loaded from {path.name}")


def export_embeddings(model, dataset, path):
    """Write ``class_id`` plus the embedded coordinates of every point."""
    path = Path(path)
    emb = model.forward(dataset.features) if len(dataset) else np.zeros((0, model.output_dim))
    header = "# class_id," + ",".join(f"e{i}" for i in range(model.output_dim)) + "\n"
    try:
        path.write_text(header + format_rows(dataset.labels, emb), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path
