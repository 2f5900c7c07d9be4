"""Datasets: LIBSVM text I/O, synthetic generators, label noise and metrics."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InputError, ParseError
from .losses import CLASSIFICATION, REGRESSION, normalize_task
from .solver import predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Samples as rows of a CSR matrix (column j holds LIBSVM index j+1)."""

    X: sp.csr_matrix
    y: np.ndarray
    task: str

    def __post_init__(self):
        object.__setattr__(self, "task", normalize_task(self.task))
        X = self.X if sp.issparse(self.X) else _dense_to_csr(np.atleast_2d(self.X))
        object.__setattr__(self, "X", X.tocsr())
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).ravel())
        if self.X.shape[0] != self.y.shape[0]:
            raise InputError(f"{self.X.shape[0]} samples but {self.y.shape[0]} labels")
        if self.X.shape[0] < 1:
            raise InputError("a dataset needs at least one sample")
        if self.task == CLASSIFICATION and not np.all(np.abs(self.y) == 1.0):
            raise InputError("classification labels must be -1 or +1")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.task)

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.X, y, self.task)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.task == other.task
            and self.X.shape == other.X.shape
            and np.array_equal(self.y, other.y)
            and (self.X != other.X).nnz == 0
        )


def _dense_to_csr(A: np.ndarray) -> sp.csr_matrix:
    """CSR with every entry stored, so explicit zeros survive a LIBSVM round trip."""
    A = np.asarray(A, dtype=float)
    m, d = A.shape
    indptr = np.arange(0, m * d + 1, d, dtype=np.int64)
    indices = np.tile(np.arange(d, dtype=np.int32), m)
    return sp.csr_matrix((A.ravel().copy(), indices, indptr), shape=(m, d))


def from_arrays(X, y, task) -> Dataset:
    return Dataset(_dense_to_csr(np.atleast_2d(np.asarray(X, dtype=float))), y, task)


# --- LIBSVM format -------------------------------------------------------------

def _map_class_label(value: float, lineno: int, warned: list) -> float:
    if value not in (-1.0, 0.0, 1.0) and not warned:
        log.warning("line %d: label %r is not in {-1, 0, +1}; mapping by sign", lineno, value)
        warned.append(True)
    return 1.0 if value > 0 else -1.0


def parse_libsvm(stream, task) -> Dataset:
    """Read ``<label> <idx>:<val> ...`` lines (1-based, strictly increasing idx).

    ``stream`` is a text stream or a string holding the file body. For
    classification any positive label becomes +1 and everything else -1.
    Blank lines and ``#`` comments are skipped.
    """
    task = normalize_task(task)
    if isinstance(stream, str):
        stream = io.StringIO(stream)

    labels, data, indices, indptr = [], [], [], [0]
    dim = 0
    warned: list = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        if not math.isfinite(label):
            raise ParseError(f"non-finite label {tokens[0]!r}", lineno)
        if task == CLASSIFICATION:
            label = _map_class_label(label, lineno, warned)
        last = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:value, got {tok!r}", lineno)
            try:
                idx = int(key)
                value = float(val)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", lineno) from None
            if idx < 1:
                raise ParseError(f"feature index {idx} must be >= 1", lineno)
            if idx <= last:
                raise ParseError(f"feature indices must increase ({idx} after {last})", lineno)
            if not math.isfinite(value):
                raise ParseError(f"non-finite feature value {val!r}", lineno)
            last = idx
            indices.append(idx - 1)
            data.append(value)
        dim = max(dim, last)
        labels.append(label)
        indptr.append(len(indices))
    if not labels:
        raise ParseError("no samples found")
    X = sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int32), np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), dim),
    )
    return Dataset(X, np.asarray(labels), task)


def read_libsvm(path, task) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, task)


def _fmt(x: float) -> str:
    return repr(float(x))


def serialize_libsvm(data: Dataset) -> str:
    """LIBSVM text with shortest round-trip float formatting."""
    out = []
    X = data.X
    for i in range(data.m):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        label = data.y[i]
        if data.task == CLASSIFICATION:
            head = "+1" if label > 0 else "-1"
        else:
            head = _fmt(label)
        feats = " ".join(f"{j + 1}:{_fmt(v)}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        out.append(f"{head} {feats}".rstrip())
    return "\n".join(out) + "\n"


def write_libsvm(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_libsvm(data))


# --- generators and perturbations ----------------------------------------------

def checkerboard_labels(X, grid: int) -> np.ndarray:
    tiles = np.floor(grid * np.asarray(X, dtype=float)).astype(np.int64)
    return np.where(tiles.sum(axis=1) % 2 == 0, 1.0, -1.0)


def gen_checkerboard(n: int, grid: int = 2, seed=None) -> Dataset:
    """Uniform points on the unit square, labelled by tile parity.

    ``grid=2`` is the classic XOR layout; ``grid=4`` the 4x4 checkerboard.
    """
    if int(n) != n or n < 1:
        raise InputError(f"n must be a positive integer, got {n}")
    if int(grid) != grid or grid < 2 or grid % 2:
        raise InputError(f"grid must be an even integer >= 2, got {grid}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(int(n), 2))
    return from_arrays(X, checkerboard_labels(X, int(grid)), CLASSIFICATION)


def sinc(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = x != 0
    out[nz] = np.sin(x[nz]) / x[nz]
    return out


def gen_sinc(x_min: float = -4 * math.pi, x_max: float = 4 * math.pi, step: float = 0.01,
             noise_std: float = 0.05, seed=None) -> Dataset:
    """``y = sin(x)/x + N(0, noise_std**2)`` on an evenly spaced grid."""
    if not x_min < x_max:
        raise InputError("x_min must be below x_max")
    if not step > 0:
        raise InputError("step must be positive")
    if not noise_std >= 0:
        raise InputError("noise_std must be nonnegative")
    count = math.floor((x_max - x_min) / step + 1e-9) + 1
    x = x_min + step * np.arange(count)
    rng = np.random.default_rng(seed)
    y = sinc(x) + noise_std * rng.standard_normal(count)
    return from_arrays(x[:, None], y, REGRESSION)


def _count(fraction: float, m: int) -> int:
    # guard against 0.1 * 400 landing a hair below 40
    return math.floor(fraction * m + 1e-9)


def flip_labels(data: Dataset, fraction: float, seed=None) -> Dataset:
    """Negate the labels of exactly ``floor(fraction * m)`` random samples."""
    if data.task != CLASSIFICATION:
        raise InputError("label flipping only applies to classification data")
    if not 0 <= fraction < 1:
        raise InputError(f"flip fraction must be in [0, 1), got {fraction}")
    k = _count(fraction, data.m)
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.m, size=k, replace=False)
    y = data.y.copy()
    y[idx] = -y[idx]
    return data.with_labels(y)


def split(data: Dataset, train_fraction: float, seed=None) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; the train part gets ``floor(fraction * m)`` samples."""
    if not 0 < train_fraction < 1:
        raise InputError(f"split fraction must be in (0, 1), got {train_fraction}")
    n_train = _count(train_fraction, data.m)
    if n_train < 1 or n_train >= data.m:
        raise InputError(f"split fraction {train_fraction} leaves an empty part for m={data.m}")
    perm = np.random.default_rng(seed).permutation(data.m)
    return data.subset(perm[:n_train]), data.subset(perm[n_train:])


# --- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    task: str
    accuracy: float | None = None
    rmse: float | None = None
    mse: float | None = None
    support_size: int = 0
    train_seconds: float | None = None

    @property
    def value(self) -> float:
        """Headline number: accuracy for classification, RMSE for regression."""
        return self.accuracy if self.task == CLASSIFICATION else self.rmse


def score_metrics(task: str, y, scores) -> dict:
    y = np.asarray(y, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if task == CLASSIFICATION:
        pred = np.where(scores >= 0, 1.0, -1.0)
        return {"accuracy": float(np.mean(pred == y))}
    mse = float(np.mean((scores - y) ** 2))
    return {"mse": mse, "rmse": math.sqrt(mse)}


def evaluate(model, data: Dataset) -> Metrics:
    if model.task != data.task:
        raise InputError(f"model task {model.task!r} does not match data task {data.task!r}")
    scores = predict(model, data.X)
    return Metrics(
        task=data.task,
        support_size=model.n_support,
        train_seconds=model.info.get("train_seconds"),
        **score_metrics(data.task, data.y, scores),
    )
