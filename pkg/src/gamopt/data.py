"""Dataset ingestion (CSV, IDX, synthetic) and training-problem assembly."""

import csv
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError
from .models import (
    Batch,
    MlpSpec,
    QuadraticSpec,
    accuracy,
    init_params,
    mlp_loss,
    mlp_predict,
    quadratic_loss,
)


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def num_features(self):
        return self.x_train.shape[1]


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("="): k for k, v in _IDX_TYPES.items()}


def read_idx(path) -> np.ndarray:
    """Read an IDX file; returns the raw tensor in native byte order."""
    with open(path, "rb") as fh:
        header = fh.read(4)
        if len(header) != 4 or header[0] != 0 or header[1] != 0:
            raise DataError(f"{path}: bad IDX magic {header.hex()}")
        code, ndim = header[2], header[3]
        if code not in _IDX_TYPES:
            raise DataError(f"{path}: unknown IDX type code 0x{code:02x}")
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        dtype = _IDX_TYPES[code]
        data = np.frombuffer(fh.read(), dtype=dtype)
    expected = int(np.prod(dims, dtype=np.int64))
    if data.size != expected:
        raise DataError(f"{path}: expected {expected} values for dims {dims}, found {data.size}")
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise DataError(f"dtype {array.dtype} has no IDX encoding")
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, code, array.ndim]))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.astype(_IDX_TYPES[code]).tobytes())


def _idx_header(path):
    with open(path, "rb") as fh:
        header = fh.read(4)
        if len(header) != 4 or header[0] != 0 or header[1] != 0:
            raise DataError(f"{path}: bad IDX magic {header.hex()}")
        return header[2], struct.unpack(f">{header[3]}I", fh.read(4 * header[3]))


def load_idx(images_path, labels_path, subset_n=None):
    """Flattened images scaled to [0, 1] and integer labels."""
    code, dims = _idx_header(images_path)
    if (code, len(dims)) != (0x08, 3):
        raise DataError(f"{images_path}: expected magic 0x00000803, got 0x0000{code:02x}{len(dims):02x}")
    code, ldims = _idx_header(labels_path)
    if (code, len(ldims)) != (0x08, 1):
        raise DataError(f"{labels_path}: expected magic 0x00000801, got 0x0000{code:02x}{len(ldims):02x}")
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise DataError("image and label counts differ")
    if subset_n is not None:
        images, labels = images[:subset_n], labels[:subset_n]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path, label_col=-1, header=None):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty CSV")
    names = None
    if header is None:
        header = not all(_is_float(c) for c in rows[0])
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(rows[0]) if rows else 0
    if isinstance(label_col, str):
        if names is None or label_col not in names:
            raise DataError(f"{path}: label column {label_col!r} not in header")
        label_idx = names.index(label_col)
    else:
        label_idx = label_col % width if width else 0
    feats, labels = [], []
    first_line = 2 if header else 1
    for i, row in enumerate(rows):
        line = first_line + i
        if len(row) != width:
            raise DataError(f"{path}: row {line} has {len(row)} columns, expected {width}")
        vals = []
        for j, cell in enumerate(row):
            if j == label_idx:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                col = names[j] if names else j
                raise DataError(f"{path}: non-numeric value {cell!r} at row {line}, column {col}") from None
        try:
            lab = float(row[label_idx])
        except ValueError:
            raise DataError(f"{path}: non-numeric label {row[label_idx]!r} at row {line}") from None
        if lab != int(lab) or lab < 0:
            raise DataError(f"{path}: label {row[label_idx]!r} at row {line} is not a non-negative integer")
        feats.append(vals)
        labels.append(int(lab))
    x = np.array(feats, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite feature values")
    return x, np.array(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic
# ---------------------------------------------------------------------------


def two_moons(n, noise, seed):
    rng = np.random.default_rng(seed)
    n_out = n // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, np.pi, n_out)
    t_in = rng.uniform(0.0, np.pi, n_in)
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    x = np.vstack([outer, inner]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n_out, np.int64), np.ones(n_in, np.int64)])
    perm = rng.permutation(n)
    return x[perm], y[perm]


def gaussian_blobs(n, k, dim, spread, seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-5.0, 5.0, (k, dim))
    y = rng.integers(0, k, n)
    x = centers[y] + spread * rng.standard_normal((n, dim))
    return x, y.astype(np.int64)


def _split(x, y, test_fraction, seed):
    n = x.shape[0]
    n_test = int(round(test_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    test, train = perm[:n_test], perm[n_test:]
    return x[train], y[train], x[test], y[test]


def _stream(seed, tag):
    # independent, reproducible substreams per purpose
    return np.random.SeedSequence([seed, tag]).generate_state(1)[0]


def load_dataset(spec, seed: int = 0) -> Dataset:
    """Materialize a dataset config (see :mod:`gamopt.config`)."""
    kind = spec.kind
    if kind == "two_moons":
        xtr, ytr = two_moons(spec.n, spec.noise, _stream(seed, 1))
        xte, yte = two_moons(max(spec.test_n, 0), spec.noise, _stream(seed, 2)) if spec.test_n else (
            np.zeros((0, 2)), np.zeros(0, np.int64))
        k = 2
    elif kind == "gaussian_blobs":
        gen = np.random.default_rng(_stream(seed, 3))
        xa, ya = gaussian_blobs(spec.n + spec.test_n, spec.k, spec.dim, spec.spread, gen.integers(2**32))
        xtr, ytr, xte, yte = xa[: spec.n], ya[: spec.n], xa[spec.n:], ya[spec.n:]
        k = spec.k
    elif kind == "csv":
        x, y = load_csv(spec.path, spec.label_col, spec.header)
        xtr, ytr, xte, yte = _split(x, y, spec.test_fraction, _stream(seed, 4))
        k = int(y.max()) + 1
    elif kind == "idx":
        x, y = load_idx(spec.images_path, spec.labels_path, spec.subset_n)
        xtr, ytr, xte, yte = _split(x, y, spec.test_fraction, _stream(seed, 5))
        k = int(y.max()) + 1
    else:
        raise DataError(f"dataset kind {kind!r} has no samples")
    return Dataset(xtr, ytr, xte, yte, max(k, 2))


def dataset_size(spec) -> int:
    """Training-set size without building the full problem."""
    if spec.kind in ("two_moons", "gaussian_blobs"):
        return spec.n
    if spec.kind == "idx":
        _, dims = _idx_header(spec.images_path)
        n = dims[0] if spec.subset_n is None else min(dims[0], spec.subset_n)
    else:
        n = load_csv(spec.path, spec.label_col, spec.header)[0].shape[0]
    return n - int(round(spec.test_fraction * n))


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------


class ClassificationProblem:
    def __init__(self, data: Dataset, spec: MlpSpec, task="softmax-cross-entropy"):
        self.data = data
        self.spec = spec
        self.task = task
        self.loss = mlp_loss(spec, task)
        self.init = init_params(spec)
        self._train = self._batch(np.arange(data.x_train.shape[0]))

    def _targets(self, y):
        if self.task == "mse":
            return np.eye(self.spec.layer_widths[-1])[y]
        return y

    def _batch(self, idx):
        return Batch(self.data.x_train[idx], self._targets(self.data.y_train[idx]), idx)

    def iters_per_epoch(self, batch_size):
        return -(-self.data.x_train.shape[0] // batch_size)

    def epoch_batches(self, rng, batch_size):
        perm = rng.permutation(self.data.x_train.shape[0])
        return [self._batch(perm[i: i + batch_size]) for i in range(0, perm.size, batch_size)]

    def full_batch(self):
        return self._train

    def evaluate(self, params):
        train_loss = self.loss.value(params, self._train)
        train_acc = accuracy(mlp_predict(self.spec, params, self.data.x_train), self.data.y_train)
        test_acc = None
        if self.data.x_test.shape[0]:
            test_acc = accuracy(mlp_predict(self.spec, params, self.data.x_test), self.data.y_test)
        return train_loss, train_acc, test_acc


class QuadraticProblem:
    """Batch-independent analytic objective; an epoch is a fixed number of steps."""

    def __init__(self, spec: QuadraticSpec, init, steps_per_epoch):
        self.spec = spec
        self.loss = quadratic_loss(spec)
        self.init = np.asarray(init, dtype=np.float64)
        self.steps_per_epoch = steps_per_epoch

    def iters_per_epoch(self, batch_size):
        return self.steps_per_epoch

    def epoch_batches(self, rng, batch_size):
        return [None] * self.steps_per_epoch

    def full_batch(self):
        return None

    def evaluate(self, params):
        return self.loss.value(params), None, None


def build_problem(config):
    ds = config.dataset
    if ds.kind == "quadratic":
        return QuadraticProblem(QuadraticSpec(tuple(ds.diag), tuple(ds.center)), ds.init, ds.steps_per_epoch)
    data = load_dataset(ds, config.resolved_data_seed)
    m = config.model
    widths = (data.num_features, *m.hidden, data.num_classes)
    spec = MlpSpec(widths, m.activation, config.resolved_init_seed, m.init_scale)
    return ClassificationProblem(data, spec, m.task)
