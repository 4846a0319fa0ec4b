"""Sparse binary-classification data: LIBSVM I/O, statistics, partitions, synthetic sets."""

import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from dualforge import rng as _rng


class LibSVMFormatError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Example:
    """One labelled sparse example with 0-based, strictly ascending indices."""

    indices: np.ndarray
    values: np.ndarray
    label: int
    squared_norm: float

    @classmethod
    def from_pairs(cls, indices, values, label):
        idx = np.asarray(indices, dtype=np.int64)
        val = np.asarray(values, dtype=np.float64)
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly ascending")
        if idx.size and idx[0] < 0:
            raise ValueError("negative feature index")
        keep = val != 0.0
        if not np.all(keep):
            idx, val = idx[keep], val[keep]
        if label not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {label!r}")
        idx.setflags(write=False)
        val.setflags(write=False)
        return cls(idx, val, int(label), float(np.dot(val, val)))

    def same_as(self, other):
        return (
            self.label == other.label
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
            and self.squared_norm == other.squared_norm
        )


@dataclass(frozen=True)
class DatasetStats:
    R: float
    nnz: int
    sparsity: float


@dataclass(frozen=True, eq=False)
class Dataset:
    examples: tuple
    d: int
    stats: DatasetStats = field(init=False)

    def __post_init__(self):
        examples = tuple(self.examples)
        object.__setattr__(self, "examples", examples)
        for i, ex in enumerate(examples):
            if ex.indices.size and ex.indices[-1] >= self.d:
                raise ValueError(f"example {i} has feature index {ex.indices[-1]} >= d={self.d}")
        object.__setattr__(self, "stats", compute_stats(examples, self.d))

    @property
    def n(self):
        return len(self.examples)

    @cached_property
    def labels(self):
        return np.array([ex.label for ex in self.examples], dtype=np.float64)

    @cached_property
    def squared_norms(self):
        return np.array([ex.squared_norm for ex in self.examples], dtype=np.float64)

    @cached_property
    def csr(self):
        """Rows as a ``scipy.sparse.csr_matrix`` of shape (n, d)."""
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([ex.indices.size for ex in self.examples])
        if self.n:
            indices = np.concatenate([ex.indices for ex in self.examples] + [np.empty(0, np.int64)])
            data = np.concatenate([ex.values for ex in self.examples] + [np.empty(0)])
        else:
            indices, data = np.empty(0, np.int64), np.empty(0)
        return sp.csr_matrix((data, indices, indptr), shape=(self.n, self.d))

    def same_as(self, other):
        return (
            self.n == other.n
            and self.d == other.d
            and all(a.same_as(b) for a, b in zip(self.examples, other.examples))
        )

    def normalized(self):
        """Copy with every nonzero example scaled to unit Euclidean norm."""
        out = []
        for ex in self.examples:
            if ex.squared_norm > 0:
                out.append(Example.from_pairs(ex.indices, ex.values / math.sqrt(ex.squared_norm), ex.label))
            else:
                out.append(ex)
        return Dataset(tuple(out), self.d)


def compute_stats(examples, d):
    n = len(examples)
    nnz = sum(ex.indices.size for ex in examples)
    R = max((ex.squared_norm for ex in examples), default=0.0)
    sparsity = nnz / (n * d) if n and d else 0.0
    return DatasetStats(R=float(R), nnz=int(nnz), sparsity=sparsity)


def _parse_label(token, lineno):
    try:
        value = float(token)
    except ValueError:
        raise LibSVMFormatError(lineno, f"unparsable label {token!r}") from None
    if value == 1.0:
        return 1
    if value in (0.0, -1.0):
        return -1
    raise LibSVMFormatError(lineno, f"label {token!r} not in {{-1, 0, +1}}")


def parse_libsvm(stream, d=None):
    """Parse LIBSVM text into a :class:`Dataset`.

    ``stream`` may be bytes, str, or a binary/text file object.  Lines whose
    first non-blank character is ``#`` are skipped, as are blank lines.
    Labels ``0`` map to ``-1``.  ``d`` forces the feature dimension; it must
    cover the largest index seen.
    """
    if isinstance(stream, (bytes, bytearray)):
        text = bytes(stream).decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        raw = stream.read()
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw

    examples = []
    max_index = 0
    for lineno, line in enumerate(io.StringIO(text, newline=None), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        label = _parse_label(tokens[0], lineno)
        indices, values = [], []
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep or not key or not val:
                raise LibSVMFormatError(lineno, f"malformed token {tok!r}")
            try:
                idx = int(key)
            except ValueError:
                raise LibSVMFormatError(lineno, f"malformed index in {tok!r}") from None
            if idx < 1:
                raise LibSVMFormatError(lineno, f"index {idx} is not 1-based")
            if idx <= prev:
                raise LibSVMFormatError(lineno, f"index {idx} not ascending after {prev}")
            try:
                fval = float(val)
            except ValueError:
                raise LibSVMFormatError(lineno, f"unparsable value in {tok!r}") from None
            if not math.isfinite(fval):
                raise LibSVMFormatError(lineno, f"non-finite value in {tok!r}")
            prev = idx
            indices.append(idx - 1)
            values.append(fval)
        max_index = max(max_index, prev)
        examples.append(Example.from_pairs(indices, values, label))

    if d is None:
        d = max_index
    elif d < max_index:
        raise ValueError(f"requested d={d} is smaller than the largest index {max_index}")
    return Dataset(tuple(examples), int(d))


def load_libsvm(path, d=None, normalize=False):
    with open(path, "rb") as fh:
        data = parse_libsvm(fh, d=d)
    return data.normalized() if normalize else data


def to_libsvm(dataset):
    """Serialize to LIBSVM text; floats use the shortest round-trip repr."""
    lines = []
    for ex in dataset.examples:
        parts = ["1" if ex.label == 1 else "-1"]
        parts.extend(f"{i + 1}:{v!r}" for i, v in zip(ex.indices.tolist(), ex.values.tolist()))
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def save_libsvm(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(to_libsvm(dataset))


@dataclass(frozen=True, eq=False)
class Partition:
    assignments: tuple

    @property
    def m(self):
        return len(self.assignments)

    @property
    def sizes(self):
        return tuple(len(a) for a in self.assignments)


def partition(n, m, seed):
    """Shuffle ``range(n)`` with a seeded stream and cut it into ``m`` balanced blocks."""
    if m < 1:
        raise ValueError("need at least one worker")
    if m > n:
        raise ValueError(f"cannot split {n} examples over {m} workers")
    perm = _rng.stream(seed, _rng.PARTITION, n, m).permutation(n)
    base, extra = divmod(n, m)
    out, start = [], 0
    for ell in range(m):
        size = base + (1 if ell < extra else 0)
        block = perm[start:start + size].astype(np.int64)
        block.setflags(write=False)
        out.append(block)
        start += size
    return Partition(tuple(out))


def gen_synthetic(n, d, density, seed, label_noise=0.0):
    """Random sparse Gaussian features labelled by a hidden linear direction.

    Labels are ``sign(x . w_true)`` (ties go to +1), then each is flipped with
    probability ``label_noise``.
    """
    if n <= 0 or d <= 0:
        raise ValueError("n and d must be positive")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    if not 0.0 <= label_noise < 0.5:
        raise ValueError("label_noise must lie in [0, 0.5)")
    gen = _rng.stream(seed, _rng.SYNTHETIC)
    w_true = gen.standard_normal(d)
    mask = gen.random((n, d)) < density
    feats = gen.standard_normal((n, d))
    flips = gen.random(n) < label_noise
    examples = []
    for i in range(n):
        idx = np.flatnonzero(mask[i])
        vals = feats[i, idx]
        label = 1 if float(vals @ w_true[idx]) >= 0.0 else -1
        if flips[i]:
            label = -label
        examples.append(Example.from_pairs(idx, vals, label))
    return Dataset(tuple(examples), d)
