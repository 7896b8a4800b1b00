"""Datasets: IDX ingestion, synthetic subspace signals and splits."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, ParseError

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x0D: np.dtype(">f4"),
}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Signals stored as rows of a ``(n, dim)`` float64 array."""

    samples: np.ndarray
    shape_hint: Optional[tuple] = None
    provenance: str = "synthetic"

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s.reshape(0 if s.size == 0 else 1, -1)
        if s.ndim != 2:
            raise InvalidArgumentError("samples must form a 2D array")
        if not np.all(np.isfinite(s)):
            raise InvalidArgumentError("samples contain non-finite entries")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def dim(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


@dataclass(frozen=True)
class IdxHeader:
    magic: int
    dtype_code: int
    ndim: int
    dims: tuple


def parse_idx_header(buf: bytes) -> IdxHeader:
    if len(buf) < 4:
        raise ParseError("file shorter than the 4-byte magic", len(buf))
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic >> 16:
        raise ParseError(f"bad magic 0x{magic:08x}: upper two bytes must be zero", 0)
    code, ndim = buf[2], buf[3]
    if code not in _IDX_DTYPES:
        raise ParseError(f"unsupported dtype code 0x{code:02x}", 2)
    if ndim == 0:
        raise ParseError("zero-dimensional IDX payload", 3)
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise ParseError(f"header needs {need} bytes, found {len(buf)}", len(buf))
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    return IdxHeader(magic, code, ndim, tuple(dims))


def parse_idx(buf: bytes) -> Dataset:
    """Parse an IDX file into a dataset.

    The first dimension indexes samples, the remaining ones are flattened
    row-major. Unsigned bytes are scaled to ``[0, 1]``; floats are kept.
    """
    head = parse_idx_header(buf)
    dtype = _IDX_DTYPES[head.dtype_code]
    offset = 4 + 4 * head.ndim
    count = int(np.prod(head.dims, dtype=np.int64))
    expected = count * dtype.itemsize
    actual = len(buf) - offset
    if actual < expected:
        raise ParseError(f"truncated payload: expected {expected} bytes, got {actual}",
                         len(buf))
    if actual > expected:
        raise ParseError(f"payload has {actual - expected} trailing bytes "
                         f"(expected {expected}, got {actual})", offset + expected)
    raw = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    values = raw.astype(np.float64)
    if head.dtype_code == 0x08:
        values /= 255.0
    n = head.dims[0]
    values = values.reshape(n, -1) if n else values.reshape(0, max(1, count))
    hint = tuple(head.dims[1:]) if head.ndim == 3 else None
    return Dataset(values, shape_hint=hint, provenance="idx-file")


def serialize_idx(values, dtype_code: int = 0x08) -> bytes:
    """Write an array (first axis = samples) as IDX.

    For unsigned bytes the input is taken as raw integer pixel values.
    """
    arr = np.asarray(values)
    if dtype_code not in _IDX_DTYPES:
        raise InvalidArgumentError(f"unsupported dtype code 0x{dtype_code:02x}")
    head = struct.pack(">HBB", 0, dtype_code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + arr.astype(_IDX_DTYPES[dtype_code]).tobytes(order="C")


def load_idx(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_idx(fh.read())


def random_orthonormal(dim: int, q: int, rng) -> np.ndarray:
    """Seeded orthonormal ``dim x q`` frame with a fixed sign convention."""
    if q == 0:
        return np.zeros((dim, 0))
    g = rng.standard_normal((dim, q))
    qmat, r = np.linalg.qr(g)
    return qmat * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


def make_synthetic(dim: int, q: int, n: int, seed: int = 0, scale: float = 1.0):
    """``n`` samples ``x = B c`` on a random ``q``-dimensional subspace.

    Returns the dataset and the exact :class:`~eqreg.training.SubspaceProjector`
    of the generating subspace. ``scale`` multiplies the Gaussian
    coefficients (``scale=0`` gives zero samples).
    """
    from .training import SubspaceProjector

    if not 0 <= q <= dim:
        raise InvalidArgumentError(f"q={q} must lie in [0, dim={dim}]")
    if n < 0:
        raise InvalidArgumentError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    basis = random_orthonormal(dim, q, rng)
    coef = scale * rng.standard_normal((n, q))
    samples = coef @ basis.T if n else np.zeros((0, dim))
    return Dataset(samples, provenance="synthetic"), SubspaceProjector(basis, 1.0)


def split(dataset: Dataset, n_train: int, n_test: int, seed: int = 0):
    """Disjoint seeded random split into a training and a test set."""
    n = len(dataset)
    if n_train < 0 or n_test < 0 or n_train + n_test > n:
        raise InvalidArgumentError(
            f"cannot take {n_train} + {n_test} samples from a dataset of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    tr, te = perm[:n_train], perm[n_train:n_train + n_test]
    s = dataset.samples
    return (Dataset(s[tr], dataset.shape_hint, dataset.provenance),
            Dataset(s[te].reshape(len(te), dataset.dim), dataset.shape_hint, dataset.provenance))
