"""Finite-dimensional forward operators, their spectra and kernel projectors.

Three kinds of operators are supported: plain dense matrices, row masks
(inpainting) and same-size zero-padded 2D convolutions (deblurring).
Structured operators apply matrix-free; they are densified only by
:func:`decompose` and :meth:`LinearMap.to_dense`.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .errors import (
    ConvergenceWarning,
    InvalidArgumentError,
    ParseError,
    ResourceLimitError,
)

DEFAULT_SVD_THRESHOLD = 1e-12
MAX_DENSE_DIM = 2000

_MAGIC = b"EQLM"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class LinearMap:
    """Base class for linear operators ``R^in_dim -> R^out_dim``.

    Subclasses implement :meth:`apply` and :meth:`adjoint` on single
    vectors. Instances are treated as immutable.
    """

    kind: str = "abstract"
    in_dim: int
    out_dim: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __matmul__(self, x):
        return self.apply(x)

    def normal(self, x: np.ndarray) -> np.ndarray:
        """Apply ``A* A``."""
        return self.adjoint(self.apply(x))

    def to_dense(self) -> np.ndarray:
        if max(self.in_dim, self.out_dim) > MAX_DENSE_DIM:
            raise ResourceLimitError(
                f"refusing to densify a {self.out_dim}x{self.in_dim} operator "
                f"(limit {MAX_DENSE_DIM} per side)"
            )
        out = np.empty((self.out_dim, self.in_dim))
        e = np.zeros(self.in_dim)
        for j in range(self.in_dim):
            e[j] = 1.0
            out[:, j] = self.apply(e)
            e[j] = 0.0
        return out

    @cached_property
    def norm(self) -> float:
        """Spectral norm, estimated once by power iteration and cached."""
        return operator_norm(self, tol=1e-13, max_iter=20000)


@dataclass(frozen=True, eq=False)
class DenseMap(LinearMap):
    matrix: np.ndarray
    kind: str = field(default="dense", init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or 0 in m.shape:
            raise InvalidArgumentError("dense operator needs a non-empty 2D array")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def in_dim(self):
        return self.matrix.shape[1]

    @property
    def out_dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ x

    def adjoint(self, y):
        return self.matrix.T @ y

    def to_dense(self):
        return np.array(self.matrix)


@dataclass(frozen=True, eq=False)
class InpaintingMap(LinearMap):
    """Zero out whole image rows; images are flattened row-major."""

    image_shape: tuple
    zeroed_rows: frozenset
    kind: str = field(default="inpainting", init=False)

    def __post_init__(self):
        mask = np.ones(self.image_shape)
        mask[sorted(self.zeroed_rows), :] = 0.0
        object.__setattr__(self, "_mask", mask.ravel())

    @property
    def in_dim(self):
        return self.image_shape[0] * self.image_shape[1]

    @property
    def out_dim(self):
        return self.in_dim

    def apply(self, x):
        return self._mask * x

    # A mask is self-adjoint.
    adjoint = apply


@dataclass(frozen=True, eq=False)
class Conv2dMap(LinearMap):
    """Same-size 2D convolution with zero padding and an odd-sized kernel."""

    image_shape: tuple
    kernel: np.ndarray
    kind: str = field(default="conv2d", init=False)

    def __post_init__(self):
        k = np.array(self.kernel, dtype=np.float64)
        k.setflags(write=False)
        object.__setattr__(self, "kernel", k)

    @property
    def in_dim(self):
        return self.image_shape[0] * self.image_shape[1]

    @property
    def out_dim(self):
        return self.in_dim

    def apply(self, x):
        img = np.reshape(x, self.image_shape)
        return convolve2d(img, self.kernel, mode="same").ravel()

    def adjoint(self, y):
        img = np.reshape(y, self.image_shape)
        return correlate2d(img, self.kernel, mode="same").ravel()


def make_dense(matrix) -> DenseMap:
    return DenseMap(matrix)


def make_inpainting(image_shape, zeroed_rows) -> InpaintingMap:
    """Operator that sets the listed image rows to zero.

    >>> A = make_inpainting((2, 2), {0})
    >>> A.apply(np.array([1.0, 2.0, 3.0, 4.0]))
    array([0., 0., 3., 4.])
    """
    rows, cols = (int(s) for s in image_shape)
    if rows <= 0 or cols <= 0:
        raise InvalidArgumentError(f"bad image shape {image_shape!r}")
    zeroed = frozenset(int(r) for r in zeroed_rows)
    bad = sorted(r for r in zeroed if not 0 <= r < rows)
    if bad:
        raise InvalidArgumentError(f"row indices {bad} outside [0, {rows})")
    return InpaintingMap((rows, cols), zeroed)


def make_motion_blur(image_shape, k: int) -> Conv2dMap:
    """Diagonal motion blur: convolution with the ``k x k`` identity matrix."""
    rows, cols = (int(s) for s in image_shape)
    if k <= 0 or k % 2 == 0:
        raise InvalidArgumentError(f"kernel size must be odd and positive, got {k}")
    if k > min(rows, cols):
        raise InvalidArgumentError(f"kernel size {k} exceeds image shape {image_shape}")
    return Conv2dMap((rows, cols), np.eye(k))


def operator_norm(map: LinearMap, tol: float = 1e-12, max_iter: int = 10000,
                  seed: int = 0, full_output: bool = False):
    """Largest singular value of ``map`` by power iteration on ``A* A``.

    The starting probe is drawn from ``seed``. After the relative change of
    the estimate drops below ``tol``, ten more iterations are run and must
    also stay within ``tol``; otherwise iteration continues.

    With ``full_output=True`` a tuple ``(norm, info)`` is returned where
    ``info`` holds ``iterations`` and ``converged``. If the budget runs out
    the best estimate is returned and a :class:`ConvergenceWarning` is
    issued.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(map.in_dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    calm = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = map.normal(v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v is in the kernel of A*A; a nonzero probe hitting zero means A = 0
            # unless the probe was degenerate, so try a fresh direction once.
            v2 = rng.standard_normal(map.in_dim)
            if np.linalg.norm(map.apply(v2)) == 0.0:
                estimate, converged = 0.0, True
                break
            v = v2 / np.linalg.norm(v2)
            continue
        new = np.sqrt(max(lam, 0.0))
        if abs(new - estimate) <= tol * max(new, np.finfo(float).tiny):
            calm += 1
            if calm > 10:
                estimate, converged = new, True
                break
        else:
            calm = 0
        estimate = new
        v = w / nw
    if not converged:
        warnings.warn(f"power iteration did not reach tol={tol} in {max_iter} steps",
                      ConvergenceWarning, stacklevel=2)
    if full_output:
        return estimate, {"iterations": it, "converged": converged}
    return estimate


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Full SVD ``A = U diag(s) V^T`` of a densified operator."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    source_dims: tuple

    def sigma_matrix(self):
        m, n = self.source_dims
        out = np.zeros((m, n))
        k = len(self.singular_values)
        out[:k, :k] = np.diag(self.singular_values)
        return out

    def reconstruct(self):
        return self.left_vectors @ self.sigma_matrix() @ self.right_vectors.T

    def rank(self, threshold=DEFAULT_SVD_THRESHOLD):
        return int(np.count_nonzero(self.singular_values >= threshold))


def decompose(map: LinearMap) -> SpectralDecomposition:
    """Full SVD of the densified operator (singular values nonincreasing)."""
    dense = map.to_dense()
    u, s, vt = np.linalg.svd(dense, full_matrices=True)
    for arr in (u, s, vt):
        arr.setflags(write=False)
    return SpectralDecomposition(s, u, vt.T, dense.shape)


@dataclass(frozen=True, eq=False)
class KernelProjector:
    """Orthogonal projector ``B B^T`` onto an estimated null space.

    ``basis`` has shape ``(dim, k)`` with orthonormal columns; ``k`` may be 0.
    """

    dim: int
    basis: np.ndarray
    threshold: float

    @property
    def rank(self):
        return self.basis.shape[1]

    def apply(self, x):
        if self.rank == 0:
            return np.zeros_like(x, dtype=float)
        return self.basis @ (self.basis.T @ x)

    def complement(self, x):
        return x - self.apply(x)

    def matrix(self):
        return self.basis @ self.basis.T


def kernel_projector(decomp: SpectralDecomposition,
                     threshold: float = DEFAULT_SVD_THRESHOLD) -> KernelProjector:
    """Projector onto right singular vectors with singular value below ``threshold``.

    Right singular vectors beyond ``min(out_dim, in_dim)`` have an implicit
    singular value of zero and always belong to the kernel.
    """
    if threshold < 0:
        raise InvalidArgumentError("threshold must be nonnegative")
    n = decomp.source_dims[1]
    s = decomp.singular_values
    small = np.ones(n, dtype=bool)
    small[: len(s)] = s < threshold
    basis = np.ascontiguousarray(decomp.right_vectors[:, small])
    basis.setflags(write=False)
    return KernelProjector(n, basis, float(threshold))


def pseudo_apply(decomp: SpectralDecomposition, y, threshold: float = DEFAULT_SVD_THRESHOLD):
    """Minimum-norm least-squares solution ``A^+ y`` with singular value cutoff."""
    if threshold <= 0:
        raise InvalidArgumentError("threshold must be positive")
    s = decomp.singular_values
    keep = s >= threshold
    k = len(s)
    u = decomp.left_vectors[:, :k][:, keep]
    v = decomp.right_vectors[:, :k][:, keep]
    return v @ ((u.T @ y) / s[keep])


def dense_to_bytes(matrix) -> bytes:
    """Serialize a real matrix: ``EQLM``, u32 version, u32 rows, u32 cols, f64 LE data."""
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise InvalidArgumentError("only 2D arrays can be serialized")
    return _HEADER.pack(_MAGIC, _VERSION, m.shape[0], m.shape[1]) + m.tobytes(order="C")


def dense_from_bytes(buf: bytes, *, trailing: bool = False):
    """Inverse of :func:`dense_to_bytes`.

    With ``trailing=True`` returns ``(matrix, rest)`` where ``rest`` are the
    bytes following the payload; otherwise extra bytes are an error.
    """
    if len(buf) < _HEADER.size:
        raise ParseError("container shorter than header", len(buf))
    magic, version, rows, cols = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != _VERSION:
        raise ParseError(f"unsupported container version {version}", 4)
    nbytes = rows * cols * 8
    end = _HEADER.size + nbytes
    if len(buf) < end:
        raise ParseError(f"payload needs {nbytes} bytes, found {len(buf) - _HEADER.size}",
                         len(buf))
    m = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=_HEADER.size)
    m = m.reshape(rows, cols).astype(np.float64)
    rest = bytes(buf[end:])
    if trailing:
        return m, rest
    if rest:
        raise ParseError(f"{len(rest)} unexpected trailing bytes", end)
    return m


def save_map(path, map: LinearMap):
    with open(path, "wb") as fh:
        fh.write(dense_to_bytes(map.to_dense()))


def load_map(path) -> DenseMap:
    with open(path, "rb") as fh:
        return DenseMap(dense_from_bytes(fh.read()))
