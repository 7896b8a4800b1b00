"""Regularization operators ``G = id - N`` with contractive residual ``N``.

Besides construction and evaluation this module carries the analysis
quantities built on top of ``G``: symmetric Bregman distances, the
equivalence inequalities for contractive residuals, the recoverability
constant of a signal set, the training loss and the lower bound on the
reconstruction error for a fixed regularization parameter.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ContractivityError,
    InvalidArgumentError,
    ParseError,
    UndefinedQuantityError,
)
from .linops import KernelProjector, dense_from_bytes, dense_to_bytes, operator_norm

FORM_TAGS = ("identity", "linear", "kernel-residual", "custom")
_L_FIELD = struct.Struct("<d")


@dataclass(frozen=True, eq=False)
class RegOperator:
    """``G(x) = x - N(x)``.

    Linear residuals keep their matrix in ``weight``; custom (possibly
    nonlinear) residuals are given as a callable with a declared Lipschitz
    bound. ``info`` carries free-form provenance such as the training loss.
    """

    dim: int
    lipschitz_bound: float
    form_tag: str
    weight: Optional[np.ndarray] = None
    residual_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.form_tag not in FORM_TAGS:
            raise InvalidArgumentError(f"unknown form tag {self.form_tag!r}")
        if self.weight is not None:
            w = np.array(self.weight, dtype=np.float64)
            if w.shape != (self.dim, self.dim):
                raise InvalidArgumentError(
                    f"residual matrix has shape {w.shape}, expected {(self.dim, self.dim)}")
            w.setflags(write=False)
            object.__setattr__(self, "weight", w)

    @property
    def is_linear(self):
        return self.form_tag != "custom"

    def residual(self, x):
        if self.form_tag == "identity":
            return np.zeros_like(x, dtype=float)
        if self.weight is not None:
            return self.weight @ x
        return np.asarray(self.residual_fn(x), dtype=float)

    def __call__(self, x):
        return apply_reg(self, x)

    def matrix(self):
        """Dense matrix of ``G`` (linear forms only)."""
        if not self.is_linear:
            raise InvalidArgumentError("custom residual has no matrix form")
        eye = np.eye(self.dim)
        if self.weight is None:
            return eye
        return eye - self.weight

    def residual_matrix(self):
        if not self.is_linear:
            raise InvalidArgumentError("custom residual has no matrix form")
        if self.weight is None:
            return np.zeros((self.dim, self.dim))
        return np.array(self.weight)


def identity_reg(dim: int) -> RegOperator:
    return RegOperator(int(dim), 0.0, "identity")


def linear_reg(weight, lipschitz_bound: Optional[float] = None,
               form_tag: str = "linear") -> RegOperator:
    """``G = I - W`` for a square matrix ``W`` with ``||W|| < 1``.

    Without an explicit bound the spectral norm of ``W`` is computed and used
    as the certificate. An explicit bound is trusted as given; use
    :func:`equivalence_check` to test it.
    """
    w = np.asarray(weight, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvalidArgumentError("residual matrix must be square")
    if lipschitz_bound is None:
        lipschitz_bound = float(np.linalg.norm(w, 2)) if w.size else 0.0
    if not 0.0 <= lipschitz_bound < 1.0:
        raise ContractivityError(lipschitz_bound)
    return RegOperator(w.shape[0], float(lipschitz_bound), form_tag, weight=w)


def custom_reg(residual_fn, dim: int, lipschitz_bound: float) -> RegOperator:
    """Nonlinear ``G = id - N`` from a callable with a declared Lipschitz bound."""
    if not 0.0 <= lipschitz_bound < 1.0:
        raise ContractivityError(lipschitz_bound)
    return RegOperator(int(dim), float(lipschitz_bound), "custom", residual_fn=residual_fn)


def make_subspace_reg(pker: KernelProjector, pv) -> RegOperator:
    """``G = I - P_ker P_V`` for a kernel projector and a subspace projector.

    ``pv`` is anything with an orthonormal ``basis`` of shape ``(dim, q)``.
    The certificate ``L = ||P_ker P_V||`` equals the largest singular value of
    the ``k x q`` cross-Gram matrix of the two bases.
    """
    bk = pker.basis
    bv = np.asarray(pv.basis, dtype=np.float64)
    if bv.shape[0] != pker.dim:
        raise InvalidArgumentError(
            f"subspace basis lives in dim {bv.shape[0]}, kernel in {pker.dim}")
    cross = bk.T @ bv
    norm = float(np.linalg.norm(cross, 2)) if cross.size else 0.0
    if norm >= 1.0:
        raise ContractivityError(
            norm, f"||P_ker P_V|| = {norm:.6g} is not < 1; reduce the subspace dimension")
    weight = bk @ (cross @ bv.T)
    return RegOperator(pker.dim, norm, "kernel-residual", weight=weight)


def composite_norm_power(pker: KernelProjector, pv, tol=1e-13, seed=0):
    """``||P_ker P_V||`` by power iteration on the composed operator."""
    from .linops import DenseMap
    w = pker.basis @ (pker.basis.T @ pv.basis) @ pv.basis.T
    return operator_norm(DenseMap(w), tol=tol, max_iter=100000, seed=seed)


def apply_reg(g: RegOperator, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.dim:
        raise InvalidArgumentError(f"vector of dim {x.shape[-1]} for operator of dim {g.dim}")
    return x - g.residual(x)


def invert_reg(g: RegOperator, v, tol: float = 1e-12, *, full_output: bool = False):
    """Solve ``G(x) = v``.

    Linear residuals use a dense solve of ``(I - W) x = v``. Custom residuals
    use the Banach iteration ``x <- v + N(x)`` with the a-priori budget
    ``ceil(log(tol / (2||v|| + 1)) / log(L)) + 50`` (capped at 1e6).
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    v = np.asarray(v, dtype=np.float64)
    L = g.lipschitz_bound
    if L >= 1.0:
        raise ContractivityError(L)
    if g.form_tag == "identity":
        x, it, ok = v.copy(), 0, True
    elif g.weight is not None:
        x = np.linalg.solve(g.matrix(), v)
        it, ok = 0, True
    else:
        if L > 0:
            budget = math.ceil(math.log(tol / (2 * np.linalg.norm(v) + 1)) / math.log(L)) + 50
        else:
            budget = 50
        budget = int(min(max(budget, 1), 10**6))
        x = v.copy()
        ok = False
        for it in range(1, budget + 1):
            x = v + g.residual(x)
            if np.linalg.norm(apply_reg(g, x) - v) <= tol:
                ok = True
                break
    if full_output:
        return x, {"iterations": it, "converged": ok,
                   "residual": float(np.linalg.norm(apply_reg(g, x) - v))}
    return x


@dataclass(frozen=True)
class BregmanValue:
    value: float
    signed_inner: float


def sym_bregman(g: RegOperator, x, z) -> BregmanValue:
    """Absolute symmetric Bregman distance ``|<G(x) - G(z), x - z>|``."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    inner = float(np.dot(apply_reg(g, x) - apply_reg(g, z), x - z))
    return BregmanValue(abs(inner), inner)


@dataclass(frozen=True)
class EquivalenceReport:
    """Worst relative margins of the equivalence inequalities.

    Each margin is normalized by ``||x - z||^2`` (or ``||x - z||`` for the
    Lipschitz-type checks); a negative value is a violation.
    """

    lower_margin: float
    upper_margin: float
    lipschitz_margin: float
    residual_margin: float
    trials: int
    slack: float

    @property
    def ok(self):
        return min(self.lower_margin, self.upper_margin, self.lipschitz_margin,
                   self.residual_margin) >= -self.slack


def _probe_directions(g: RegOperator):
    """Adversarial difference directions for linear residuals."""
    if g.weight is None:
        return []
    w = g.weight
    sym = 0.5 * (w + w.T)
    evals, evecs = np.linalg.eigh(sym)
    _, _, vt = np.linalg.svd(w)
    _, _, gvt = np.linalg.svd(np.eye(g.dim) - w)
    return [evecs[:, -1], evecs[:, 0], vt[0], gvt[-1]]


def equivalence_check(g: RegOperator, trials: int = 1000, seed: int = 0,
                      slack: float = 1e-9) -> EquivalenceReport:
    """Check ``(1-L)|h|^2 <= <G(x)-G(z), h> <= (1+L)|h|^2`` and ``|G(x)-G(z)| >= (1-L)|h|``.

    Random pairs are drawn from ``seed``; for linear residuals a handful of
    worst-case directions (extreme eigenvectors of the symmetric part of
    ``W``, top singular vector of ``W``, bottom singular vector of ``G``) are
    added so that an under-reported ``L`` is caught. The residual bound
    ``|N(x) - N(z)| <= L |h|`` is checked as well.
    """
    L = g.lipschitz_bound
    if L >= 1.0:
        raise ContractivityError(L)
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((trials, g.dim))
    zs = rng.standard_normal((trials, g.dim))
    pairs = list(zip(xs, zs))
    for d in _probe_directions(g):
        base = rng.standard_normal(g.dim)
        pairs.append((base + d, base))
    lo = up = lip = res = np.inf
    for x, z in pairs:
        h = x - z
        hh = float(h @ h)
        if hh == 0.0:
            continue
        dg = apply_reg(g, x) - apply_reg(g, z)
        inner = float(dg @ h)
        lo = min(lo, (inner - (1 - L) * hh) / hh)
        up = min(up, ((1 + L) * hh - inner) / hh)
        nh = math.sqrt(hh)
        lip = min(lip, (np.linalg.norm(dg) - (1 - L) * nh) / nh)
        res = min(res, (L * nh - np.linalg.norm(g.residual(x) - g.residual(z))) / nh)
    return EquivalenceReport(lo, up, lip, res, len(pairs), slack)


def recoverability_constant(samples, pker: KernelProjector, *, max_exact: int = 2000,
                            n_pairs: int = 2_000_000, seed: int = 0,
                            full_output: bool = False):
    """``sup ||P_ker (x1 - x2)|| / ||x1 - x2||`` over pairs of distinct samples.

    Exact over all pairs for up to ``max_exact`` samples; above that a seeded
    subsample of ``n_pairs`` pairs is used and the result is only a lower
    bound (``info["exact"]`` is False).
    """
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise UndefinedQuantityError("need at least two samples")
    c = x @ pker.basis
    best = -1.0
    if n <= max_exact:
        exact = True
        for i in range(n - 1):
            dx = np.linalg.norm(x[i + 1:] - x[i], axis=1)
            dc = np.linalg.norm(c[i + 1:] - c[i], axis=1)
            nz = dx > 0
            if nz.any():
                best = max(best, float(np.max(dc[nz] / dx[nz])))
    else:
        exact = False
        rng = np.random.default_rng(seed)
        done = 0
        while done < n_pairs:
            m = min(20_000, n_pairs - done)
            i = rng.integers(0, n, m)
            j = rng.integers(0, n, m)
            dx = np.linalg.norm(x[i] - x[j], axis=1)
            dc = np.linalg.norm(c[i] - c[j], axis=1)
            nz = dx > 0
            if nz.any():
                best = max(best, float(np.max(dc[nz] / dx[nz])))
            done += m
    if best < 0:
        raise UndefinedQuantityError("all samples coincide")
    if full_output:
        return best, {"exact": exact}
    return best


def loss_value(g: RegOperator, samples, pker: KernelProjector, lam: float = 0.0) -> float:
    """Empirical mean of ``||P_ker G(x)||^2 + lam ||G(x)||^2``."""
    if lam < 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgumentError("empty dataset")
    if g.is_linear:
        gx = x @ g.matrix().T
    else:
        gx = np.stack([apply_reg(g, row) for row in x])
    kern = gx @ pker.basis
    total = np.sum(kern**2, axis=1)
    if lam:
        total = total + lam * np.sum(gx**2, axis=1)
    return float(np.mean(total))


def lower_bound_error(g: RegOperator, x, alpha: float, norm_A: float) -> float:
    """Lower bound ``alpha ||G(x)|| / (||A||^2 + alpha (1 + L))`` on ``||x - R_alpha A x||``."""
    if alpha <= 0:
        raise InvalidArgumentError("alpha must be positive")
    gx = np.linalg.norm(apply_reg(g, x))
    return float(alpha * gx / (norm_A**2 + alpha * (1 + g.lipschitz_bound)))


def reg_to_bytes(g: RegOperator) -> bytes:
    """Linear operators only: dense container of ``W``, form tag byte, f64 ``L``."""
    if not g.is_linear:
        raise InvalidArgumentError("custom residuals cannot be serialized")
    tag = FORM_TAGS.index(g.form_tag)
    return dense_to_bytes(g.residual_matrix()) + bytes([tag]) + _L_FIELD.pack(g.lipschitz_bound)


def reg_from_bytes(buf: bytes) -> RegOperator:
    """Load a serialized operator. The stored ``L`` is taken as is."""
    w, rest = dense_from_bytes(buf, trailing=True)
    if len(rest) != 1 + _L_FIELD.size:
        raise ParseError(f"expected {1 + _L_FIELD.size} trailer bytes, found {len(rest)}",
                         len(buf) - len(rest))
    if rest[0] >= len(FORM_TAGS) or FORM_TAGS[rest[0]] == "custom":
        raise ParseError(f"bad form tag {rest[0]}", len(buf) - len(rest))
    if w.shape[0] != w.shape[1]:
        raise ParseError(f"residual matrix is not square: {w.shape}", 8)
    (L,) = _L_FIELD.unpack_from(rest, 1)
    tag = FORM_TAGS[rest[0]]
    return RegOperator(w.shape[0], L, tag, weight=None if tag == "identity" else w)


def save_reg(path, g: RegOperator):
    with open(path, "wb") as fh:
        fh.write(reg_to_bytes(g))


def load_reg(path) -> RegOperator:
    with open(path, "rb") as fh:
        return reg_from_bytes(fh.read())
