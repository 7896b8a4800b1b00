"""Subspace priors by PCA and the loss-minimizing linear regularizer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractivityError, InvalidArgumentError
from .linops import KernelProjector
from .regularizers import RegOperator, loss_value, make_subspace_reg

DEFAULT_Q = {"inpainting": 256, "deblur": 512}


@dataclass(frozen=True, eq=False)
class SubspaceProjector:
    """Orthogonal projector onto the span of ``basis`` (shape ``(dim, q)``)."""

    basis: np.ndarray
    explained_energy: float = 1.0

    def __post_init__(self):
        b = np.array(self.basis, dtype=np.float64)
        if b.ndim != 2:
            raise InvalidArgumentError("basis must be a 2D array")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def q(self):
        return self.basis.shape[1]

    @property
    def dim(self):
        return self.basis.shape[0]

    def apply(self, x):
        return (x @ self.basis) @ self.basis.T if np.ndim(x) == 2 else self.basis @ (self.basis.T @ x)

    def matrix(self):
        return self.basis @ self.basis.T


def _fix_signs(vectors):
    # largest-magnitude entry positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca_fit(dataset: Dataset, q: int) -> SubspaceProjector:
    """Top-``q`` principal directions of the mean-centered samples.

    The projector is the linear (not affine) projector onto their span.
    """
    x = dataset.samples
    n, dim = x.shape
    if not 1 <= q <= min(dim, n):
        raise InvalidArgumentError(f"q={q} must lie in [1, {min(dim, n)}]")
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    basis = _fix_signs(vt[:q].T)
    energy = float(np.sum(s[:q] ** 2))
    total = float(np.sum(s**2))
    return SubspaceProjector(basis, energy / total if total > 0 else 1.0)


def project_dataset(dataset: Dataset, pv: SubspaceProjector) -> Dataset:
    if dataset.dim != pv.dim:
        raise InvalidArgumentError(f"dataset dim {dataset.dim} != subspace dim {pv.dim}")
    return Dataset(pv.apply(dataset.samples).reshape(len(dataset), pv.dim),
                   dataset.shape_hint, "projected")


def train_linear_reg(dataset: Dataset, pker: KernelProjector, q: int) -> RegOperator:
    """Fit ``P_V`` by PCA and return ``G = I - P_ker P_V``.

    On ``P_V(S)`` this operator attains zero training loss. The achieved
    loss, ``q`` and the fitted subspace are recorded in ``G.info``.
    """
    pv = pca_fit(dataset, q)
    try:
        g = make_subspace_reg(pker, pv)
    except ContractivityError as exc:
        raise ContractivityError(
            exc.norm, f"||P_ker P_V|| = {exc.norm:.6g} >= 1 for q={q}; reduce q") from None
    projected = project_dataset(dataset, pv)
    g.info.update(q=q, subspace=pv, train_loss=loss_value(g, projected, pker, 0.0))
    return g
