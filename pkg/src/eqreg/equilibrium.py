"""Solvers for ``A*(Ax - y) + alpha G(x) = 0`` and for its limiting problem.

Fixed-point solves iterate ``x <- x - beta (A*(Ax - y) + alpha G(x))``.
With ``beta <= 1 / (||A||^2 + alpha)`` this map contracts with constant
``gamma = 1 - alpha beta (1 - L)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ContractivityError, InvalidArgumentError
from .linops import (
    DEFAULT_SVD_THRESHOLD,
    LinearMap,
    SpectralDecomposition,
    kernel_projector,
    pseudo_apply,
)
from .regularizers import RegOperator, apply_reg, invert_reg

# relative slack on the step-size bound, since ||A|| is itself an estimate
_BETA_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class EquilibriumProblem:
    forward: LinearMap
    reg: RegOperator
    alpha: float
    data: np.ndarray

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        if self.forward.in_dim != self.reg.dim:
            raise InvalidArgumentError(
                f"operator domain {self.forward.in_dim} != regularizer dim {self.reg.dim}")
        y = np.asarray(self.data, dtype=np.float64)
        if y.shape != (self.forward.out_dim,):
            raise InvalidArgumentError(
                f"data has shape {y.shape}, expected ({self.forward.out_dim},)")
        object.__setattr__(self, "data", y)

    @property
    def dim(self):
        return self.forward.in_dim

    def max_beta(self):
        return 1.0 / (self.forward.norm**2 + self.alpha)

    def contraction_bound(self, beta=None):
        beta = self.max_beta() if beta is None else beta
        return 1.0 - self.alpha * beta * (1.0 - self.reg.lipschitz_bound)


@dataclass(frozen=True)
class SolverConfig:
    """``beta=None`` means the largest admissible step ``1 / (||A||^2 + alpha)``."""

    beta: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 1_000_000
    x0: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class SolveReport:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    contraction_estimate: float
    initial_residual: float = float("nan")

    def csv_fields(self):
        return {"iterations": self.iterations, "accuracy": self.residual_norm,
                "converged": int(self.converged)}


def residual_T(problem: EquilibriumProblem, x) -> np.ndarray:
    """``A*(Ax - y) + alpha G(x)``."""
    A = problem.forward
    return A.adjoint(A.apply(x) - problem.data) + problem.alpha * apply_reg(problem.reg, x)


def _resolve_config(problem, config):
    config = config or SolverConfig()
    bmax = problem.max_beta()
    beta = bmax if config.beta is None else float(config.beta)
    if not 0 < beta <= bmax * (1 + _BETA_SLACK):
        raise InvalidArgumentError(f"beta={beta} outside (0, {bmax}]")
    if problem.reg.lipschitz_bound >= 1:
        raise ContractivityError(problem.reg.lipschitz_bound)
    x0 = np.zeros(problem.dim) if config.x0 is None else np.array(config.x0, dtype=np.float64)
    return beta, x0, config


def solve_fixed_point(problem: EquilibriumProblem, config: SolverConfig = None) -> SolveReport:
    """Damped fixed-point iteration, stopped once ``||T_alpha(x, y)|| <= tol``.

    Exhausting ``max_iter`` is not an error: the report comes back with
    ``converged=False``. ``contraction_estimate`` is the largest observed
    ratio of successive residual norms.
    """
    beta, x, config = _resolve_config(problem, config)
    tol = config.tol
    t = residual_T(problem, x)
    tn = float(np.linalg.norm(t))
    t0 = tn
    # ratios below this floor are dominated by rounding
    floor = 1e3 * np.finfo(float).eps * max(1.0, np.linalg.norm(problem.data))
    worst = 0.0
    it = 0
    while tn > tol and it < config.max_iter:
        x = x - beta * t
        t = residual_T(problem, x)
        prev, tn = tn, float(np.linalg.norm(t))
        it += 1
        if prev > floor:
            worst = max(worst, tn / prev)
    return SolveReport(x, it, tn, tn <= tol, worst, t0)


def _system(problem):
    A = problem.forward.to_dense()
    g = problem.reg
    if not g.is_linear:
        raise InvalidArgumentError("direct solve needs a linear regularizer")
    M = A.T @ A + problem.alpha * g.matrix()
    return M, A.T @ problem.data


def solve_direct_linear(problem: EquilibriumProblem) -> np.ndarray:
    """Solve ``(A^T A + alpha (I - W)) x = A^T y`` by LU factorization."""
    M, b = _system(problem)
    return np.linalg.solve(M, b)


def solve(problem: EquilibriumProblem, tol: float = 1e-10) -> SolveReport:
    """Best available solve to accuracy ``tol``.

    Linear regularizers get a direct solve, polished by fixed-point steps if
    the direct residual misses ``tol``; custom ones iterate from zero.
    """
    if problem.reg.is_linear:
        x = solve_direct_linear(problem)
        t = float(np.linalg.norm(residual_T(problem, x)))
        if t <= tol:
            return SolveReport(x, 0, t, True, float("nan"))
        return solve_fixed_point(problem, SolverConfig(tol=tol, x0=x))
    return solve_fixed_point(problem, SolverConfig(tol=tol))


def _first_below(resid, tol, limit):
    """Smallest ``n`` in ``[0, limit]`` with ``resid(n) <= tol`` for decreasing ``resid``."""
    if resid(0) <= tol:
        return 0
    lo, hi = 0, 1
    while resid(hi) > tol:
        if hi >= limit:
            return None
        lo, hi = hi, min(2 * hi, limit)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if resid(mid) <= tol:
            hi = mid
        else:
            lo = mid
    return hi


def fast_forward_fixed_point(problem: EquilibriumProblem,
                             config: SolverConfig = None) -> SolveReport:
    """Same iterates and stopping rule as :func:`solve_fixed_point`, in closed form.

    For linear ``G`` the iteration is ``x_n = x* + M^{-1} F^n T(x_0)`` with
    ``M = A^T A + alpha (I - W)`` and ``F = I - beta M``. Powers of ``F`` are
    taken in the eigenbasis of ``M``, so iteration counts in the billions
    (small ``alpha``) cost ``O(dim^3 + dim^2 log n)``. Since ``F`` is a
    contraction the residual norms decrease with ``n`` and the first
    iteration meeting ``tol`` is found by bisection. The returned residual is
    re-evaluated directly from the returned iterate.
    """
    beta, x0, config = _resolve_config(problem, config)
    tol = config.tol
    M, b = _system(problem)
    xstar = np.linalg.solve(M, b)
    r0 = M @ x0 - b
    t0 = float(np.linalg.norm(residual_T(problem, x0)))
    mu, V = np.linalg.eig(M)
    coef = np.linalg.solve(V, r0)
    if np.all(mu.imag == 0):
        mu, V, coef = mu.real, V.real, coef.real
        bm = beta * mu
        lam = 1.0 - bm
        with np.errstate(divide="ignore", invalid="ignore"):
            logabs = np.where(bm < 0.5, np.log1p(-np.minimum(bm, 0.5)), np.log(np.abs(lam)))
        negative = lam < 0

        def powers(n):
            if n == 0:
                return np.ones_like(logabs)
            p = np.exp(n * logabs)
            return np.where(negative & (n % 2 == 1), -p, p)
    else:
        lam = (1 - beta * mu).astype(complex)
        zero = lam == 0
        loglam = np.log(np.where(zero, 1.0, lam))

        def powers(n):
            if n == 0:
                return np.ones_like(loglam)
            return np.where(zero, 0.0, np.exp(n * loglam))

    def resid(n):
        return float(np.linalg.norm(V @ (powers(n) * coef)))

    limit = int(config.max_iter)
    n = _first_below(resid, tol, limit)

    def iterate(k):
        return np.real(xstar + V @ (powers(k) * coef / mu))

    converged = n is not None
    n = limit if n is None else n
    x = iterate(n)
    tn = float(np.linalg.norm(residual_T(problem, x)))
    # rounding in the eigenbasis can leave the re-evaluated residual just above tol
    bumps = 0
    while converged and tn > tol and bumps < 60 and n < limit:
        n = min(limit, n + max(1, n >> 12) * (1 << bumps))
        x = iterate(n)
        tn = float(np.linalg.norm(residual_T(problem, x)))
        bumps += 1
    converged = tn <= tol
    ratio = resid(n) / resid(n - 1) if n > 0 and resid(n - 1) > 0 else 0.0
    return SolveReport(x, n, tn, converged, ratio, t0)


def solve_limiting(forward: LinearMap, reg: RegOperator, y, decomp: SpectralDecomposition,
                   tol: float = 1e-10, threshold: float = DEFAULT_SVD_THRESHOLD,
                   range_tol: float = 1e-8) -> np.ndarray:
    """Solution of ``Ax = y`` with ``G(x)`` orthogonal to ``ker(A)``.

    The solution is ``A^+ y + B c`` with ``B`` an orthonormal kernel basis.
    For linear ``G = I - W`` the coordinates solve
    ``(I - B^T W B) c = B^T W A^+ y``; otherwise ``c <- B^T N(A^+ y + B c)``
    is iterated, which contracts with constant ``L``.
    """
    y = np.asarray(y, dtype=np.float64)
    if reg.lipschitz_bound >= 1:
        raise ContractivityError(reg.lipschitz_bound)
    xp = pseudo_apply(decomp, y, threshold)
    defect = float(np.linalg.norm(forward.apply(xp) - y))
    if defect > range_tol * max(1.0, float(np.linalg.norm(y))):
        raise InvalidArgumentError(f"data not in the range of A: range defect {defect:.3g}")
    B = kernel_projector(decomp, threshold).basis
    k = B.shape[1]
    if k == 0:
        return xp
    if reg.is_linear:
        W = reg.residual_matrix()
        lhs = np.eye(k) - B.T @ W @ B
        c = np.linalg.solve(lhs, B.T @ (W @ xp))
        return xp + B @ c
    c = np.zeros(k)
    L = reg.lipschitz_bound
    for _ in range(10**6):
        c_new = B.T @ reg.residual(xp + B @ c)
        step = float(np.linalg.norm(c_new - c))
        c = c_new
        # ||P_ker G(x)|| at the new iterate is at most L * step
        if L * step <= tol:
            break
    return xp + B @ c


def nullspace_oracle(forward: LinearMap, reg: RegOperator, alpha: float, y) -> np.ndarray:
    """``G^{-1}((A^T A + alpha I)^{-1} A^T y)`` for kernel-residual ``G``.

    For ``G = I - P_ker N`` the equilibrium splits into a Tikhonov solve for
    the part orthogonal to the kernel and an inversion of ``G`` for the rest,
    which makes this an independent check of the equilibrium solvers.
    """
    if reg.form_tag not in ("kernel-residual", "identity"):
        raise InvalidArgumentError(f"nullspace form needs a kernel-residual G, got {reg.form_tag!r}")
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    A = forward.to_dense()
    x1 = np.linalg.solve(A.T @ A + alpha * np.eye(A.shape[1]), A.T @ np.asarray(y, float))
    return invert_reg(reg, x1, tol=1e-14)


def predict_iterations(delta: float, alpha: float, L: float, norm_A: float,
                       target: float, c0: float) -> int:
    """Smallest ``n`` with ``c0 * gamma**n <= target``.

    ``gamma = 1 - alpha beta (1 - L)`` with ``beta = 1 / (norm_A**2 + alpha)``.
    With ``alpha ~ delta`` and ``target ~ delta**1.5`` this grows like
    ``log(delta) / ((L - 1) delta)``. ``delta`` only documents the call site.
    """
    if min(alpha, norm_A, target, c0) <= 0 or delta < 0:
        raise InvalidArgumentError("all inputs must be positive")
    if not 0 <= L < 1:
        raise ContractivityError(L)
    if target >= c0:
        return 0
    beta = 1.0 / (norm_A**2 + alpha)
    log_gamma = math.log1p(-alpha * beta * (1 - L))
    return max(0, math.ceil(math.log(target / c0) / log_gamma))


def is_equilibrium_for_exact_data(forward, reg, alpha, x, tol=1e-10):
    """Whether ``x`` solves the equilibrium equation with data ``Ax``.

    This happens exactly when ``G(x) = 0``; the residual there equals
    ``alpha G(x)``, so the check is ``||residual|| / alpha <= tol``.
    """
    x = np.asarray(x, dtype=np.float64)
    prob = EquilibriumProblem(forward, reg, alpha, forward.apply(x))
    return float(np.linalg.norm(residual_T(prob, x))) / alpha <= tol


def with_data(problem: EquilibriumProblem, y) -> EquilibriumProblem:
    return replace(problem, data=np.asarray(y, dtype=np.float64))
