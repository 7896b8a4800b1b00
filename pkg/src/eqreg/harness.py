"""Noise, convergence-rate sweeps, slope fits and stability probes."""
from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .equilibrium import (
    EquilibriumProblem,
    SolverConfig,
    fast_forward_fixed_point,
    solve,
    solve_fixed_point,
    solve_limiting,
)
from .errors import InsufficientDataError, InvalidArgumentError
from .linops import DEFAULT_SVD_THRESHOLD, LinearMap, SpectralDecomposition, decompose
from .regularizers import RegOperator, apply_reg, sym_bregman

CSV_HEADER = "delta,alpha,residual,bregman,norm_error,iterations,accuracy,converged"
RATE_COLUMNS = ("residual", "bregman", "norm_error")


def default_deltas(count: int = 13, largest: float = 1e-1, smallest: float = 1e-7):
    return list(np.geomspace(largest, smallest, count))


def thread_cap(default: int = 1) -> int:
    """Worker count from ``EQREG_THREADS`` (at least 1)."""
    raw = os.environ.get("EQREG_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidArgumentError(f"EQREG_THREADS must be an integer, got {raw!r}") from None


def fmt(value) -> str:
    return format(float(value), ".17g")


@dataclass(frozen=True)
class NoiseSpec:
    target_delta: float
    seed: int = 0
    kind: str = "gaussian-rescaled"


def add_noise(y, spec: NoiseSpec):
    """``y + delta * g / ||g||`` with ``g`` standard Gaussian from ``spec.seed``."""
    if spec.target_delta < 0:
        raise InvalidArgumentError("noise level must be nonnegative")
    y = np.asarray(y, dtype=np.float64)
    if spec.target_delta == 0:
        return y.copy()
    seed = spec.seed
    while True:
        g = np.random.default_rng(seed).standard_normal(y.shape)
        ng = np.linalg.norm(g)
        if ng > 0:
            return y + spec.target_delta * (g / ng)
        seed += 1


def row_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass(frozen=True)
class RateRow:
    delta: float
    alpha: float
    residual: float
    bregman: float
    norm_error: float
    iterations: int
    accuracy: float
    converged: bool
    initial_residual: float = float("nan")

    def csv_line(self):
        return ",".join([fmt(self.delta), fmt(self.alpha), fmt(self.residual),
                         fmt(self.bregman), fmt(self.norm_error), str(int(self.iterations)),
                         fmt(self.accuracy), str(int(self.converged))])


@dataclass
class RateTable:
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        deltas = [r.delta for r in self.rows]
        if any(b >= a for a, b in zip(deltas, deltas[1:])):
            raise InvalidArgumentError("deltas must be strictly decreasing")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            buf.write(r.csv_line() + "\n")
        return buf.getvalue()

    def metadata_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.metadata.items()))

    def write(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())
        with open(str(path) + ".meta", "w", newline="\n") as fh:
            fh.write(self.metadata_text())


def read_rate_csv(path) -> RateTable:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise InvalidArgumentError(f"{path}: unexpected CSV header")
    rows = []
    for line in lines[1:]:
        d, a, r, b, e, it, acc, conv = line.split(",")
        rows.append(RateRow(float(d), float(a), float(r), float(b), float(e), int(it),
                            float(acc), bool(int(conv))))
    return RateTable(rows)


def _sweep_row(problem_base, reg, x_true, x_plus, delta, alpha, tol, seed, max_iter):
    A = problem_base
    y_delta = add_noise(A.apply(x_true), NoiseSpec(delta, seed))
    problem = EquilibriumProblem(A, reg, alpha, y_delta)
    config = SolverConfig(tol=tol, max_iter=max_iter)
    if reg.is_linear:
        report = fast_forward_fixed_point(problem, config)
    else:
        report = solve_fixed_point(problem, config)
    x = report.x
    return RateRow(
        delta=float(delta),
        alpha=float(alpha),
        residual=float(np.linalg.norm(A.apply(x) - y_delta)),
        bregman=sym_bregman(reg, x, x_plus).value,
        norm_error=float(np.linalg.norm(x - x_plus)),
        iterations=report.iterations,
        accuracy=report.residual_norm,
        converged=report.converged,
        initial_residual=report.initial_residual,
    )


def run_rate_sweep(forward: LinearMap, reg: RegOperator, x_true, deltas: Sequence[float],
                   alpha_rule: Callable[[float], float] = lambda d: d, seed: int = 0, *,
                   accuracy_rule: Callable[[float], float] = lambda d: d * math.sqrt(d),
                   x_plus=None, decomp: Optional[SpectralDecomposition] = None,
                   threads: Optional[int] = None, max_iter: int = 10**15,
                   metadata: Optional[dict] = None) -> RateTable:
    """Solve the equilibrium equation for each noise level and tabulate errors.

    Errors are measured against ``x_plus``, by default the limiting solution
    for the exact data ``A x_true``. The solver stops at
    ``||T|| <= accuracy_rule(delta)``. Row ``i`` draws its noise from
    ``(seed, i)`` so the table does not depend on ``threads``; unconverged
    rows are kept and flagged.
    """
    deltas = [float(d) for d in deltas]
    if not deltas or any(d <= 0 for d in deltas):
        raise InvalidArgumentError("deltas must be positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise InvalidArgumentError("deltas must be strictly decreasing")
    x_true = np.asarray(x_true, dtype=np.float64)
    if x_plus is None:
        decomp = decomp or decompose(forward)
        x_plus = solve_limiting(forward, reg, forward.apply(x_true), decomp)
    threads = threads or thread_cap()
    forward.norm  # warm the cached norm before workers share the operator
    jobs = [(forward, reg, x_true, x_plus, d, alpha_rule(d), accuracy_rule(d),
             row_seed(seed, i), max_iter) for i, d in enumerate(deltas)]
    if threads == 1:
        rows = [_sweep_row(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda job: _sweep_row(*job), jobs))
    meta = {"seed": seed, "operator": getattr(forward, "kind", "?"),
            "L": fmt(reg.lipschitz_bound), "tol_rule": "delta^1.5"}
    meta.update(metadata or {})
    return RateTable(rows, meta)


def fit_slope(table: RateTable, column: str, delta_range=(1e-7, math.inf), *,
              full_output: bool = False):
    """Least-squares slope of ``log(column)`` against ``log(delta)``.

    Rows outside ``delta_range`` (inclusive) are ignored and rows whose value
    is ``<= 1e-15`` are excluded; the excluded deltas are listed in the info
    dict when ``full_output`` is set.
    """
    d = table.column("delta")
    v = table.column(column)
    lo, hi = (0.0, math.inf) if delta_range is None else delta_range
    in_range = (d >= lo * (1 - 1e-12)) & (d <= hi * (1 + 1e-12))
    tiny = in_range & ~(v > 1e-15)
    use = in_range & (v > 1e-15)
    if use.sum() < 3:
        raise InsufficientDataError(
            f"need at least 3 usable rows for a slope fit, have {int(use.sum())}")
    slope, intercept = np.polyfit(np.log(d[use]), np.log(v[use]), 1)
    if full_output:
        return float(slope), {"intercept": float(intercept), "used": int(use.sum()),
                              "excluded": list(d[tiny])}
    return float(slope)


def has_interior_minimum(table: RateTable, column: str = "norm_error") -> bool:
    v = table.column(column)
    k = int(np.argmin(v))
    return 0 < k < len(v) - 1


class Aggregate(dict):
    """Column mapping with the ``column`` accessor used by :func:`fit_slope`."""

    def column(self, name):
        return np.asarray(self[name], dtype=float)


def aggregate(tables: Sequence[RateTable]) -> Aggregate:
    """Per-delta mean and standard deviation of the rate columns over signals."""
    if not tables:
        raise InsufficientDataError("no tables to aggregate")
    deltas = tables[0].column("delta")
    for t in tables[1:]:
        if not np.array_equal(t.column("delta"), deltas):
            raise InvalidArgumentError("tables use different delta grids")
    out = Aggregate(delta=deltas)
    for name in RATE_COLUMNS:
        stack = np.stack([t.column(name) for t in tables])
        out[name + "_mean"] = stack.mean(axis=0)
        out[name + "_std"] = stack.std(axis=0)
    return out


def aggregate_csv(agg) -> str:
    cols = ["delta"] + [f"{n}_{s}" for n in RATE_COLUMNS for s in ("mean", "std")]
    lines = [",".join(cols)]
    for i in range(len(agg["delta"])):
        lines.append(",".join(fmt(agg[c][i]) for c in cols))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BoundCheck:
    measured: float
    bound: float
    slack: float

    @property
    def passed(self):
        return self.measured <= self.bound + self.slack


@dataclass(frozen=True)
class StabilityReport:
    data_fit: BoundCheck
    bregman: BoundCheck
    norm: BoundCheck

    @property
    def ok(self):
        return self.data_fit.passed and self.bregman.passed and self.norm.passed


def stability_probe(forward: LinearMap, reg: RegOperator, alpha: float, y1, y2,
                    tol: float = 1e-10) -> StabilityReport:
    """Solve for two data sets and compare against the three stability estimates.

    (a) ``||A(x1 - x2)|| <= ||y1 - y2||``,
    (b) ``<G(x1) - G(x2), x1 - x2> <= ||y1 - y2||^2 / (2 alpha)``,
    (c) ``||x1 - x2|| <= sqrt(1 / (2 alpha (1 - L))) ||y1 - y2||``,
    each with slack ``10 tol / (alpha (1 - L))``.
    """
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    L = reg.lipschitz_bound
    r1 = solve(EquilibriumProblem(forward, reg, alpha, y1), tol)
    r2 = solve(EquilibriumProblem(forward, reg, alpha, y2), tol)
    if not (r1.converged and r2.converged):
        raise InvalidArgumentError(
            f"stability probe aborted: solver residuals {r1.residual_norm:.3g}, "
            f"{r2.residual_norm:.3g} above tol {tol:.3g}")
    dx = r1.x - r2.x
    dy = float(np.linalg.norm(np.asarray(y1, float) - np.asarray(y2, float)))
    slack = 10 * tol / (alpha * (1 - L))
    inner = sym_bregman(reg, r1.x, r2.x).signed_inner
    return StabilityReport(
        BoundCheck(float(np.linalg.norm(forward.apply(dx))), dy, slack),
        BoundCheck(inner, dy**2 / (2 * alpha), slack),
        BoundCheck(float(np.linalg.norm(dx)), math.sqrt(1 / (2 * alpha * (1 - L))) * dy, slack),
    )


def source_condition_residual(forward: LinearMap, reg: RegOperator, x_plus,
                              decomp: Optional[SpectralDecomposition] = None,
                              threshold: float = DEFAULT_SVD_THRESHOLD) -> float:
    """Relative distance of ``G(x_plus)`` from ``ran(A*)``.

    ``min_w ||A* w - G(x+)|| / ||G(x+)||``, with ``ran(A*)`` spanned by the
    right singular vectors whose singular values reach ``threshold``.
    """
    decomp = decomp or decompose(forward)
    g = apply_reg(reg, x_plus)
    s = decomp.singular_values
    k = int(np.count_nonzero(s >= threshold))
    vr = decomp.right_vectors[:, :k]
    defect = g - vr @ (vr.T @ g)
    return float(np.linalg.norm(defect) / max(float(np.linalg.norm(g)), 1e-300))
