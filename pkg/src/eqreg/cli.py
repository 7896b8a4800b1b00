"""Command-line front end: ``eqreg {train,sweep,solve,verify,info}``.

Runs are configured by a flat ``key=value`` file plus ``--set key=value``
overrides. Exit codes: 0 success, 1 property failure, 2 configuration or
data error.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import harness
from .data import load_idx, make_synthetic, split
from .equilibrium import (
    EquilibriumProblem,
    SolverConfig,
    fast_forward_fixed_point,
    is_equilibrium_for_exact_data,
    residual_T,
    solve,
    solve_fixed_point,
    solve_limiting,
)
from .errors import ContractivityError, EqregError
from .linops import (
    dense_from_bytes,
    dense_to_bytes,
    decompose,
    kernel_projector,
    load_map,
    make_inpainting,
    make_motion_blur,
)
from .regularizers import (
    apply_reg,
    equivalence_check,
    identity_reg,
    load_reg,
    loss_value,
    lower_bound_error,
    recoverability_constant,
    save_reg,
)
from .training import DEFAULT_Q, SubspaceProjector, project_dataset, train_linear_reg

EXIT_OK, EXIT_PROPERTY, EXIT_CONFIG = 0, 1, 2


class ConfigError(EqregError):
    pass


def parse_rows(text: str):
    """``"0-9"`` or ``"0,1,5-7"`` to a sorted list of row indices."""
    rows = set()
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "-" in part:
            a, b = part.split("-", 1)
            rows.update(range(int(a), int(b) + 1))
        else:
            rows.add(int(part))
    return sorted(rows)


@dataclass
class RunConfig:
    operator: str = "inpainting"
    image_shape: str = "28x28"
    zeroed_rows: str = "0-9"
    kernel_size: int = 5
    dense_file: str = ""
    q: int = 0
    svd_threshold: float = 1e-12
    alpha_coef: float = 1.0
    delta_max: float = 1e-1
    delta_min: float = 1e-7
    delta_count: int = 13
    seed: int = 0
    data: str = "synthetic"
    train_data: str = ""
    test_data: str = ""
    n_train: int = 10000
    n_test: int = 10000
    synthetic_q: int = 0
    n_sweep: int = 0
    tol_rule: str = "delta^1.5"
    output_dir: str = "out"
    solve_index: int = 0
    solve_delta: float = 1e-3

    @classmethod
    def from_sources(cls, path: Optional[str], overrides=()):
        values = {}
        if path:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            for n, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{n}: expected key=value")
                k, v = line.split("=", 1)
                values[k.strip()] = v.strip()
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            values[k.strip()] = v.strip()
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            typ = known[k].type
            try:
                kwargs[k] = int(v) if typ == "int" else float(v) if typ == "float" else v
            except ValueError:
                raise ConfigError(f"bad value for {k}: {v!r}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @property
    def shape(self):
        try:
            r, c = (int(s) for s in self.image_shape.lower().split("x"))
        except ValueError:
            raise ConfigError(f"image_shape must look like 28x28, got {self.image_shape!r}") from None
        return r, c

    @property
    def q_effective(self):
        return self.q or DEFAULT_Q.get(self.operator, 8)

    def validate(self):
        if self.operator not in ("inpainting", "deblur", "dense-file"):
            raise ConfigError(f"unknown operator {self.operator!r}")
        if self.data not in ("synthetic", "idx"):
            raise ConfigError(f"unknown data source {self.data!r}")
        if not (0 < self.delta_min <= self.delta_max) or self.delta_count < 1:
            raise ConfigError("delta grid needs 0 < delta_min <= delta_max and delta_count >= 1")
        if self.alpha_coef <= 0 or self.svd_threshold <= 0:
            raise ConfigError("alpha_coef and svd_threshold must be positive")
        self.tolerance(1.0)
        if self.data == "idx":
            for p in filter(None, (self.train_data, self.test_data)):
                if not Path(p).is_file():
                    raise ConfigError(f"data file not found: {p}")
            if not self.train_data:
                raise ConfigError("data=idx needs train_data (MNIST train-images-idx3-ubyte)")

    def tolerance(self, delta):
        rule = self.tol_rule.strip()
        if rule == "delta^1.5":
            return delta * math.sqrt(delta)
        if rule.startswith("fixed:"):
            try:
                return float(rule[6:])
            except ValueError:
                pass
        raise ConfigError(f"tol_rule must be 'delta^1.5' or 'fixed:<eps>', got {rule!r}")

    def deltas(self):
        if self.delta_count == 1:
            return [self.delta_max]
        return harness.default_deltas(self.delta_count, self.delta_max, self.delta_min)


def build_forward(cfg: RunConfig):
    if cfg.operator == "inpainting":
        return make_inpainting(cfg.shape, parse_rows(cfg.zeroed_rows))
    if cfg.operator == "deblur":
        return make_motion_blur(cfg.shape, cfg.kernel_size)
    if not cfg.dense_file or not Path(cfg.dense_file).is_file():
        raise ConfigError(f"dense_file not found: {cfg.dense_file!r}")
    return load_map(cfg.dense_file)


def load_datasets(cfg: RunConfig, dim: int):
    """Training and test sets (before projection onto the fitted subspace)."""
    if cfg.data == "synthetic":
        q = cfg.synthetic_q or cfg.q_effective
        if q > dim:
            raise ConfigError(f"synthetic_q={q} exceeds signal dim {dim}")
        ds, _ = make_synthetic(dim, q, cfg.n_train + cfg.n_test, cfg.seed)
        return split(ds, cfg.n_train, cfg.n_test, cfg.seed)
    train_all = load_idx(cfg.train_data)
    if cfg.test_data:
        test_all = load_idx(cfg.test_data)
        train, _ = split(train_all, min(cfg.n_train, len(train_all)), 0, cfg.seed)
        test, _ = split(test_all, min(cfg.n_test, len(test_all)), 0, cfg.seed + 1)
    else:
        n_tr = min(cfg.n_train, len(train_all))
        train, test = split(train_all, n_tr, min(cfg.n_test, len(train_all) - n_tr), cfg.seed)
    for ds in (train, test):
        if ds.dim != dim:
            raise ConfigError(f"dataset dim {ds.dim} does not match operator dim {dim}")
    return train, test


def model_paths(model: str):
    return Path(model), Path(str(model) + ".subspace")


def load_model(model: str):
    reg_path, sub_path = model_paths(model)
    if not reg_path.is_file() or not sub_path.is_file():
        raise ConfigError(f"model artifact missing: {reg_path} / {sub_path}")
    reg = load_reg(reg_path)
    basis = dense_from_bytes(sub_path.read_bytes())
    return reg, SubspaceProjector(basis)


def _out(line=""):
    print(line, flush=True)


def cmd_train(cfg: RunConfig, model: Optional[str]):
    A = build_forward(cfg)
    decomp = decompose(A)
    pker = kernel_projector(decomp, cfg.svd_threshold)
    train, _ = load_datasets(cfg, A.in_dim)
    if len(train) == 0:
        raise ConfigError("training set is empty")
    try:
        g = train_linear_reg(train, pker, cfg.q_effective)
    except ContractivityError as exc:
        _out(f"error: contractivity violation, measured ||P_ker P_V|| = {exc.norm:.6f}")
        return EXIT_CONFIG
    pv = g.info["subspace"]
    projected = project_dataset(train, pv)
    lstar, info = recoverability_constant(projected, pker, seed=cfg.seed, full_output=True)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reg_path, sub_path = model_paths(model or out / "model.eqlm")
    save_reg(reg_path, g)
    sub_path.write_bytes(dense_to_bytes(pv.basis))
    _out(f"model={reg_path}")
    _out(f"kernel_dim={pker.rank}")
    _out(f"q={cfg.q_effective}")
    _out(f"L={g.lipschitz_bound:.6f}")
    _out(f"L0={g.info['train_loss']:.3e}")
    _out(f"L_star={lstar:.6f}" + ("" if info["exact"] else " (sampled lower bound)"))
    return EXIT_OK


def _test_signals(cfg, pv, dim):
    _, test = load_datasets(cfg, dim)
    test = project_dataset(test, pv) if len(test) else test
    n = len(test) if cfg.n_sweep <= 0 else min(cfg.n_sweep, len(test))
    return test.samples[:n]


PLOT_TEMPLATE = """\
# gnuplot script: log-log rate curves with the delta -> delta reference line
set datafile separator ","
set logscale xy
set key top left
set xlabel "delta"
set terminal pngcairo size 1200,450
set output "rates.png"
set multiplot layout 1,2
set title "symmetric Bregman distance"
plot "aggregate.csv" every ::1 using 1:4 with lines title "mean", \\
     "" every ::1 using 1:($4-$5) with lines dt 2 title "mean - std", \\
     "" every ::1 using 1:($4+$5) with lines dt 2 title "mean + std", \\
     x with lines lc rgb "black" title "reference"
set title "residual"
plot "aggregate.csv" every ::1 using 1:2 with lines title "mean", \\
     "" every ::1 using 1:($2-$3) with lines dt 2 title "mean - std", \\
     "" every ::1 using 1:($2+$3) with lines dt 2 title "mean + std", \\
     x with lines lc rgb "black" title "reference"
unset multiplot
"""


def cmd_sweep(cfg: RunConfig, model: Optional[str]):
    reg, pv = load_model(model or Path(cfg.output_dir) / "model.eqlm")
    A = build_forward(cfg)
    signals = _test_signals(cfg, pv, A.in_dim)
    if len(signals) == 0:
        _out("error: empty test set")
        return EXIT_CONFIG
    decomp = decompose(A)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    for i, x in enumerate(signals):
        table = harness.run_rate_sweep(
            A, reg, x, cfg.deltas(), lambda d: cfg.alpha_coef * d, harness.row_seed(cfg.seed, i),
            accuracy_rule=cfg.tolerance, decomp=decomp,
            metadata={"q": pv.q, "tol_rule": cfg.tol_rule, "signal": i})
        table.write(out / f"sweep_{i:04d}.csv")
        tables.append(table)
    agg = harness.aggregate(tables)
    (out / "aggregate.csv").write_text(harness.aggregate_csv(agg))
    (out / "plot_rates.gp").write_text(PLOT_TEMPLATE)
    rows = [r for t in tables for r in t.rows]
    bad = sum(not r.converged for r in rows)
    _out(f"signals={len(tables)} rows={len(rows)} unconverged={bad}")
    for col in harness.RATE_COLUMNS:
        try:
            _out(f"slope_{col}={harness.fit_slope(agg, col + '_mean'):.4f}")
        except EqregError as exc:
            _out(f"slope_{col}=n/a ({exc})")
    return EXIT_PROPERTY if bad == len(rows) else EXIT_OK


def cmd_solve(cfg: RunConfig, model: Optional[str], data_path: Optional[str]):
    reg, pv = load_model(model or Path(cfg.output_dir) / "model.eqlm")
    A = build_forward(cfg)
    delta = cfg.solve_delta
    if data_path:
        y = dense_from_bytes(Path(data_path).read_bytes()).ravel()
    else:
        signals = _test_signals(cfg, pv, A.in_dim)
        if not 0 <= cfg.solve_index < len(signals):
            raise ConfigError(f"solve_index {cfg.solve_index} outside test set of {len(signals)}")
        y = harness.add_noise(A.apply(signals[cfg.solve_index]),
                              harness.NoiseSpec(delta, cfg.seed))
    problem = EquilibriumProblem(A, reg, cfg.alpha_coef * delta, y)
    config = SolverConfig(tol=cfg.tolerance(delta), max_iter=10**15)
    report = fast_forward_fixed_point(problem, config) if reg.is_linear \
        else solve_fixed_point(problem, config)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "solution.eqlm").write_bytes(dense_to_bytes(report.x.reshape(-1, 1)))
    _out(f"alpha={harness.fmt(problem.alpha)}")
    _out(f"iterations={report.iterations}")
    _out(f"residual_norm={harness.fmt(report.residual_norm)}")
    _out(f"converged={int(report.converged)}")
    _out(f"contraction={harness.fmt(report.contraction_estimate)}")
    return EXIT_OK if report.converged else EXIT_PROPERTY


def run_verify_suite(A, reg, signals, *, seed=0, alpha=1e-2, tol=1e-10, n_probe=20):
    """Property checks as ``(name, passed, detail)`` triples."""
    rng = np.random.default_rng(seed)
    decomp = decompose(A)
    pker = kernel_projector(decomp)
    results = []

    eq = equivalence_check(reg, trials=1000, seed=seed)
    results.append(("equivalence", eq.ok,
                    f"lower={eq.lower_margin:.3e} upper={eq.upper_margin:.3e} "
                    f"lipschitz={eq.lipschitz_margin:.3e} residual={eq.residual_margin:.3e}"))

    ok, worst = True, -np.inf
    for _ in range(n_probe):
        y1 = rng.standard_normal(A.out_dim)
        y2 = y1 + 0.1 * rng.standard_normal(A.out_dim)
        rep = harness.stability_probe(A, reg, alpha, y1, y2, tol)
        ok &= rep.ok
        for c in (rep.data_fit, rep.bregman, rep.norm):
            worst = max(worst, c.measured - c.bound)
    results.append(("stability", ok, f"worst measured-bound={worst:.3e}"))

    ok, worst = True, np.inf
    for x in signals[:n_probe]:
        a = float(10 ** rng.uniform(-4, 0))
        xa = solve(EquilibriumProblem(A, reg, a, A.apply(x)), tol).x
        gap = np.linalg.norm(x - xa) - lower_bound_error(reg, x, a, A.norm)
        worst = min(worst, gap)
        ok &= gap >= -1e-9
    results.append(("lower-bound", ok, f"worst error-bound={worst:.3e}"))

    ok = True
    recovered = 0
    for x in signals[:n_probe]:
        xp = solve_limiting(A, reg, A.apply(x), decomp)
        fit = np.linalg.norm(A.apply(xp) - A.apply(x))
        kern = np.linalg.norm(pker.apply(apply_reg(reg, xp)))
        predicted = np.linalg.norm(pker.apply(apply_reg(reg, x))) <= 1e-8 * max(1, np.linalg.norm(x))
        actual = np.linalg.norm(xp - x) <= 1e-7 * max(1, np.linalg.norm(x))
        recovered += actual
        ok &= fit <= 1e-8 * max(1, np.linalg.norm(x)) and kern <= 1e-8 and predicted == actual
    results.append(("limiting-recovery", ok,
                    f"recovered={recovered}/{len(signals[:n_probe])}"))

    ok, worst = True, 0.0
    for x in signals[:n_probe]:
        xp = solve_limiting(A, reg, A.apply(x), decomp)
        if np.linalg.norm(apply_reg(reg, xp)) == 0:
            continue
        d = harness.source_condition_residual(A, reg, xp, decomp)
        worst = max(worst, d)
        ok &= d <= 1e-8
    results.append(("source-condition", ok, f"max defect={worst:.3e}"))

    ok = True
    zero = np.zeros(A.in_dim)
    ok &= is_equilibrium_for_exact_data(A, reg, alpha, zero, tol)
    fixed = 0
    for x in signals[:n_probe]:
        prob = EquilibriumProblem(A, reg, alpha, A.apply(x))
        t = residual_T(prob, x)
        gx = apply_reg(reg, x)
        ok &= np.linalg.norm(t - alpha * gx) <= 1e-12 * max(1.0, np.linalg.norm(x))
        eq_pt = is_equilibrium_for_exact_data(A, reg, alpha, x, tol)
        ok &= eq_pt == (alpha * np.linalg.norm(gx) <= tol)
        fixed += eq_pt
    results.append(("exact-recovery", ok, f"x=0 equilibrium, {fixed} test signals are equilibria"))
    return results


def cmd_verify(cfg: RunConfig, model: Optional[str], identity: bool):
    A = build_forward(cfg)
    if identity:
        reg = identity_reg(A.in_dim)
        _, test = load_datasets(cfg, A.in_dim)
        signals = test.samples
    else:
        reg, pv = load_model(model or Path(cfg.output_dir) / "model.eqlm")
        signals = _test_signals(cfg, pv, A.in_dim)
    failed = 0
    for name, passed, detail in run_verify_suite(A, reg, signals, seed=cfg.seed):
        _out(f"{'PASS' if passed else 'FAIL'} {name} {detail}")
        failed += not passed
    return EXIT_PROPERTY if failed else EXIT_OK


def cmd_info(cfg: RunConfig, model: Optional[str]):
    A = build_forward(cfg)
    decomp = decompose(A)
    s = decomp.singular_values
    pker = kernel_projector(decomp, cfg.svd_threshold)
    _out(f"operator={A.kind} dims={A.out_dim}x{A.in_dim}")
    _out(f"norm={A.norm:.12g}")
    _out(f"sigma_max={s[0]:.6g} sigma_min={s[-1]:.6g}")
    _out(f"rank={decomp.rank(cfg.svd_threshold)} kernel_dim={pker.rank}")
    if model:
        reg, pv = load_model(model)
        signals = _test_signals(cfg, pv, A.in_dim)
        _out(f"L={reg.lipschitz_bound:.6f} q={pv.q}")
        if len(signals) >= 2:
            _out(f"L0_test={loss_value(reg, signals, pker):.3e}")
            _out(f"L_star_test={recoverability_constant(signals, pker, seed=cfg.seed):.6f}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="eqreg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", "-c", help="key=value config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--model", "-m", help="model artifact path")
        return sp

    common(sub.add_parser("train", help="fit G = I - P_ker P_V and write the model"))
    common(sub.add_parser("sweep", help="convergence-rate sweeps over the test set"))
    sp = common(sub.add_parser("solve", help="solve one noisy instance"))
    sp.add_argument("--data", help="EQLM container holding y (n x 1)")
    sp = common(sub.add_parser("verify", help="run the property suites"))
    sp.add_argument("--identity", action="store_true", help="check the G = id baseline")
    common(sub.add_parser("info", help="print operator spectrum and model constants"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_sources(args.config, args.overrides)
        if args.command == "train":
            return cmd_train(cfg, args.model)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.model)
        if args.command == "solve":
            return cmd_solve(cfg, args.model, args.data)
        if args.command == "verify":
            return cmd_verify(cfg, args.model, args.identity)
        return cmd_info(cfg, args.model)
    except EqregError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError) and "data" in str(exc):
            print("MNIST is not downloaded; pass train_data/test_data paths to "
                  "train-images-idx3-ubyte and t10k-images-idx3-ubyte", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
