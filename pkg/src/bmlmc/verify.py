"""Self-check suites behind ``bmlmc verify``.

Each suite returns ``Check`` rows; the command prints them as a table and
fails when any row fails.  The suites are short versions of the test-suite
oracles so they can be run on an installed package.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def suite_moments(seed: int = 0, streams: int = 20) -> list[Check]:
    from .grid import GridLevel
    from .moments import FieldAccumulator

    rng = np.random.default_rng(seed)
    grid = GridLevel(1, 2, 2)
    worst_mean = worst_s2 = worst_z2 = 0.0
    for _ in range(streams):
        n = int(rng.integers(2, 400))
        xs = rng.normal(rng.normal(), rng.uniform(0.1, 5), size=(n, grid.n_cells))
        cuts = np.sort(rng.choice(np.arange(1, n), size=min(n - 1, int(rng.integers(1, 8))), replace=False))
        parts = [FieldAccumulator.from_samples(grid, p) for p in np.split(xs, cuts)]
        order = rng.permutation(len(parts))
        acc = FieldAccumulator.empty(grid)
        for i in order:
            acc = acc.merge(parts[i])
        ref = FieldAccumulator.from_samples(grid, xs)
        worst_mean = max(worst_mean, _rel(acc.mean_field, ref.mean_field))
        worst_s2 = max(worst_s2, _rel(acc.s2_field, ref.s2_field))
        worst_z2 = max(worst_z2, abs(acc.z2 - ref.z2) / ref.z2)
    return [
        Check("merged mean vs two-pass", worst_mean <= 1e-10, f"max rel {worst_mean:.2e}"),
        Check("merged S2 vs two-pass", worst_s2 <= 1e-10, f"max rel {worst_s2:.2e}"),
        Check("z2 partition invariance", worst_z2 <= 1e-10, f"max rel {worst_z2:.2e}"),
    ]


def suite_scheduler() -> list[Check]:
    from .scheduler import batch_plan, comm_split, max_samples_in_memory

    rows = []
    for args, want in (((4, 16, 32), 2), ((4, 4, 8), 2), ((4, 3, 2), 1)):
        got = comm_split(*args)
        rows.append(Check(f"comm_split{args}", got == want, f"{got} (want {want})"))
    for args, want in (((3, 1), (2, 2)), ((16, 2), (4, 4))):
        got = batch_plan(*args)
        rows.append(Check(f"batch_plan{args}", got == want, f"{got} (want {want})"))
    got = max_samples_in_memory(400.0, 80.0, 10.0)
    rows.append(Check("max_samples_in_memory(400, 80, 10)", got == 32, f"{got} (want 32)"))
    return rows


def suite_pde() -> list[Check]:
    from .grid import Field, GridLevel
    from .pde.darcy import darcy_solve, discrete_divergence
    from .pde.spde import MaternParams
    from .pde.transport import TimeConfig, initial_condition, transport_solve

    rows = []
    kappa = MaternParams(0.3, 1.0, 1.0, 2).kappa
    rows.append(Check("kappa(lam=0.3, nu=1, d=2)", abs(kappa - 4.714) < 1e-3, f"{kappa:.4f}"))
    for level in (3, 4, 5):
        g = GridLevel(level, 2, 2)
        q, _ = darcy_solve(Field.constant(g, 1.0))
        vx, vy = q.face_component(0), q.face_component(1)
        err = max(float(np.max(np.abs(vx))), float(np.max(np.abs(vy + 1.0))))
        div = float(np.max(np.abs(discrete_divergence(q))))
        ok = err <= 1e-8 and div <= 1e-8
        rows.append(Check(f"darcy constant a, level {level}", ok, f"|q-(0,-1)|={err:.1e} div={div:.1e}"))
    g = GridLevel(3, 2, 2)
    cfg = TimeConfig()
    snaps = transport_solve(Field.zeros(g, "face"), cfg)
    same = all(np.array_equal(s.values, initial_condition(g, cfg)) for s in snaps)
    rows.append(Check("transport with q = 0 keeps the initial state", same))
    return rows


def suite_driver() -> list[Check]:
    from .driver import bias_estimate, fit_exponent, mlmc_combine, optimal_allocation
    from .moments import FieldAccumulator
    from .pde.chain import PDESampler
    from .pde.spde import MaternParams
    from .rng import SeedKey

    rows = []
    a, c = fit_exponent([(l, 2.0 ** (-2 * l)) for l in range(1, 5)])
    rows.append(Check("fit_exponent on 2^(-2l)", abs(a - 2) < 1e-12 and abs(c) < 1e-12, f"alpha={a}, c={c}"))
    b = bias_estimate([2.0 ** (-l) for l in range(1, 4)], 1.0)
    rows.append(Check("bias_estimate on 2^(-l)", math.isclose(b, 2.0**-6, rel_tol=1e-14), f"{b}"))
    m = optimal_allocation(0.1, 0.5, [0.3], [2.0])
    rows.append(Check("single-level optimal_samples", m == [math.ceil(0.3 / (0.5 * 0.01))], f"{m}"))
    sampler = PDESampler(MaternParams(0.3, 1.5, 1.0, 1), noise_level=2)
    accs, fine = [], []
    for level in range(3):
        res = [sampler(level, SeedKey(11, sample_index=i)) for i in range(10)]
        accs.append(FieldAccumulator.from_samples(res[0].grid, [r.v[-1] for r in res]))
        if level == 2:
            fine = np.mean([r.u_fine[-1] for r in res], axis=0)
    mean, _ = mlmc_combine(accs)
    err = float(np.max(np.abs(mean - fine)))
    rows.append(Check("telescoping identity (d=1, L=2)", err <= 1e-12, f"max diff {err:.1e}"))
    return rows


def suite_covariance(samples: int = 500, level: int = 5, seed: int = 1) -> list[Check]:
    from .grid import GridLevel
    from .pde.spde import MaternParams, evaluate, sample_grf
    from .rng import SeedKey

    params = MaternParams(0.3, 1.0, 1.0, 2)
    grid = GridLevel(level, 2, 2)
    lags = np.array([0.0, 0.1, 0.2])
    pts = np.stack([0.5 + lags, np.full_like(lags, 0.5)], axis=1)
    vals = np.array(
        [evaluate(sample_grf(grid, SeedKey(seed, sample_index=m), params), pts) for m in range(samples)]
    )
    prods = vals[:, :1] * vals
    emp = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(samples)
    ref = params.covariance(lags)
    return [
        Check(f"covariance at r={r:.1f}", abs(e - f) <= 3 * s, f"{e:.4f} vs {f:.4f} (3se={3 * s:.4f})")
        for r, e, f, s in zip(lags, emp, ref, se)
    ]


SUITES = {
    "moments": suite_moments,
    "scheduler": suite_scheduler,
    "pde": suite_pde,
    "driver": suite_driver,
    "covariance": suite_covariance,
}


def run_suite(name: str) -> tuple[list[Check], float]:
    t0 = time.perf_counter()
    rows = SUITES[name]()
    return rows, time.perf_counter() - t0
