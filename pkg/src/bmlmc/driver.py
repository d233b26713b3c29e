"""Budgeted multilevel Monte Carlo: error estimators, exponent fits, sample
allocation and the round loop that spends a time and memory budget.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DomainError, InsufficientSamplesError, MemoryExhaustedError
from .grid import cell_count, prolong_values
from .moments import FieldAccumulator
from .rng import SeedKey
from .runtime import BatchResult, VirtualCost, execute_batch, update_cost_estimate
from .scheduler import MemoryLedger, MultiIndexLayout, memory_gate
from .state import LevelState

log = logging.getLogger(__name__)

__all__ = [
    "BudgetState",
    "ExponentFits",
    "Fit",
    "LevelState",
    "RunReport",
    "bias_estimate",
    "fit_exponent",
    "make_sampler",
    "mlmc_combine",
    "optimal_allocation",
    "optimal_samples",
    "run",
    "sampling_error",
]

TIME_RESERVE = 0.05
MAX_UNAFFORDABLE_RETRIES = 30


# ---------------------------------------------------------------- estimators


def fit_exponent(points) -> tuple[float, float]:
    """Least-squares fit of ``log2(value) = c - alpha * level``; returns ``(alpha, c)``."""
    pts = [(float(l), float(v)) for l, v in points]
    if len({l for l, _ in pts}) < 2:
        raise InsufficientSamplesError("an exponent fit needs at least two distinct levels")
    if any(not v > 0 or not math.isfinite(v) for _, v in pts):
        raise DomainError("exponent fits need positive finite values")
    l = np.array([p[0] for p in pts])
    y = np.log2([p[1] for p in pts])
    lc = l - l.mean()
    slope = float(np.dot(lc, y - y.mean()) / np.dot(lc, lc))
    intercept = float(y.mean() - slope * l.mean())
    return -slope, intercept


def bias_estimate(level_norms, alpha: float) -> float:
    """``(max_l n_l / (2^alpha - 1) * 2^{-alpha (L - l)})^2`` for norms of levels ``1..L``."""
    norms = [float(n) for n in level_norms]
    if not norms:
        raise InsufficientSamplesError("the bias estimate needs at least one level increment")
    if not alpha > 0:
        raise DomainError(f"bias extrapolation needs alpha > 0, got {alpha}")
    big_l = len(norms)
    denom = 2.0**alpha - 1.0
    terms = [n / denom * 2.0 ** (-alpha * (big_l - l)) for l, n in enumerate(norms, start=1)]
    return max(terms) ** 2


def _field_acc(level) -> FieldAccumulator:
    return level.field_acc_v if isinstance(level, LevelState) else level


def sampling_error(levels) -> float:
    """Sum of ``z2 / (M^2 - M)`` over levels (``LevelState`` or v-accumulators)."""
    return float(sum(_field_acc(lv).sampling_error_term() for lv in levels))


def optimal_allocation(epsilon: float, theta: float, variances, costs) -> list[int]:
    """Sample counts minimising cost subject to ``sum V_l / M_l <= theta eps^2``."""
    v = np.asarray(variances, dtype=float)
    c = np.asarray(costs, dtype=float)
    if np.any(c <= 0):
        raise DomainError("costs must be positive")
    if np.any(v < 0):
        raise DomainError("variances must be nonnegative")
    total = float(np.sum(np.sqrt(v * c)))
    target = theta * epsilon**2
    return [int(math.ceil(math.sqrt(vl / cl) * total / target)) for vl, cl in zip(v, c)]


def optimal_samples(epsilon: float, theta: float, levels) -> list[int]:
    variances, costs = [], []
    for lv in levels:
        acc = lv.field_acc_v
        if lv.samples < 2:
            raise InsufficientSamplesError(f"level {lv.level} has {lv.samples} samples, need 2")
        variances.append(acc.z2 / (lv.samples - 1))
        costs.append(lv.cost_ct)
    return optimal_allocation(epsilon, theta, variances, costs)


def mlmc_combine(levels, *, snapshots: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Telescoping mean and summed marginal variance, both on the finest grid."""
    accs = []
    for lv in levels:
        acc = (lv.snap_acc_v if snapshots else lv.field_acc_v) if isinstance(lv, LevelState) else lv
        if acc is None or acc.count == 0:
            raise InsufficientSamplesError("every level needs field samples to combine")
        accs.append(acc)
    finest = max(a.grid.level for a in accs)
    mean = 0.0
    var = 0.0
    for acc in accs:
        up = finest - acc.grid.level
        mean = mean + prolong_values(acc.mean_field, acc.grid, up)
        var = var + prolong_values(acc.variance_field(), acc.grid, up)
    return np.asarray(mean), np.asarray(var)


# ---------------------------------------------------------------- fits


@dataclass(frozen=True)
class Fit:
    exponent: float
    intercept: float | None
    fitted: bool

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "intercept": self.intercept, "fitted": self.fitted}


@dataclass(frozen=True)
class ExponentFits:
    alpha_u: Fit
    alpha_Q: Fit
    beta_v: Fit
    beta_Y: Fit
    gamma_ct: Fit
    gamma_mem: Fit

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in self.__dataclass_fields__}


def _fit_or_prior(points, prior: float, *, growth: bool = False) -> Fit:
    pts = [(l, v) for l, v in points if v is not None and v > 0 and math.isfinite(v)]
    try:
        alpha, c = fit_exponent(pts)
    except (InsufficientSamplesError, DomainError):
        return Fit(prior, None, False)
    return Fit(-alpha if growth else alpha, c, True)


def compute_fits(levels: list[LevelState], dim: int) -> ExponentFits:
    """All six exponents from levels >= 1; priors (1, 1, d + 1) until two points exist."""
    upper = [lv for lv in levels if lv.level >= 1 and lv.samples >= 2]

    def pts(fn):
        return [(lv.level, fn(lv)) for lv in upper]

    return ExponentFits(
        alpha_u=_fit_or_prior(pts(lambda lv: lv.mean_v_norm), 1.0),
        alpha_Q=_fit_or_prior(pts(lambda lv: abs(lv.scalar_acc_Y.mean)), 1.0),
        beta_v=_fit_or_prior(pts(lambda lv: None if lv.field_acc_v is None else lv.field_acc_v.bochner_variance), 1.0),
        beta_Y=_fit_or_prior(pts(lambda lv: lv.scalar_acc_Y.variance), 1.0),
        gamma_ct=_fit_or_prior(pts(lambda lv: lv.cost_ct), dim + 1.0, growth=True),
        gamma_mem=_fit_or_prior(pts(lambda lv: lv.cost_mem), float(dim), growth=True),
    )


# ---------------------------------------------------------------- state


@dataclass
class BudgetState:
    time_budget: float
    time_left: float
    epsilon: float
    theta: float
    eta: float
    round: int = 0
    max_level: int = 0
    epsilon_prev: float = math.inf

    def __post_init__(self):
        if not (0 < self.theta < 1 and 0 < self.eta < 1):
            raise ConfigError("theta and eta must lie in (0, 1)")


@dataclass
class RunReport:
    config: dict
    rounds: list = field(default_factory=list)
    batches: list = field(default_factory=list)
    termination: str = ""
    consumed: float = 0.0
    levels: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    err_sam: float = math.nan
    err_num: float = math.nan
    err_mse: float = math.nan
    ledger: dict = field(default_factory=dict)
    snapshot_times: tuple = ()
    mean_field: np.ndarray | None = None
    variance_field: np.ndarray | None = None
    snapshot_mean: np.ndarray | None = None
    snapshot_variance: np.ndarray | None = None
    level_states: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "termination": self.termination,
            "consumed": self.consumed,
            "err_sam": self.err_sam,
            "err_num": self.err_num,
            "err_mse": self.err_mse,
            "fits": self.fits,
            "levels": self.levels,
            "ledger": self.ledger,
            "snapshot_times": list(self.snapshot_times),
            "rounds": self.rounds,
            "batches": self.batches,
        }


def make_sampler(cfg: RunConfig):
    if cfg.sampler == "synthetic":
        from .synthetic import SyntheticSampler

        return SyntheticSampler(dim=cfg.dim, base_cells_per_axis=cfg.base_cells)
    from .pde.chain import PDESampler
    from .pde.spde import MaternParams
    from .pde.transport import TimeConfig

    m, t = cfg.matern, cfg.transport
    params = MaternParams(lam=m.lam, nu=m.nu, sigma=m.sigma, dim=cfg.dim)
    tc = TimeConfig(final_time=t.final_time, snapshot_times=tuple(t.snapshot_times), base_steps=t.base_steps)
    return PDESampler(params, tc, cfg.base_cells)


# ---------------------------------------------------------------- the loop


class _Engine:
    def __init__(self, cfg: RunConfig, sampler, pool):
        self.cfg = cfg
        self.sampler = sampler
        self.pool = pool
        self.d = cfg.dim
        self.n0 = cfg.base_cells**cfg.dim  # |K_{0,0}|, cells of the coarsest mesh
        self.qoi_driven = cfg.mode in ("qoi", "both")
        self.ledger = MemoryLedger(cfg.memory_budget_mb)
        self.virtual = VirtualCost(cfg.virtual_cost, cfg.dim) if cfg.cost_mode == "virtual" else None
        self.levels: list[LevelState] = []
        self.report = RunReport(config=cfg.to_dict())
        self.fits = compute_fits([], cfg.dim)
        self.consumed = 0.0

    # -- estimates

    def _level_variance(self, lv: LevelState) -> float:
        if self.qoi_driven:
            return lv.scalar_acc_Y.second_order_sum / (lv.samples - 1)
        return lv.field_acc_v.z2 / (lv.samples - 1)

    def _alpha(self) -> float:
        fit = self.fits.alpha_Q if self.qoi_driven else self.fits.alpha_u
        # a flat or growing increment sequence gives no usable extrapolation
        return fit.exponent if fit.exponent > 0.1 else 1.0

    def _norms(self) -> list[float]:
        if self.qoi_driven:
            norms = [abs(lv.scalar_acc_Y.mean) for lv in self.levels]
        else:
            norms = [lv.mean_v_norm for lv in self.levels]
        # with a single level the level-0 mean stands in for the first increment
        return norms[1:] if len(norms) > 1 else norms

    def errors(self) -> dict:
        if self.qoi_driven:
            sam = sum(lv.scalar_acc_Y.second_order_sum / (lv.samples**2 - lv.samples) for lv in self.levels)
        else:
            sam = sampling_error(self.levels)
        alpha = self._alpha()
        norms = self._norms()
        num = bias_estimate(norms, alpha)
        return {"err_sam": sam, "err_num": num, "err_mse": sam + num, "alpha_used": alpha, "norms": norms}

    def _extrapolated(self, level: int) -> tuple[float, float]:
        """Variance and cost for a level without data, from the finest level with data."""
        top = self.levels[-1]
        k = level - top.level
        beta = (self.fits.beta_Y if self.qoi_driven else self.fits.beta_v).exponent
        gamma = self.fits.gamma_ct.exponent
        beta = beta if beta > 0 else 1.0
        gamma = gamma if gamma > 0 else self.d + 1.0
        return self._level_variance(top) * 2.0 ** (-beta * k), top.cost_ct * 2.0 ** (gamma * k)

    def _cost_estimate(self, level: int) -> float:
        if self.virtual is not None:
            return self.virtual(level)
        if level < len(self.levels) and self.levels[level].cost_records:
            return self.levels[level].cost_ct
        return self._extrapolated(level)[1]

    # -- memory

    def _mem_samples(self, level: int) -> int:
        return self.ledger.mem_samples(level, self.n0, self.d)

    def _layout(self, level: int, delta_m: int) -> MultiIndexLayout:
        return MultiIndexLayout.plan(
            level,
            delta_m,
            num_units=self.cfg.num_units,
            mem_samples=self._mem_samples(level),
            base_cells=self.n0,
            dim=self.d,
        )

    def _scheduled_cost(self, delta: dict[int, int]) -> float:
        """Predicted cost of a round, counting the over-provisioned surplus."""
        total = 0.0
        for level, dm in delta.items():
            if dm <= 0:
                continue
            try:
                scheduled = self._layout(level, dm).scheduled
            except MemoryExhaustedError:
                scheduled = dm
            total += scheduled * self._cost_estimate(level)
        return total

    # -- execution

    def _ensure_level(self, level: int) -> LevelState:
        while len(self.levels) <= level:
            self.levels.append(LevelState(len(self.levels)))
        return self.levels[level]

    def _absorb(self, lv: LevelState, batch: BatchResult) -> LevelState:
        first = lv.samples == 0
        if self.cfg.keep_fields:
            lv.field_acc_u = batch.u if lv.field_acc_u is None else lv.field_acc_u.merge(batch.u)
            lv.field_acc_v = batch.v if lv.field_acc_v is None else lv.field_acc_v.merge(batch.v)
            lv.snap_acc_u = batch.u_snap if lv.snap_acc_u is None else lv.snap_acc_u.merge(batch.u_snap)
            lv.snap_acc_v = batch.v_snap if lv.snap_acc_v is None else lv.snap_acc_v.merge(batch.v_snap)
        lv.scalar_acc_Q = lv.scalar_acc_Q.merge(batch.q)
        lv.scalar_acc_Y = lv.scalar_acc_Y.merge(batch.y)
        lv.samples += batch.executed
        lv.next_index += batch.executed
        lv.splits.append(batch.layout.split)
        lv = update_cost_estimate(batch.records, lv)
        if self.cfg.keep_fields:
            cells = cell_count(self.n0, lv.level, 0, self.d)
            if first:
                self.ledger.add_permanent(lv.level, cells, lv.field_nbytes)
            else:
                self.ledger.calibrate(cells, lv.field_nbytes)
        lv.cost_mem = self.ledger.per_sample_mb(lv.level, self.n0, self.d)
        self.levels[lv.level] = lv
        return lv

    def _execute(self, delta: dict[int, int], round_index: int) -> tuple[float, bool]:
        """Run the increments level by level; returns (consumed, memory_exhausted).

        Each layout is planned right before it runs so that ``M^Mem`` sees the
        peak left behind by the levels executed earlier in the same round.
        """
        consumed = 0.0
        for level, dm in sorted(delta.items()):
            if dm <= 0:
                continue
            lv = self.levels[level]
            try:
                layout = self._layout(level, dm)
            except MemoryExhaustedError:
                return consumed, True
            batch = execute_batch(
                layout,
                self.sampler,
                key=SeedKey(self.cfg.run_seed, round_index),
                first_index=lv.next_index,
                ledger=self.ledger,
                pool=self.pool,
                cost_model=self.virtual,
                keep_fields=self.cfg.keep_fields,
            )
            self._absorb(lv, batch)
            consumed += batch.consumed
            self.report.batches.append(
                {
                    "round": round_index,
                    "level": layout.level,
                    "s": layout.split,
                    "parallel": layout.parallel_samples,
                    "batches": layout.sequential_batches,
                    "requested": layout.requested,
                    "executed": batch.executed,
                    "dynamic_cells": layout.cells_total,
                    "peak_cells": batch.peak_cells,
                    "permanent_cells": self.ledger.permanent_total,
                    "bytes_per_cell": self.ledger.bytes_per_cell,
                    "consumed": batch.consumed,
                }
            )
        return consumed, False

    def _after_data(self) -> dict:
        for lv in self.levels:
            lv.check_counts()
        self.fits = compute_fits(self.levels, self.d)
        return self.errors()

    def _record(self, budget: BudgetState, action: str, est: dict | None, delta=None) -> None:
        entry = {
            "i": budget.round,
            "action": action,
            "epsilon": budget.epsilon,
            "epsilon_prev": budget.epsilon_prev if math.isfinite(budget.epsilon_prev) else None,
            "time_left": budget.time_left,
            "max_level": len(self.levels) - 1,
            "delta_m": delta,
            "fits": self.fits.to_dict(),
            "mode": self.cfg.mode,
            "levels": [lv.to_dict() for lv in self.levels],
        }
        if est is not None:
            entry.update({k: est[k] for k in ("err_sam", "err_num", "err_mse", "alpha_used")})
        self.report.rounds.append(entry)

    # -- INIT

    def init_round(self) -> tuple[BudgetState, dict]:
        cfg = self.cfg
        remaining = cfg.time_budget
        for level, m in enumerate(cfg.init_samples):
            if level > cfg.max_level:
                break
            if level > 0 and not memory_gate(self.ledger, level, self.n0, self.d):
                break
            self._ensure_level(level)
            try:
                layout = self._layout(level, int(m))
            except MemoryExhaustedError:
                if level == 0:
                    raise ConfigError("memory budget cannot hold a single level-0 sample") from None
                self.levels.pop()
                break
            predicted = None
            if self.virtual is not None or self.levels[0].cost_records:
                predicted = layout.scheduled * self._cost_estimate(level)
            if predicted is not None and predicted > remaining:
                if level == 0:
                    raise ConfigError(
                        f"time budget {cfg.time_budget} cannot pay for the initial round on level 0 "
                        f"(needs {predicted:.4g})"
                    )
                self.levels.pop()
                break
            started = time.perf_counter()
            spent, _ = self._execute({level: int(m)}, 0)
            if self.virtual is None:
                spent = time.perf_counter() - started
            remaining -= spent
            self.consumed += spent
        est = self._after_data()
        eps0 = math.sqrt(est["err_mse"])
        budget = BudgetState(
            time_budget=cfg.time_budget,
            time_left=cfg.time_budget - self.consumed,
            epsilon=cfg.eta * eps0,
            theta=cfg.theta,
            eta=cfg.eta,
            round=0,
            max_level=len(self.levels) - 1,
            epsilon_prev=eps0,
        )
        entry_budget = BudgetState(cfg.time_budget, budget.time_left, eps0, cfg.theta, cfg.eta, 0, budget.max_level)
        self._record(entry_budget, "init", est, {lv.level: lv.samples for lv in self.levels})
        budget.round = 1
        return budget, est

    # -- main loop

    def run(self) -> RunReport:
        cfg = self.cfg
        budget, est = self.init_round()
        retries = 0
        reason = "max_rounds"
        while budget.round <= cfg.max_rounds:
            eps2 = budget.epsilon**2
            # (1) time budget nearly spent
            if budget.time_left < TIME_RESERVE * budget.time_budget:
                reason = "time"
                self._record(budget, "stop:time", est)
                break
            base_l = len(self.levels) - 1
            new_l = base_l
            # (2) bias too big: tentatively add a level
            if est["err_num"] >= (1 - cfg.theta) * eps2 and base_l < cfg.max_level:
                new_l = base_l + 1
            # (3) sampling error too big: optimal increments
            delta = {l: 0 for l in range(new_l + 1)}
            if est["err_sam"] >= cfg.theta * eps2 or new_l > base_l:
                variances = [self._level_variance(lv) for lv in self.levels]
                costs = [self._cost_estimate(lv.level) for lv in self.levels]
                for l in range(base_l + 1, new_l + 1):
                    v, c = self._extrapolated(l)
                    variances.append(v)
                    costs.append(self._cost_estimate(l) if self.virtual is not None else c)
                m_opt = optimal_allocation(budget.epsilon, cfg.theta, variances, costs)
                for l in range(new_l + 1):
                    if l <= base_l:
                        if est["err_sam"] >= cfg.theta * eps2:
                            delta[l] = max(m_opt[l] - self.levels[l].samples, 0)
                    else:
                        delta[l] = max(m_opt[l], 2)
            if not any(delta.values()):
                # nothing to compute: tighten the target and try again
                self._record(budget, "no-data", est, delta)
                budget.epsilon_prev = budget.epsilon
                budget.epsilon *= cfg.eta
                budget.round += 1
                continue
            # (4) unaffordable: relax the target toward the last one
            if self._scheduled_cost(delta) > budget.time_left:
                self._record(budget, "unaffordable", est, delta)
                retries += 1
                new_eps = 0.5 * (budget.epsilon + budget.epsilon_prev)
                if retries > MAX_UNAFFORDABLE_RETRIES or not new_eps > budget.epsilon * (1 + 1e-12):
                    reason = "unaffordable"
                    break
                budget.epsilon = new_eps
                budget.round += 1
                continue
            # (5) memory gate
            if not memory_gate(self.ledger, new_l, self.n0, self.d):
                reason = "memory_gate"
                self._record(budget, "stop:memory_gate", est, delta)
                break
            # (6) compute, merge, move on
            for l in range(base_l + 1, new_l + 1):
                self._ensure_level(l)
            retries = 0
            started = time.perf_counter()
            spent, exhausted = self._execute(delta, budget.round)
            if self.virtual is None:
                spent = time.perf_counter() - started
            self.consumed += spent
            budget.time_left -= spent
            while self.levels[-1].samples == 0:
                self.levels.pop()
            budget.max_level = len(self.levels) - 1
            if exhausted:
                # whatever ran before the shortage is merged and kept
                if spent > 0:
                    est = self._after_data()
                reason = "memory_exhausted"
                self._record(budget, "stop:memory_exhausted", est, delta)
                break
            est = self._after_data()
            self._record(budget, "update", est, delta)
            budget.epsilon_prev = budget.epsilon
            budget.epsilon *= cfg.eta
            budget.round += 1
        return self._finish(reason, est)

    def _finish(self, reason: str, est: dict) -> RunReport:
        rep = self.report
        rep.termination = reason
        rep.consumed = self.consumed
        rep.err_sam, rep.err_num, rep.err_mse = est["err_sam"], est["err_num"], est["err_mse"]
        rep.fits = self.fits.to_dict()
        rep.levels = [lv.to_dict() for lv in self.levels]
        rep.ledger = self.ledger.to_dict()
        rep.level_states = self.levels
        rep.snapshot_times = tuple(getattr(self.sampler, "snapshot_times", ()))
        if self.cfg.keep_fields:
            rep.mean_field, rep.variance_field = mlmc_combine(self.levels)
            rep.snapshot_mean, rep.snapshot_variance = mlmc_combine(self.levels, snapshots=True)
        log.info("run finished: %s after %d rounds, mse=%.3e", reason, len(rep.rounds), rep.err_mse)
        return rep


def run(config: RunConfig, sampler=None, *, pool=None) -> RunReport:
    """Spend ``config.time_budget`` on the estimate with the smallest estimated MSE."""
    config.validate()
    sampler = sampler if sampler is not None else make_sampler(config)
    own = pool is None
    if own:
        pool = ThreadPoolExecutor(max_workers=config.num_units)
    try:
        return _Engine(config, sampler, pool).run()
    finally:
        if own:
            pool.shutdown(wait=True)
