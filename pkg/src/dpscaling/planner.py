"""Constant-compute configuration search under privacy and data budgets.

Enumerates (model size, batch size, iterations) combinations that spend a
given FLOP budget, calibrates the noise-batch ratio of each against the
privacy budget, queries a fitted loss law, and reduces the results into
the standard analyses: optimal allocations with near-optimal bands, loss
and token-ratio sweeps, critical compute budgets, and baseline
comparisons.

Evaluation is embarrassingly parallel and side-effect free; results are
reduced with a stable ordering so identical inputs give identical output.
"""

from __future__ import annotations

import importlib.resources
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .accounting import (
    DEFAULT_DELTA,
    AccountingSetup,
    Batching,
    CalibrationError,
    NoiseBatchRatio,
    PrivacySpec,
    calibrate_detail,
)
from .lawfit import DomainError, InterpolatedLaw, ParametricLaw, query

DEFAULT_SEQ_LEN = 512.0
DEFAULT_POINTS_PER_DECADE = 16
NEAR_OPTIMAL_FACTOR = 1.01

# Fallback search box for laws that do not declare bounds.
WIDE_M_BOUNDS = (1e5, 1e11)
WIDE_T_BOUNDS = (100.0, float(2**20))


class PlanError(RuntimeError):
    """No feasible configuration under the given budgets."""


@dataclass(frozen=True)
class TrainingConfig:
    """A candidate training run: M parameters, B examples/step, T steps."""

    model_params: float
    batch_size: float
    iterations: float
    seq_len: float = DEFAULT_SEQ_LEN

    def __post_init__(self) -> None:
        for name in ("model_params", "batch_size", "iterations", "seq_len"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def compute(self) -> float:
        return 6.0 * self.model_params * self.batch_size * self.seq_len * self.iterations

    @property
    def token_model_ratio(self) -> float:
        return self.seq_len * self.batch_size * self.iterations / self.model_params


@dataclass(frozen=True)
class Budgets:
    compute: float
    privacy: PrivacySpec
    data: int

    def __post_init__(self) -> None:
        if not self.compute > 0:
            raise ValueError("compute budget must be positive")
        if self.data < 1:
            raise ValueError("data budget must be a positive integer")


@dataclass(frozen=True)
class PlanResult:
    config: TrainingConfig
    nbr: NoiseBatchRatio | None
    predicted_loss: float | None
    token_model_ratio: float
    in_domain: bool
    epsilon_achieved: float | None = None
    branch: Batching | None = None
    note: str | None = None

    def to_json_obj(self) -> dict:
        return {
            "model_params": self.config.model_params,
            "batch_size": self.config.batch_size,
            "iterations": self.config.iterations,
            "seq_len": self.config.seq_len,
            "compute": self.config.compute,
            "noise_batch_ratio": None if self.nbr is None else self.nbr.value,
            "predicted_loss": self.predicted_loss,
            "token_model_ratio": self.token_model_ratio,
            "in_domain": self.in_domain,
            "epsilon_achieved": self.epsilon_achieved,
            "batching_branch": None if self.branch is None else self.branch.value,
            "note": self.note,
        }


@dataclass(frozen=True)
class AllocationBand:
    """Per-hyperparameter range over configurations near the optimum."""

    threshold: float
    model_params: tuple[float, float]
    batch_size: tuple[float, float]
    iterations: tuple[float, float]
    n_near_optimal: int

    def to_json_obj(self) -> dict:
        return {
            "threshold": self.threshold,
            "model_params": list(self.model_params),
            "batch_size": list(self.batch_size),
            "iterations": list(self.iterations),
            "n_near_optimal": self.n_near_optimal,
        }


@dataclass(frozen=True)
class AllocationReport:
    best: PlanResult
    band: AllocationBand
    n_configs: int
    n_infeasible: int
    n_out_of_domain: int

    def to_json_obj(self) -> dict:
        return {
            "best": self.best.to_json_obj(),
            "band": self.band.to_json_obj(),
            "counts": {
                "configs": self.n_configs,
                "infeasible": self.n_infeasible,
                "out_of_domain": self.n_out_of_domain,
            },
        }


@dataclass(frozen=True)
class SweepSeries:
    """Best allocation per value of one budget axis."""

    axis: str  # "compute" | "privacy" | "data"
    x: tuple[float, ...]
    reports: tuple[AllocationReport, ...]

    @property
    def losses(self) -> list[float]:
        return [r.best.predicted_loss for r in self.reports]

    @property
    def ratios(self) -> list[float]:
        return [r.best.token_model_ratio for r in self.reports]

    def to_json_obj(self) -> dict:
        return {
            "axis": self.axis,
            "x": list(self.x),
            "entries": [r.to_json_obj() for r in self.reports],
        }

    def csv_rows(self, value_field: str) -> list[tuple]:
        """Plot-ready rows: x,value[,band_min,band_max]."""
        banded = {"model_params", "batch_size", "iterations"}
        rows = []
        for x, rep in zip(self.x, self.reports):
            obj = rep.best.to_json_obj()
            if value_field in banded:
                band = getattr(rep.band, value_field)
                rows.append((x, obj[value_field], band[0], band[1]))
            elif value_field == "loss":
                rows.append((x, obj["predicted_loss"]))
            else:
                rows.append((x, obj[value_field]))
        return rows


# ---------------------------------------------------------------------------
# Enumeration and evaluation
# ---------------------------------------------------------------------------


def law_bounds(law) -> tuple[tuple[float, float], tuple[float, float]]:
    """(M bounds, T bounds) a planner may search for the given law."""
    if isinstance(law, InterpolatedLaw):
        dom = law.domain
        return tuple(dom["m"]), tuple(dom["t"])
    if isinstance(law, ParametricLaw):
        dom = law.domain or {}
        return (
            tuple(dom.get("m", WIDE_M_BOUNDS)),
            tuple(dom.get("t", WIDE_T_BOUNDS)),
        )
    raise TypeError(f"unknown law type {type(law).__name__}")


def _log_lattice(lo: float, hi: float, points_per_decade: int) -> np.ndarray:
    """lo * 10**(k/d) for k = 0.. plus the upper endpoint.

    Anchoring at the lower endpoint makes a doubled density a strict
    superset of the coarser lattice.
    """
    if hi < lo:
        raise ValueError("empty lattice bounds")
    decades = math.log10(hi / lo)
    n = int(math.floor(decades * points_per_decade + 1e-9))
    points = lo * 10.0 ** (np.arange(n + 1) / points_per_decade)
    if points[-1] < hi * (1 - 1e-12):
        points = np.append(points, hi)
    else:
        points[-1] = hi
    return points


def enumerate_configs(
    compute: float,
    law,
    seq_len: float = DEFAULT_SEQ_LEN,
    points_per_decade: int = DEFAULT_POINTS_PER_DECADE,
) -> list[TrainingConfig]:
    """Constant-compute lattice over the law's (M, T) box.

    Batch size is derived from the compute identity; combinations needing
    less than one example per step are dropped.
    """
    if compute <= 0:
        raise ValueError("compute budget must be positive")
    (m_lo, m_hi), (t_lo, t_hi) = law_bounds(law)
    configs = []
    for m in _log_lattice(m_lo, m_hi, points_per_decade):
        for t in _log_lattice(t_lo, t_hi, points_per_decade):
            b = compute / (6.0 * m * seq_len * t)
            if b < 1.0:
                continue
            configs.append(TrainingConfig(m, b, t, seq_len))
    return configs


@lru_cache(maxsize=262144)
def _calibrate_cached(
    epsilon: float, delta: float, data: int, batch: float, steps: int, batching: Batching
):
    spec = PrivacySpec(epsilon, delta)
    setup = AccountingSetup(data, batch, steps, batching)
    return calibrate_detail(spec, setup)


def evaluate(
    config: TrainingConfig,
    budgets: Budgets,
    law,
    batching: Batching = Batching.BOTH,
) -> PlanResult:
    """Calibrate one configuration and query the law.

    Configurations whose batch exceeds the data budget, or whose
    calibrated noise falls outside the law's domain, are flagged rather
    than clamped.
    """
    ratio = config.token_model_ratio
    if config.batch_size > budgets.data:
        return PlanResult(
            config, None, None, ratio, False, note="batch exceeds data budget"
        )
    if math.isinf(budgets.privacy.epsilon):
        nbr, branch, achieved = NoiseBatchRatio(0.0), None, None
    else:
        try:
            cal = _calibrate_cached(
                budgets.privacy.epsilon,
                budgets.privacy.delta,
                budgets.data,
                config.batch_size,
                int(round(config.iterations)),
                batching,
            )
        except (CalibrationError, ValueError) as exc:
            return PlanResult(config, None, None, ratio, False, note=str(exc))
        nbr, branch, achieved = cal.nbr, cal.branch, cal.epsilon_achieved
    try:
        loss = query(law, config.model_params, config.iterations, nbr.value)
    except DomainError as exc:
        return PlanResult(
            config, nbr, None, ratio, False, achieved, branch, note=str(exc)
        )
    return PlanResult(config, nbr, loss, ratio, True, achieved, branch)


def optimal_allocation(
    budgets: Budgets,
    law,
    seq_len: float = DEFAULT_SEQ_LEN,
    points_per_decade: int = DEFAULT_POINTS_PER_DECADE,
    near_optimal_factor: float = NEAR_OPTIMAL_FACTOR,
    batching: Batching = Batching.BOTH,
    extra_configs: Sequence[TrainingConfig] = (),
) -> AllocationReport:
    """Best configuration plus the near-optimal hyperparameter band.

    Ties in predicted loss go to the smaller model (then fewer steps):
    smaller models at equal loss are cheaper to serve.
    """
    configs = enumerate_configs(budgets.compute, law, seq_len, points_per_decade)
    configs.extend(extra_configs)
    results = [evaluate(c, budgets, law, batching) for c in configs]
    ok = [r for r in results if r.in_domain and r.predicted_loss is not None]
    if not ok:
        raise PlanError(
            f"no feasible configuration at compute={budgets.compute:g} "
            f"({len(results)} candidates, all infeasible or out of domain)"
        )
    best = min(
        ok,
        key=lambda r: (
            r.predicted_loss,
            r.config.model_params,
            r.config.iterations,
            r.config.batch_size,
        ),
    )
    cutoff = best.predicted_loss * near_optimal_factor
    near = [r for r in ok if r.predicted_loss <= cutoff]
    band = AllocationBand(
        threshold=near_optimal_factor,
        model_params=(
            min(r.config.model_params for r in near),
            max(r.config.model_params for r in near),
        ),
        batch_size=(
            min(r.config.batch_size for r in near),
            max(r.config.batch_size for r in near),
        ),
        iterations=(
            min(r.config.iterations for r in near),
            max(r.config.iterations for r in near),
        ),
        n_near_optimal=len(near),
    )
    n_infeasible = sum(1 for r in results if r.nbr is None and not r.in_domain)
    n_out_of_domain = sum(1 for r in results if r.nbr is not None and not r.in_domain)
    return AllocationReport(best, band, len(results), n_infeasible, n_out_of_domain)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def sweep(
    budgets: Budgets,
    law,
    axis: str,
    values: Sequence[float],
    **alloc_kwargs,
) -> SweepSeries:
    """Optimal allocation per value of one budget axis, others held fixed."""
    if axis not in ("compute", "privacy", "data"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    reports = []
    for v in values:
        if axis == "compute":
            b = Budgets(v, budgets.privacy, budgets.data)
        elif axis == "privacy":
            b = Budgets(budgets.compute, PrivacySpec(v, budgets.privacy.delta), budgets.data)
        else:
            b = Budgets(budgets.compute, budgets.privacy, int(v))
        reports.append(optimal_allocation(b, law, **alloc_kwargs))
    return SweepSeries(axis, tuple(float(v) for v in values), tuple(reports))


def loss_vs_compute(
    budgets: Budgets, law, c_grid: Sequence[float], **alloc_kwargs
) -> SweepSeries:
    """Best achievable loss per compute budget at fixed privacy/data."""
    return sweep(budgets, law, "compute", c_grid, **alloc_kwargs)


def token_model_sweep(
    budgets: Budgets, law, c_grid: Sequence[float], **alloc_kwargs
) -> SweepSeries:
    """Token-to-model ratio of the optimal configuration per compute budget."""
    return sweep(budgets, law, "compute", c_grid, **alloc_kwargs)


def critical_compute(series: SweepSeries, tolerance: float = 0.01) -> float:
    """Smallest compute whose loss is within (1 + tolerance) of the series floor."""
    if series.axis != "compute":
        raise ValueError("critical compute needs a compute-axis sweep")
    losses = series.losses
    if any(b > a + 1e-12 for a, b in zip(losses, losses[1:])):
        raise ValueError("series must be nonincreasing in compute")
    floor = min(losses)
    for x, loss in zip(series.x, losses):
        if loss <= (1.0 + tolerance) * floor:
            return x
    return series.x[-1]


# ---------------------------------------------------------------------------
# Baseline comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineComparison:
    eps_grid: tuple[float, ...]
    names: tuple[str, ...]
    baselines: tuple[TrainingConfig, ...]
    baseline_results: tuple[tuple[PlanResult, ...], ...]  # [baseline][eps]
    optimal_reports: tuple[tuple[AllocationReport, ...], ...]  # [baseline][eps]

    def to_json_obj(self) -> dict:
        return {
            "epsilon": list(self.eps_grid),
            "baselines": [
                {
                    "name": name,
                    "config": {
                        "model_params": cfg.model_params,
                        "batch_size": cfg.batch_size,
                        "iterations": cfg.iterations,
                        "seq_len": cfg.seq_len,
                        "compute": cfg.compute,
                    },
                    "loss": [r.predicted_loss for r in rows],
                    "optimal_loss": [rep.best.predicted_loss for rep in opt_rows],
                }
                for name, cfg, rows, opt_rows in zip(
                    self.names, self.baselines, self.baseline_results, self.optimal_reports
                )
            ],
        }


def compare_baselines(
    baselines: Sequence[tuple[str, TrainingConfig]],
    data_budget: int,
    law,
    eps_grid: Sequence[float],
    delta: float = DEFAULT_DELTA,
    **alloc_kwargs,
) -> BaselineComparison:
    """Fixed configurations vs the compute-optimal choice across budgets.

    Each baseline is evaluated at every privacy budget; the optimal series
    uses the baseline's own compute and includes the baseline in its
    candidate set, so it can never lose to it.
    """
    names = tuple(n for n, _ in baselines)
    configs = tuple(c for _, c in baselines)
    base_rows = []
    opt_rows = []
    for cfg in configs:
        row = []
        orow = []
        for eps in eps_grid:
            budgets = Budgets(cfg.compute, PrivacySpec(eps, delta), data_budget)
            row.append(evaluate(cfg, budgets, law))
            orow.append(
                optimal_allocation(budgets, law, extra_configs=[cfg], **alloc_kwargs)
            )
        base_rows.append(tuple(row))
        opt_rows.append(tuple(orow))
    return BaselineComparison(
        tuple(float(e) for e in eps_grid), names, configs, tuple(base_rows), tuple(opt_rows)
    )


def matched_loss_savings(
    baseline_loss: float,
    baseline_compute: float,
    budgets: Budgets,
    law,
    c_grid: Sequence[float],
    **alloc_kwargs,
) -> float | None:
    """Compute-savings factor: baseline compute over the smallest compute
    whose optimal loss matches the baseline's. None if never matched."""
    for c in sorted(c_grid):
        report = optimal_allocation(
            Budgets(c, budgets.privacy, budgets.data), law, **alloc_kwargs
        )
        if report.best.predicted_loss <= baseline_loss:
            return baseline_compute / c
    return None


def load_baselines() -> list[tuple[str, TrainingConfig]]:
    """Reference fixed-training baselines shipped with the package."""
    text = (
        importlib.resources.files("dpscaling")
        .joinpath("fixtures/baselines.json")
        .read_text(encoding="utf-8")
    )
    doc = json.loads(text)
    return [
        (
            entry["name"],
            TrainingConfig(
                entry["model_params"],
                entry["batch_size"],
                entry["iterations"],
                entry.get("seq_len", DEFAULT_SEQ_LEN),
            ),
        )
        for entry in doc["baselines"]
    ]
