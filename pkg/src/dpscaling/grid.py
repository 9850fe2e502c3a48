"""Loss-measurement grids: ingestion, cleaning, and extrapolation.

A grid holds cross-entropy losses on a dense (model size, iterations,
noise-batch ratio) lattice, with one layer per learning rate while raw.
Cleaning smooths each training curve, takes the pointwise best learning
rate, and projects onto the monotone cone (nonincreasing in iterations,
nondecreasing in noise). Extrapolation extends the iteration axis with
per-cell power-law fits ``E + A / T**alpha``.

Grids are immutable values; every pipeline stage returns a new grid and
advances the state machine raw -> smoothed -> monotone -> extrapolated.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

EXTRAPOLATION_CAP = 2**20


class GridLoadError(ValueError):
    """Malformed measurement table; ``rows`` lists offending 1-based rows."""

    def __init__(self, message: str, rows: Sequence[int] = ()):
        super().__init__(message)
        self.rows = tuple(rows)


class GridStateError(ValueError):
    """Operation applied to a grid in the wrong pipeline state."""


class FitError(RuntimeError):
    """Power-law fit failed; ``best_so_far`` carries the least-bad fit."""

    def __init__(self, message: str, best_so_far=None):
        super().__init__(message)
        self.best_so_far = best_so_far


class GridState(enum.IntEnum):
    RAW = 0
    SMOOTHED = 1
    MONOTONE = 2
    EXTRAPOLATED = 3


@dataclass(frozen=True)
class Measurement:
    """One recorded loss value."""

    model_params: int
    iterations: int
    noise_batch_ratio: float
    learning_rate: float
    loss: float


@dataclass(frozen=True)
class MeasurementGrid:
    """Dense loss tensor over (model size, iterations, noise-batch ratio).

    ``loss`` has shape (n_lr, n_m, n_t, n_nbr) while raw and
    (n_m, n_t, n_nbr) from the smoothed state on.
    """

    axis_m: np.ndarray
    axis_t: np.ndarray
    axis_nbr: np.ndarray
    loss: np.ndarray
    state: GridState
    learning_rates: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("axis_m", "axis_t", "axis_nbr"):
            ax = np.asarray(getattr(self, name), dtype=float)
            if ax.ndim != 1 or len(ax) == 0:
                raise ValueError(f"{name} must be a nonempty 1-d array")
            if np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, ax)
        expected = (len(self.axis_m), len(self.axis_t), len(self.axis_nbr))
        loss = np.asarray(self.loss, dtype=float)
        if self.state is GridState.RAW:
            if self.learning_rates is None:
                raise ValueError("raw grids carry per-learning-rate layers")
            lrs = np.asarray(self.learning_rates, dtype=float)
            if loss.shape != (len(lrs),) + expected:
                raise ValueError(
                    f"loss shape {loss.shape} does not match axes {(len(lrs),) + expected}"
                )
            object.__setattr__(self, "learning_rates", lrs)
        elif loss.shape != expected:
            raise ValueError(f"loss shape {loss.shape} does not match axes {expected}")
        if not np.all(np.isfinite(loss)):
            raise ValueError("loss tensor contains non-finite values")
        loss.flags.writeable = False
        object.__setattr__(self, "loss", loss)

    def require_state(self, *states: GridState) -> None:
        if self.state not in states:
            wanted = " or ".join(s.name.lower() for s in states)
            raise GridStateError(f"grid is {self.state.name.lower()}, expected {wanted}")

    def to_json_obj(self) -> dict:
        if self.state < GridState.MONOTONE:
            raise GridStateError("only monotone or extrapolated grids serialize")
        return {
            "schema_version": 1,
            "axes": {
                "m": list(self.axis_m),
                "t": list(self.axis_t),
                "nbr": list(self.axis_nbr),
            },
            "loss": list(self.loss.ravel(order="C")),
            "state": self.state.name.lower(),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "MeasurementGrid":
        axes = obj["axes"]
        shape = (len(axes["m"]), len(axes["t"]), len(axes["nbr"]))
        return cls(
            axis_m=np.asarray(axes["m"], dtype=float),
            axis_t=np.asarray(axes["t"], dtype=float),
            axis_nbr=np.asarray(axes["nbr"], dtype=float),
            loss=np.asarray(obj["loss"], dtype=float).reshape(shape),
            state=GridState[obj["state"].upper()],
            provenance=dict(obj.get("provenance", {})),
        )


CSV_HEADER = ("model_params", "iterations", "noise_batch_ratio", "learning_rate", "loss")


def load_grid_csv(source) -> MeasurementGrid:
    """Assemble a raw grid from a measurement CSV (path or open text file).

    Rows may be in any order but must form a complete cross product of the
    model-size, iteration, noise-batch-ratio, and learning-rate axes.
    """
    if hasattr(source, "read"):
        return _load_grid(csv.reader(source))
    with open(os.fspath(source), newline="", encoding="utf-8") as fh:
        return _load_grid(csv.reader(fh))


def grid_from_measurements(rows: Iterable[Measurement]) -> MeasurementGrid:
    records = [
        (r.model_params, r.iterations, r.noise_batch_ratio, r.learning_rate, r.loss, i + 1)
        for i, r in enumerate(rows)
    ]
    return _assemble(records)


def _load_grid(reader) -> MeasurementGrid:
    it = iter(reader)
    try:
        header = [c.strip() for c in next(it)]
    except StopIteration:
        raise GridLoadError("empty measurement table") from None
    if tuple(header) != CSV_HEADER:
        raise GridLoadError(
            f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", rows=[1]
        )
    records = []
    bad_rows = []
    for lineno, row in enumerate(it, start=2):
        if not row:
            continue
        try:
            m = int(float(row[0]))
            t = int(float(row[1]))
            nbr = float(row[2])
            lr = float(row[3])
            loss = float(row[4])
        except (ValueError, IndexError):
            bad_rows.append(lineno)
            continue
        records.append((m, t, nbr, lr, loss, lineno))
    if bad_rows:
        raise GridLoadError(f"unparseable rows: {bad_rows}", rows=bad_rows)
    return _assemble(records)


def _assemble(records) -> MeasurementGrid:
    if not records:
        raise GridLoadError("no measurement rows")
    nonfinite = [r[5] for r in records if not math.isfinite(r[4]) or r[4] <= 0]
    if nonfinite:
        raise GridLoadError(
            f"non-finite or non-positive losses at rows {nonfinite}", rows=nonfinite
        )
    axis_m = np.array(sorted({r[0] for r in records}), dtype=float)
    axis_t = np.array(sorted({r[1] for r in records}), dtype=float)
    axis_nbr = np.array(sorted({r[2] for r in records}), dtype=float)
    lrs = np.array(sorted({r[3] for r in records}), dtype=float)
    idx = {
        "m": {v: i for i, v in enumerate(axis_m)},
        "t": {v: i for i, v in enumerate(axis_t)},
        "nbr": {v: i for i, v in enumerate(axis_nbr)},
        "lr": {v: i for i, v in enumerate(lrs)},
    }
    shape = (len(lrs), len(axis_m), len(axis_t), len(axis_nbr))
    loss = np.full(shape, np.nan)
    filled_by = np.zeros(shape, dtype=int)
    dupes = []
    for m, t, nbr, lr, value, line in records:
        key = (idx["lr"][lr], idx["m"][m], idx["t"][t], idx["nbr"][nbr])
        if filled_by[key]:
            dupes.append(line)
        filled_by[key] = line
        loss[key] = value
    if dupes:
        raise GridLoadError(f"duplicate (M, T, nbr, lr) keys at rows {dupes}", rows=dupes)
    if np.isnan(loss).any():
        missing = int(np.isnan(loss).sum())
        raise GridLoadError(
            f"incomplete grid: {missing} missing cells out of {loss.size}"
        )
    return MeasurementGrid(
        axis_m=axis_m,
        axis_t=axis_t,
        axis_nbr=axis_nbr,
        loss=loss,
        state=GridState.RAW,
        learning_rates=lrs,
    )


# ---------------------------------------------------------------------------
# Smoothing and monotone projection
# ---------------------------------------------------------------------------


def rolling_average(series: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean including the current point, truncated at the start."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    x = np.asarray(series, dtype=float)
    if window == 1:
        return x.copy()  # bit-exact identity, not a cumsum round trip
    csum = np.concatenate([[0.0], np.cumsum(x)])
    n = len(x)
    starts = np.maximum(np.arange(n) - window + 1, 0)
    return (csum[np.arange(n) + 1] - csum[starts]) / (np.arange(n) + 1 - starts)


def isotonic_fit(
    values: Sequence[float],
    direction: str = "nondecreasing",
    weights: Sequence[float] | None = None,
) -> np.ndarray:
    """Least-squares projection onto the monotone cone (pool adjacent violators)."""
    y = np.asarray(values, dtype=float)
    if y.ndim != 1 or len(y) == 0:
        raise ValueError("values must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(y)):
        raise ValueError("values must be finite")
    if direction not in ("nondecreasing", "nonincreasing"):
        raise ValueError(f"unknown direction {direction!r}")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if direction == "nonincreasing":
        return -_pava(-y, w)
    return _pava(y, w)


def _pava(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Nondecreasing weighted isotonic regression, O(n) stack form."""
    means: list[float] = []
    weights: list[float] = []
    counts: list[int] = []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        weights.append(float(wi))
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), weights.pop(), counts.pop()
            m1, w1, c1 = means.pop(), weights.pop(), counts.pop()
            wt = w1 + w2
            means.append((m1 * w1 + m2 * w2) / wt)
            weights.append(wt)
            counts.append(c1 + c2)
    return np.repeat(means, counts)


def smooth(grid: MeasurementGrid, window: int = 10) -> MeasurementGrid:
    """Rolling-average each training curve, then take the best learning rate."""
    grid.require_state(GridState.RAW)
    n_lr, n_m, n_t, n_nbr = grid.loss.shape
    smoothed = np.empty_like(grid.loss)
    for l in range(n_lr):
        for i in range(n_m):
            for k in range(n_nbr):
                smoothed[l, i, :, k] = rolling_average(grid.loss[l, i, :, k], window)
    reduced = smoothed.min(axis=0)
    return MeasurementGrid(
        axis_m=grid.axis_m,
        axis_t=grid.axis_t,
        axis_nbr=grid.axis_nbr,
        loss=reduced,
        state=GridState.SMOOTHED,
        provenance={**grid.provenance, "window": window, "lr_policy": "pointwise_min"},
    )


def make_monotone(grid: MeasurementGrid) -> MeasurementGrid:
    """Project each axis onto its expected monotone direction.

    Loss becomes nonincreasing along iterations (per model size and noise)
    and nondecreasing along the noise-batch ratio (per model size and
    iteration count). No monotonicity is enforced across model sizes.
    """
    grid.require_state(GridState.SMOOTHED)
    loss = np.array(grid.loss)
    n_m, n_t, n_nbr = loss.shape
    for i in range(n_m):
        for k in range(n_nbr):
            loss[i, :, k] = isotonic_fit(loss[i, :, k], "nonincreasing")
    for i in range(n_m):
        for j in range(n_t):
            loss[i, j, :] = isotonic_fit(loss[i, j, :], "nondecreasing")
    return MeasurementGrid(
        axis_m=grid.axis_m,
        axis_t=grid.axis_t,
        axis_nbr=grid.axis_nbr,
        loss=loss,
        state=GridState.MONOTONE,
        provenance=dict(grid.provenance),
    )


def clean(grid: MeasurementGrid, window: int = 10) -> MeasurementGrid:
    """Full cleaning pipeline: smooth, best learning rate, monotone projection."""
    return make_monotone(smooth(grid, window))


# ---------------------------------------------------------------------------
# Power-law extrapolation over iterations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLawFit:
    """Training-curve tail model ``loss = E + A / T**alpha``."""

    E: float
    A: float
    alpha: float
    fit_range: tuple[float, float]
    residual: float

    def predict(self, t) -> np.ndarray:
        return self.E + self.A / np.asarray(t, dtype=float) ** self.alpha


def fit_power_law(
    t: Sequence[float], loss: Sequence[float], fit_range: tuple[float, float]
) -> PowerLawFit:
    """Least-squares fit of E + A / T**alpha over points inside fit_range.

    Multi-start damped Gauss-Newton (trust region reflective); the start
    with the smallest sum of squared residuals wins.
    """
    t = np.asarray(t, dtype=float)
    loss = np.asarray(loss, dtype=float)
    lo, hi = fit_range
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 4:
        raise ValueError(
            f"need >= 4 points inside fit range [{lo}, {hi}], have {int(mask.sum())}"
        )
    ts, ys = t[mask], loss[mask]

    def residuals(p):
        e, a, al = p
        return e + a / ts**al - ys

    y_min = float(ys.min())
    starts = []
    for alpha0 in (0.1, 0.3, 0.5, 1.0):
        for e_frac in (0.5, 0.9):
            e0 = max(y_min * e_frac, 0.0)
            a0 = max((ys[0] - e0) * ts[0] ** alpha0, 1e-12)
            starts.append((e0, a0, alpha0))

    best = None
    for start in starts:
        try:
            res = least_squares(
                residuals,
                start,
                bounds=([0.0, 0.0, 1e-6], [np.inf, np.inf, 10.0]),
                method="trf",
                xtol=1e-14,
                ftol=1e-14,
                gtol=1e-14,
            )
        except Exception:
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        sse = float(np.sum(res.fun**2))
        if best is None or sse < best[0]:
            best = (sse, res.x)
    if best is None:
        raise FitError("all power-law fits diverged", best_so_far=None)
    sse, (e, a, alpha) = best
    fit = PowerLawFit(float(e), float(a), float(alpha), (float(lo), float(hi)), sse)
    if not all(map(math.isfinite, (e, a, alpha))):
        raise FitError("power-law fit produced non-finite parameters", best_so_far=fit)
    return fit


def default_fit_range(axis_t: np.ndarray) -> tuple[float, float]:
    """Tail window ending at the last iteration, spanning a factor of 8.

    Widened to the last four samples when the grid is too coarse for the
    factor-8 window to hold enough points for a fit.
    """
    hi = float(axis_t[-1])
    lo = hi / 8.0
    if np.count_nonzero((axis_t >= lo) & (axis_t <= hi)) < 4:
        if len(axis_t) < 4:
            raise ValueError("iteration axis too short to fit a training-curve tail")
        lo = float(axis_t[-4])
    return (lo, hi)


def extrapolate(
    grid: MeasurementGrid,
    target_t_axis: Sequence[float],
    fit_range: tuple[float, float] | None = None,
) -> MeasurementGrid:
    """Extend the iteration axis using per-cell power-law fits.

    The target axis must contain the existing iteration axis; new values
    must all exceed the current maximum (and stay below the extrapolation
    cap). In-range values are preserved exactly; monotonicity along both
    iterations and noise is re-established on the new slices.
    """
    grid.require_state(GridState.MONOTONE, GridState.EXTRAPOLATED)
    target = np.asarray(sorted(set(float(t) for t in target_t_axis)), dtype=float)
    old = grid.axis_t
    if len(target) < len(old) or not np.array_equal(target[: len(old)], old):
        raise ValueError("target iteration axis must extend the existing axis")
    new = target[len(old):]
    if len(new) == 0:
        return grid
    if new.max() > EXTRAPOLATION_CAP:
        raise ValueError(
            f"extrapolation beyond T={EXTRAPOLATION_CAP} is outside the trust region"
        )
    window = fit_range if fit_range is not None else default_fit_range(old)
    n_m, n_t, n_nbr = grid.loss.shape
    out = np.empty((n_m, len(target), n_nbr))
    out[:, :n_t, :] = grid.loss
    for i in range(n_m):
        for k in range(n_nbr):
            fit = fit_power_law(old, grid.loss[i, :, k], window)
            pred = fit.predict(new)
            # The tail may not undercut the last observed value or rise.
            pred = np.minimum.accumulate(np.minimum(pred, grid.loss[i, -1, k]))
            out[i, n_t:, k] = pred
    for j in range(n_t, len(target)):
        for i in range(n_m):
            out[i, j, :] = isotonic_fit(out[i, j, :], "nondecreasing")
    return MeasurementGrid(
        axis_m=grid.axis_m,
        axis_t=target,
        axis_nbr=grid.axis_nbr,
        loss=out,
        state=GridState.EXTRAPOLATED,
        provenance={**grid.provenance, "fit_range": [window[0], window[1]]},
    )


# ---------------------------------------------------------------------------
# Synthetic grids
# ---------------------------------------------------------------------------


def synth_grid(
    coeffs,
    axis_m: Sequence[float],
    axis_t: Sequence[float],
    axis_nbr: Sequence[float],
    noise_sd: float = 0.0,
    seed: int = 0,
    learning_rates: Sequence[float] = (2.0**-7,),
) -> MeasurementGrid:
    """Generate a raw grid from a parametric loss surface.

    Examples seen per cell follow the grid's measurement context
    (``coeffs.context_batch_size * T``). Gaussian noise of the given sd is
    added per cell and per learning-rate layer, deterministically seeded;
    losses are clamped below at 1e-3.
    """
    from .lawfit import predict_parametric

    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    axis_m = np.asarray(sorted(axis_m), dtype=float)
    axis_t = np.asarray(sorted(axis_t), dtype=float)
    axis_nbr = np.asarray(sorted(axis_nbr), dtype=float)
    lrs = np.asarray(sorted(learning_rates), dtype=float)
    mm, tt, ss = np.meshgrid(axis_m, axis_t, axis_nbr, indexing="ij")
    surface = predict_parametric(coeffs, mm, coeffs.context_batch_size * tt, ss)
    rng = np.random.default_rng(seed)
    layers = np.empty((len(lrs),) + surface.shape)
    for l in range(len(lrs)):
        noise = rng.normal(0.0, noise_sd, surface.shape) if noise_sd > 0 else 0.0
        layers[l] = surface + noise
    layers = np.maximum(layers, 1e-3)
    return MeasurementGrid(
        axis_m=axis_m,
        axis_t=axis_t,
        axis_nbr=axis_nbr,
        loss=layers,
        state=GridState.RAW,
        learning_rates=lrs,
        provenance={"generator": "parametric", "noise_sd": noise_sd, "seed": seed},
    )
