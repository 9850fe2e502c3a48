"""Queryable loss predictors fitted from measurement grids.

Two families:

* ``InterpolatedLaw``: trilinear interpolation of the cleaned grid over
  (log M, log T, log nbr), with a dedicated bilinear slice for the
  non-private nbr = 0 layer. Exact at grid nodes, defined only inside the
  measured bounding box.
* ``ParametricLaw``: closed forms in model size M, examples seen N, and
  noise-batch ratio. Form L1 adds a plain power term in the noise; form L2
  squashes the noise through a logistic transform of log nbr and couples
  it to the model size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import least_squares, minimize
from scipy.stats import qmc

from .grid import GridState, MeasurementGrid

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

TRANSFORM_SHIFT = 8.0
TRANSFORM_SCALE = 1.6
DEFAULT_CONTEXT_BATCH = 1024.0


class DomainError(ValueError):
    """Query outside a law's validity box; names the violated axis."""

    def __init__(self, axis: str, value: float, lo: float, hi: float):
        super().__init__(
            f"{axis}={value!r} outside law domain [{lo!r}, {hi!r}]"
        )
        self.axis = axis
        self.value = value
        self.bounds = (lo, hi)


class ParametricFitError(RuntimeError):
    """All optimizer starts diverged; ``diagnostics`` holds per-start info."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


def nbr_transform(
    nbr, shift: float = TRANSFORM_SHIFT, scale: float = TRANSFORM_SCALE
):
    """Squash a positive noise-batch ratio into (0, 1): logistic((ln x + shift)/scale)."""
    x = np.asarray(nbr, dtype=float)
    if np.any(x <= 0):
        raise ValueError("nbr_transform requires positive values")
    z = (np.log(x) + shift) / scale
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def nbr_transform_inverse(
    y, shift: float = TRANSFORM_SHIFT, scale: float = TRANSFORM_SCALE
):
    """Inverse of nbr_transform on (0, 1)."""
    y = np.asarray(y, dtype=float)
    if np.any((y <= 0) | (y >= 1)):
        raise ValueError("inverse transform requires values in (0, 1)")
    out = np.exp(scale * (np.log(y) - np.log1p(-y)) - shift)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Parametric laws
# ---------------------------------------------------------------------------

L1_COEFF_NAMES = ("E", "A", "alpha", "B_coef", "beta", "C_coef", "gamma")
L2_COEFF_NAMES = L1_COEFF_NAMES + ("alpha2",)


@dataclass(frozen=True)
class ParametricLaw:
    """Closed-form loss surface over (model size, examples, noise-batch ratio)."""

    form: str  # "L1" | "L2"
    E: float
    A: float
    alpha: float
    B_coef: float
    beta: float
    C_coef: float
    gamma: float
    alpha2: float = 0.0
    transform_shift: float = TRANSFORM_SHIFT
    transform_scale: float = TRANSFORM_SCALE
    context_batch_size: float = DEFAULT_CONTEXT_BATCH
    domain: dict = field(default_factory=dict)
    fit_metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.form not in ("L1", "L2"):
            raise ValueError(f"form must be 'L1' or 'L2', got {self.form!r}")
        if min(self.A, self.B_coef, self.C_coef) < 0:
            raise ValueError("A, B_coef, C_coef must be nonnegative")
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("alpha, beta, gamma must be positive")

    @property
    def coefficients(self) -> dict:
        names = L2_COEFF_NAMES if self.form == "L2" else L1_COEFF_NAMES
        return {n: getattr(self, n) for n in names}


def predict_parametric(law: ParametricLaw, m, n_examples, nbr):
    """Evaluate the law; nbr = 0 drops the noise term entirely."""
    m = np.asarray(m, dtype=float)
    n = np.asarray(n_examples, dtype=float)
    s = np.asarray(nbr, dtype=float)
    if np.any(m <= 0) or np.any(n <= 0):
        raise ValueError("model size and example count must be positive")
    if np.any(s < 0):
        raise ValueError("noise-batch ratio must be nonnegative")
    base = law.E + law.A / m**law.alpha + law.B_coef / n**law.beta
    noise = np.zeros(np.broadcast(m, n, s).shape)
    pos = np.broadcast_to(s, noise.shape) > 0
    if np.any(pos):
        sp = np.broadcast_to(s, noise.shape)[pos]
        mp = np.broadcast_to(m, noise.shape)[pos]
        if law.form == "L1":
            noise[pos] = law.C_coef * sp**law.gamma
        else:
            squashed = nbr_transform(sp, law.transform_shift, law.transform_scale)
            noise[pos] = law.C_coef * squashed**law.gamma / mp**law.alpha2
    out = base + noise
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FitFilters:
    """Row filters applied before parametric fitting."""

    min_iterations: float = 100_000.0
    min_nbr: float = 5e-7
    max_loss: float = 8.0


def _huber(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r**2, delta * (a - 0.5 * delta))


def fit_parametric(
    m: Sequence[float],
    n_examples: Sequence[float],
    nbr: Sequence[float],
    loss: Sequence[float],
    form: str = "L2",
    *,
    iterations: Sequence[float] | None = None,
    filters: FitFilters = FitFilters(),
    huber_delta: float = 1e-3,
    log_objective: bool = False,
    n_starts: int = 32,
    seed: int = 0,
) -> ParametricLaw:
    """Fit coefficients by minimizing the mean Huber loss over multi-starts.

    Rows failing the filters (too few iterations when given, tiny noise
    ratios, very high loss) are excluded from the objective. Starts are a
    deterministic Sobol sequence over the coefficient box; quasi-Newton
    descent runs from each, and the best candidate gets a robust
    trust-region polish of the same objective (kept only if it improves).
    Ties break by lexicographic coefficient order. The scale coefficients
    A, B, C are optimized in log space so the box covers their decades
    evenly.
    """
    m = np.asarray(m, dtype=float)
    n = np.asarray(n_examples, dtype=float)
    s = np.asarray(nbr, dtype=float)
    y = np.asarray(loss, dtype=float)
    keep = (s > filters.min_nbr) & (y <= filters.max_loss)
    if iterations is not None:
        keep &= np.asarray(iterations, dtype=float) > filters.min_iterations
    if keep.sum() < 10:
        raise ValueError(
            f"need >= 10 rows after filters, have {int(keep.sum())}"
        )
    m, n, s, y = m[keep], n[keep], s[keep], y[keep]

    names = list(L2_COEFF_NAMES if form == "L2" else L1_COEFF_NAMES)
    log_m, log_n = np.log(m), np.log(n)
    log_s = np.log(s)
    squashed = nbr_transform(s)

    # Internal vector: [E, ln A, alpha, ln B, beta, ln C, gamma, (alpha2)].
    bounds = [
        (0.0, max(float(y.min()), 1e-6)),
        (math.log(1e-3), math.log(1e6)),
        (0.01, 3.0),
        (math.log(1e-3), math.log(1e6)),
        (0.01, 3.0),
        (math.log(1e-6), math.log(1e4)),
        (0.01, 5.0),
    ]
    if form == "L2":
        bounds.append((-2.0, 2.0))

    def predict(p: np.ndarray) -> np.ndarray:
        pred = p[0] + np.exp(p[1] - p[2] * log_m) + np.exp(p[3] - p[4] * log_n)
        if form == "L1":
            return pred + np.exp(p[5] + p[6] * log_s)
        return pred + np.exp(p[5]) * squashed ** p[6] * np.exp(-p[7] * log_m)

    def residuals(p: np.ndarray) -> np.ndarray:
        if log_objective:
            return np.log(np.maximum(predict(p), 1e-12)) - np.log(y)
        return predict(p) - y

    def objective(p: np.ndarray) -> float:
        return float(np.mean(_huber(residuals(p), huber_delta)))

    sobol = qmc.Sobol(d=len(bounds), scramble=True, seed=seed)
    unit = sobol.random(n_starts)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [lo + u * (hi - lo) for u in unit]

    results = []
    diagnostics = []
    for start in starts:
        res = minimize(
            objective,
            start,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-12},
        )
        diagnostics.append(
            {"start": list(start), "fun": float(res.fun),
             "ok": bool(np.all(np.isfinite(res.x)))}
        )
        if np.all(np.isfinite(res.x)) and math.isfinite(res.fun):
            results.append((float(res.fun), tuple(res.x)))
    if not results:
        raise ParametricFitError("all fit starts diverged", diagnostics=diagnostics)
    results.sort(key=lambda r: (r[0], r[1]))
    final_loss, best = results[0]
    for _, candidate in results[:5]:
        polish = least_squares(
            residuals,
            np.array(candidate),
            loss="huber",
            f_scale=huber_delta,
            bounds=(lo, hi),
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
        if np.all(np.isfinite(polish.x)):
            value = objective(polish.x)
            if (value, tuple(polish.x)) < (final_loss, best):
                final_loss, best = value, tuple(polish.x)

    natural = list(best)
    for i in (1, 3, 5):  # ln A, ln B, ln C back to natural scale
        natural[i] = math.exp(natural[i])
    coeffs = dict(zip(names, natural))
    domain = {
        "m": [float(m.min()), float(m.max())],
        "n_examples": [float(n.min()), float(n.max())],
        "nbr": [0.0, float(s.max())],
    }
    if iterations is not None:
        its = np.asarray(iterations, dtype=float)[keep]
        domain["t"] = [float(its.min()), float(its.max())]
    return ParametricLaw(
        form=form,
        **coeffs,
        domain=domain,
        fit_metadata={
            "huber_delta": huber_delta,
            "log_objective": log_objective,
            "filters": {
                "min_iterations": filters.min_iterations,
                "min_nbr": filters.min_nbr,
                "max_loss": filters.max_loss,
            },
            "final_loss": final_loss,
            "n_rows": int(keep.sum()),
            "n_starts": len(starts),
        },
    )


def optimal_model_size(
    law: ParametricLaw,
    compute: float,
    nbr: float,
    seq_len: float = 512.0,
    bracket: tuple[float, float] = (1e5, 1e11),
) -> float:
    """Model size minimizing predicted loss at fixed compute.

    Tokens are tied to the model size by compute = 6 * M * tokens; the
    example count seen by the law is tokens / seq_len. The objective is
    convex in log M (a sum of exponentials), so golden-section search on
    log M converges to the global optimum; tolerance 1e-3 relative.
    """
    if compute <= 0:
        raise ValueError("compute must be positive")

    def loss_at(log_m: float) -> float:
        mm = math.exp(log_m)
        n_ex = compute / (6.0 * mm * seq_len)
        return predict_parametric(law, mm, n_ex, nbr)

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = loss_at(c), loss_at(d)
    while hi - lo > 1e-3:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = loss_at(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = loss_at(d)
    return math.exp((lo + hi) / 2.0)


# ---------------------------------------------------------------------------
# Interpolated laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InterpolatedLaw:
    """Loss surface interpolated linearly in (log M, log T, log nbr).

    The non-private layer (nbr exactly 0), when present, lives in a
    separate bilinear slice over (log M, log T).
    """

    axis_m: np.ndarray
    axis_t: np.ndarray
    axis_nbr: np.ndarray  # strictly positive part
    tensor: np.ndarray  # (n_m, n_t, n_nbr)
    zero_slice: np.ndarray | None  # (n_m, n_t) or None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("axis_m", "axis_t", "axis_nbr"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "tensor", np.asarray(self.tensor, dtype=float))
        if self.zero_slice is not None:
            object.__setattr__(self, "zero_slice", np.asarray(self.zero_slice, dtype=float))
        if len(self.axis_m) < 2 or len(self.axis_t) < 2 or len(self.axis_nbr) < 2:
            raise ValueError("interpolation needs at least 2 points per axis")
        if np.any(self.axis_nbr <= 0):
            raise ValueError("positive-noise axis must exclude 0")

    @property
    def domain(self) -> dict:
        return {
            "m": [float(self.axis_m[0]), float(self.axis_m[-1])],
            "t": [float(self.axis_t[0]), float(self.axis_t[-1])],
            "nbr": [float(self.axis_nbr[0]), float(self.axis_nbr[-1])],
            "has_nonprivate": self.zero_slice is not None,
        }

    @cached_property
    def _interp3(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(
            (np.log(self.axis_m), np.log(self.axis_t), np.log(self.axis_nbr)),
            self.tensor,
            method="linear",
            bounds_error=True,
        )

    @cached_property
    def _interp2(self) -> RegularGridInterpolator | None:
        if self.zero_slice is None:
            return None
        return RegularGridInterpolator(
            (np.log(self.axis_m), np.log(self.axis_t)),
            self.zero_slice,
            method="linear",
            bounds_error=True,
        )


def build_interpolator(grid: MeasurementGrid) -> InterpolatedLaw:
    """Interpolated law from a monotone or extrapolated grid."""
    grid.require_state(GridState.MONOTONE, GridState.EXTRAPOLATED)
    nbr = grid.axis_nbr
    if nbr[0] == 0.0:
        zero_slice = grid.loss[:, :, 0]
        axis_nbr = nbr[1:]
        tensor = grid.loss[:, :, 1:]
    else:
        zero_slice = None
        axis_nbr = nbr
        tensor = grid.loss
    return InterpolatedLaw(
        axis_m=grid.axis_m,
        axis_t=grid.axis_t,
        axis_nbr=axis_nbr,
        tensor=tensor,
        zero_slice=zero_slice,
        provenance={**grid.provenance, "grid_state": grid.state.name.lower()},
    )


def _check_bounds(axis: str, value: float, lo: float, hi: float) -> None:
    if not (lo <= value <= hi):
        raise DomainError(axis, value, lo, hi)


def query(law, m: float, t: float, nbr: float) -> float:
    """Predicted loss for an M-parameter model after t steps at the given noise."""
    if isinstance(law, ParametricLaw):
        if nbr < 0:
            raise ValueError("noise-batch ratio must be nonnegative")
        dom = law.domain
        if "m" in dom:
            _check_bounds("m", m, *dom["m"])
        if "t" in dom:
            _check_bounds("t", t, *dom["t"])
        if nbr > 0 and "nbr" in dom:
            _check_bounds("nbr", nbr, *dom["nbr"])
        n_examples = law.context_batch_size * t
        return float(predict_parametric(law, m, n_examples, nbr))
    if not isinstance(law, InterpolatedLaw):
        raise TypeError(f"unknown law type {type(law).__name__}")
    _check_bounds("m", m, law.axis_m[0], law.axis_m[-1])
    _check_bounds("t", t, law.axis_t[0], law.axis_t[-1])
    if nbr == 0.0:
        if law.zero_slice is None:
            raise DomainError("nbr", 0.0, law.axis_nbr[0], law.axis_nbr[-1])
        return float(law._interp2((math.log(m), math.log(t))))
    _check_bounds("nbr", nbr, law.axis_nbr[0], law.axis_nbr[-1])
    return float(law._interp3((math.log(m), math.log(t), math.log(nbr))))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

LAW_SCHEMA_VERSION = 1


def law_to_json_obj(law) -> dict:
    if isinstance(law, InterpolatedLaw):
        return {
            "schema_version": LAW_SCHEMA_VERSION,
            "kind": "interp",
            "axes": {
                "m": list(law.axis_m),
                "t": list(law.axis_t),
                "nbr": list(law.axis_nbr),
            },
            "loss": list(law.tensor.ravel(order="C")),
            "zero_slice": None if law.zero_slice is None else list(law.zero_slice.ravel(order="C")),
            "domain": law.domain,
            "fit_metadata": dict(law.provenance),
        }
    if isinstance(law, ParametricLaw):
        return {
            "schema_version": LAW_SCHEMA_VERSION,
            "kind": "parametric",
            "form": law.form,
            "coefficients": law.coefficients,
            "transform": {"shift": law.transform_shift, "scale": law.transform_scale},
            "context_batch_size": law.context_batch_size,
            "domain": dict(law.domain),
            "fit_metadata": dict(law.fit_metadata),
        }
    raise TypeError(f"unknown law type {type(law).__name__}")


def law_from_json_obj(obj: dict):
    if obj.get("schema_version") != LAW_SCHEMA_VERSION:
        raise ValueError(f"unsupported law schema_version {obj.get('schema_version')!r}")
    kind = obj.get("kind")
    if kind == "interp":
        axes = obj["axes"]
        shape = (len(axes["m"]), len(axes["t"]), len(axes["nbr"]))
        zero = obj.get("zero_slice")
        return InterpolatedLaw(
            axis_m=np.asarray(axes["m"]),
            axis_t=np.asarray(axes["t"]),
            axis_nbr=np.asarray(axes["nbr"]),
            tensor=np.asarray(obj["loss"]).reshape(shape),
            zero_slice=None if zero is None else np.asarray(zero).reshape(shape[:2]),
            provenance=dict(obj.get("fit_metadata", {})),
        )
    if kind == "parametric":
        coeffs = obj["coefficients"]
        transform = obj.get("transform", {})
        return ParametricLaw(
            form=obj["form"],
            E=coeffs["E"],
            A=coeffs["A"],
            alpha=coeffs["alpha"],
            B_coef=coeffs["B_coef"],
            beta=coeffs["beta"],
            C_coef=coeffs["C_coef"],
            gamma=coeffs["gamma"],
            alpha2=coeffs.get("alpha2", 0.0),
            transform_shift=transform.get("shift", TRANSFORM_SHIFT),
            transform_scale=transform.get("scale", TRANSFORM_SCALE),
            context_batch_size=obj.get("context_batch_size", DEFAULT_CONTEXT_BATCH),
            domain=dict(obj.get("domain", {})),
            fit_metadata=dict(obj.get("fit_metadata", {})),
        )
    raise ValueError(f"unknown law kind {kind!r}")
