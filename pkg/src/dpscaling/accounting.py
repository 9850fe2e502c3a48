"""Privacy accounting for noisy gradient training.

Computes (epsilon, delta) guarantees of T-fold compositions of (sub)sampled
Gaussian mechanisms, calibrates the noise-batch ratio to a privacy budget,
and derives vulnerability metrics and budget-sensitivity vector fields.

Two batching analyses are supported:

* ``poisson``: each step samples each of the N individuals independently
  with probability q = B/N; accounted with Renyi divergences of the sampled
  Gaussian mechanism at integer orders, composed additively over steps.
* ``deterministic``: fixed batches; the T-step composition of a
  sensitivity-1 Gaussian with multiplier ``sigma`` is exactly one Gaussian
  with multiplier ``sigma / sqrt(T)``, so the profile is available in
  closed form.

``Batching.BOTH`` runs both analyses and keeps the one that needs less
noise (ties go to the deterministic analysis, which is exact).

All functions are pure; there is no shared mutable state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, log_ndtr

DEFAULT_DELTA = 1e-8

# Renyi order grid: integer orders use the exact binomial expansion of the
# sampled Gaussian divergence; the fractional orders only apply to the
# unsampled (q = 1) closed form, where they tighten the conversion.
INTEGER_ORDERS = np.arange(2, 257)
FRACTIONAL_ORDERS = (1.25, 1.5, 1.75)

# Bisection bracket for the noise-batch ratio and its relative width target.
NBR_BRACKET = (1e-10, 1e4)
NBR_REL_TOL = 1e-4
_BISECT_MAX_ITER = 200


class CalibrationError(RuntimeError):
    """Raised when no noise level in the search bracket meets the budget."""


class Batching(str, enum.Enum):
    POISSON = "poisson"
    DETERMINISTIC = "deterministic"
    BOTH = "both"


@dataclass(frozen=True)
class PrivacySpec:
    """An (epsilon, delta) privacy budget.

    ``epsilon = math.inf`` is accepted and means non-private training.
    """

    epsilon: float
    delta: float = DEFAULT_DELTA

    def __post_init__(self) -> None:
        if not self.epsilon > 0 or math.isnan(self.epsilon):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not (0 < self.delta < 1):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class AccountingSetup:
    """Mechanism parameters: data budget N, expected batch size B, steps T."""

    data_budget: int
    batch_size: float
    iterations: int
    batching: Batching = Batching.BOTH

    def __post_init__(self) -> None:
        if self.data_budget < 1:
            raise ValueError("data_budget must be a positive integer")
        if not (math.isfinite(self.batch_size) and self.batch_size > 0):
            raise ValueError("batch_size must be a positive real")
        if self.iterations < 1:
            raise ValueError("iterations must be a positive integer")
        object.__setattr__(self, "batching", Batching(self.batching))
        if self.batch_size > self.data_budget:
            raise ValueError(
                f"batch_size {self.batch_size} exceeds data_budget "
                f"{self.data_budget} (sampling probability would exceed 1)"
            )
        if self.batching is Batching.DETERMINISTIC and self.batch_size < 1:
            raise ValueError("deterministic batching requires batch_size >= 1")

    @property
    def sampling_probability(self) -> float:
        return self.batch_size / self.data_budget


@dataclass(frozen=True)
class NoiseBatchRatio:
    """Std of Gaussian noise on the mean clipped minibatch gradient.

    The per-step noise multiplier (noise relative to the summed gradient,
    per unit clip norm) is ``batch_size * value``. A value of 0 denotes
    non-private training.
    """

    value: float

    def __post_init__(self) -> None:
        if math.isnan(self.value) or self.value < 0:
            raise ValueError(f"noise-batch ratio must be >= 0, got {self.value}")

    def noise_multiplier(self, batch_size: float) -> float:
        return batch_size * self.value


@dataclass(frozen=True)
class RdpCurve:
    """Renyi divergence bounds per order."""

    orders: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.orders) != len(self.values):
            raise ValueError("orders and values must have equal length")
        if not self.orders:
            raise ValueError("curve must be nonempty")
        if any(o <= 1 for o in self.orders):
            raise ValueError("all orders must exceed 1")
        if list(self.orders) != sorted(self.orders):
            raise ValueError("orders must be sorted ascending")
        if any(v < 0 or math.isnan(v) for v in self.values):
            raise ValueError("divergence values must be nonnegative")


@dataclass(frozen=True)
class ProfilePoint:
    epsilon: float
    delta: float
    bound: str  # "exact" | "upper"


@dataclass(frozen=True)
class PrivacyProfile:
    """Sampled curve epsilon -> tightest known delta."""

    points: tuple[ProfilePoint, ...]

    def __post_init__(self) -> None:
        eps = [p.epsilon for p in self.points]
        if eps != sorted(eps):
            raise ValueError("profile points must be sorted by epsilon")
        deltas = [p.delta for p in self.points]
        for a, b in zip(deltas, deltas[1:]):
            if b > a + 1e-15:
                raise ValueError("delta must be nonincreasing in epsilon")

    def to_json_obj(self) -> list[dict]:
        return [
            {"epsilon": p.epsilon, "delta": p.delta, "bound": p.bound}
            for p in self.points
        ]


@dataclass(frozen=True)
class CalibrationResult:
    nbr: NoiseBatchRatio
    branch: Batching
    epsilon_achieved: float
    noise_multiplier: float


@dataclass(frozen=True)
class AdvantageResult:
    """Membership-inference advantage bound (profile delta at epsilon 0)."""

    value: float
    bound: str  # "exact" | "upper"


@dataclass(frozen=True)
class VectorField:
    """Doubling-ratio components of the noise-batch ratio over two axes.

    ``u[i, j]`` is ``nbr(x_i, y_j) / nbr(2 * x_i, y_j) - 1`` and ``v`` the
    same along y: how much doubling that budget shrinks the noise.
    """

    axis_x: str
    axis_y: str
    x: tuple[float, ...]
    y: tuple[float, ...]
    u: np.ndarray
    v: np.ndarray
    fixed: dict
    iterations: int

    def to_json_obj(self) -> dict:
        return {
            "axes": {"x": self.axis_x, "y": self.axis_y},
            "x": list(self.x),
            "y": list(self.y),
            "u": [list(row) for row in self.u],
            "v": [list(row) for row in self.v],
            "fixed": dict(self.fixed),
            "iterations": self.iterations,
        }


# ---------------------------------------------------------------------------
# Renyi divergences
# ---------------------------------------------------------------------------


def rdp_gaussian(noise_multiplier: float, order: float) -> float:
    """Renyi divergence of a sensitivity-1 Gaussian: order / (2 sigma^2)."""
    if not (math.isfinite(noise_multiplier) and noise_multiplier > 0):
        raise ValueError(f"noise_multiplier must be positive, got {noise_multiplier}")
    if not (math.isfinite(order) and order > 1):
        raise ValueError(f"order must exceed 1, got {order}")
    return order / (2.0 * noise_multiplier**2)


_INT_ORD = INTEGER_ORDERS.astype(float)
_FULL_ORD = np.concatenate([FRACTIONAL_ORDERS, _INT_ORD])
# Order-dependent pieces of the RDP -> (eps, delta) conversion, precomputed:
# eps = rho + log1p(-1/a) - log(a)/(a-1) + (-log delta)/(a-1).
_INT_CONV_OFFSET = np.log1p(-1.0 / _INT_ORD) - np.log(_INT_ORD) / (_INT_ORD - 1.0)
_INT_CONV_SLOPE = 1.0 / (_INT_ORD - 1.0)
_FULL_CONV_OFFSET = np.log1p(-1.0 / _FULL_ORD) - np.log(_FULL_ORD) / (_FULL_ORD - 1.0)
_FULL_CONV_SLOPE = 1.0 / (_FULL_ORD - 1.0)


@lru_cache(maxsize=1)
def _binom_tables() -> tuple[np.ndarray, ...]:
    """Flat per-(order, k) tables for the integer-order binomial expansion."""
    orders = INTEGER_ORDERS
    alpha = np.repeat(orders, orders + 1)
    k = np.concatenate([np.arange(o + 1) for o in orders])
    log_binom = gammaln(alpha + 1) - gammaln(k + 1) - gammaln(alpha - k + 1)
    k_pairs = k * (k - 1) / 2.0
    starts = np.concatenate([[0], np.cumsum(orders + 1)[:-1]])
    return orders, alpha.astype(float), k.astype(float), log_binom, k_pairs, starts


def _segment_logsumexp(terms: np.ndarray, starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    seg_max = np.maximum.reduceat(terms, starts)
    shifted = terms - np.repeat(seg_max, lengths)
    sums = np.add.reduceat(np.exp(shifted), starts)
    return seg_max + np.log(sums)


def _rdp_sampled_integer_orders(noise_multiplier: float, q: float) -> np.ndarray:
    """Sampled-Gaussian Renyi divergences at all integer orders 2..256.

    Exact binomial expansion of E_{mu0}[(mu/mu0)^alpha] for the mixture
    mu = (1-q) mu0 + q mu1 with unit shift between mu0 and mu1.
    """
    orders, alpha, k, log_binom, k_pairs, starts = _binom_tables()
    inv_var = 1.0 / (noise_multiplier**2)
    terms = (
        log_binom
        + k * math.log(q)
        + (alpha - k) * math.log1p(-q)
        + k_pairs * inv_var
    )
    log_a = _segment_logsumexp(terms, starts, orders + 1)
    return np.maximum(log_a / (orders - 1), 0.0)


def rdp_subsampled_gaussian(noise_multiplier: float, q: float, order: int) -> float:
    """Renyi divergence of the Poisson-sampled Gaussian at an integer order.

    Reduces to the unsampled closed form at q = 1.
    """
    if not (math.isfinite(noise_multiplier) and noise_multiplier > 0):
        raise ValueError(f"noise_multiplier must be positive, got {noise_multiplier}")
    if not (0 < q <= 1) or math.isnan(q):
        raise ValueError(f"sampling probability must lie in (0, 1], got {q}")
    if q == 1.0:
        return rdp_gaussian(noise_multiplier, order)
    if order != int(order) or order < 2:
        raise ValueError(f"sampled orders must be integers >= 2, got {order}")
    order = int(order)
    ks = np.arange(order + 1, dtype=float)
    log_binom = gammaln(order + 1) - gammaln(ks + 1) - gammaln(order - ks + 1)
    terms = (
        log_binom
        + ks * math.log(q)
        + (order - ks) * math.log1p(-q)
        + ks * (ks - 1) / 2.0 / noise_multiplier**2
    )
    m = terms.max()
    log_a = m + math.log(np.exp(terms - m).sum())
    return max(log_a / (order - 1), 0.0)


def sampled_gaussian_curve(noise_multiplier: float, q: float) -> RdpCurve:
    """Per-step RDP curve over the module's order grid."""
    if not (0 < q <= 1):
        raise ValueError(f"sampling probability must lie in (0, 1], got {q}")
    if q == 1.0:
        orders = list(FRACTIONAL_ORDERS) + [float(o) for o in INTEGER_ORDERS]
        values = [rdp_gaussian(noise_multiplier, o) for o in orders]
        return RdpCurve(tuple(orders), tuple(values))
    values = _rdp_sampled_integer_orders(noise_multiplier, q)
    return RdpCurve(tuple(float(o) for o in INTEGER_ORDERS), tuple(values))


def compose(curve: RdpCurve, steps: int) -> RdpCurve:
    """Additive composition over identical steps."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps == 1:
        return curve
    return RdpCurve(curve.orders, tuple(v * steps for v in curve.values))


def rdp_to_dp(curve: RdpCurve, delta: float) -> float:
    """Best epsilon at the given delta via the improved RDP conversion.

    epsilon = min over orders a of
        rho(a) + log((a - 1) / a) - (log(delta) + log(a)) / (a - 1)
    clipped below at 0.
    """
    if not (0 < delta < 1):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    orders = np.asarray(curve.orders)
    rho = np.asarray(curve.values)
    eps = rho + np.log((orders - 1) / orders) - (math.log(delta) + np.log(orders)) / (orders - 1)
    return max(float(np.min(eps)), 0.0)


def _rdp_to_delta(curve: RdpCurve, epsilon: float) -> float:
    """Tightest delta at the given epsilon from an RDP curve (upper bound)."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    orders = np.asarray(curve.orders)
    rho = np.asarray(curve.values)
    log_delta = (orders - 1) * (rho - epsilon + np.log1p(-1 / orders)) - np.log(orders)
    best = float(np.min(log_delta))
    return min(math.exp(best), 1.0) if best < 0 else 1.0


# ---------------------------------------------------------------------------
# Exact Gaussian profile (deterministic batching)
# ---------------------------------------------------------------------------


def analytic_gaussian_delta(noise_multiplier: float, epsilon: float) -> float:
    """Exact delta(epsilon) of a sensitivity-1 Gaussian mechanism.

    delta = Phi(1/(2 sigma) - eps sigma) - e^eps Phi(-1/(2 sigma) - eps sigma),
    evaluated in log space to stay stable for extreme arguments.
    """
    if not (math.isfinite(noise_multiplier) and noise_multiplier > 0):
        raise ValueError(f"noise_multiplier must be positive, got {noise_multiplier}")
    if math.isnan(epsilon) or epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if math.isinf(epsilon):
        return 0.0
    a = 1.0 / (2.0 * noise_multiplier) - epsilon * noise_multiplier
    b = -1.0 / (2.0 * noise_multiplier) - epsilon * noise_multiplier
    log_hi = float(log_ndtr(a))
    log_lo = epsilon + float(log_ndtr(b))
    if log_lo >= log_hi:
        return 0.0
    return math.exp(log_hi + math.log1p(-math.exp(log_lo - log_hi)))


def _analytic_gaussian_epsilon(noise_multiplier: float, delta: float) -> float:
    """Invert the exact Gaussian profile: smallest epsilon with delta(eps) <= delta."""
    if analytic_gaussian_delta(noise_multiplier, 0.0) <= delta:
        return 0.0
    hi = 1.0
    while analytic_gaussian_delta(noise_multiplier, hi) > delta:
        hi *= 2.0
        if hi > 1e300:
            raise CalibrationError("epsilon inversion failed to bracket")
    return float(
        brentq(
            lambda e: analytic_gaussian_delta(noise_multiplier, e) - delta,
            hi / 2.0 if hi > 1.0 else 0.0,
            hi,
            xtol=1e-14,
            rtol=1e-13,
        )
    )


# ---------------------------------------------------------------------------
# End-to-end accounting
# ---------------------------------------------------------------------------


def _poisson_epsilon_fn(setup: AccountingSetup, delta: float):
    """Fast epsilon(noise-batch ratio) closure for the Poisson analysis.

    Equivalent to composing ``sampled_gaussian_curve`` over the iterations
    and converting with ``rdp_to_dp``, with the per-(q, order) terms
    hoisted out of the noise loop.
    """
    q = setup.sampling_probability
    batch = setup.batch_size
    steps = setup.iterations
    neg_log_delta = -math.log(delta)
    if q == 1.0:
        def fn(nbr_value: float) -> float:
            rho = steps * _FULL_ORD / (2.0 * (batch * nbr_value) ** 2)
            eps = rho + _FULL_CONV_OFFSET + neg_log_delta * _FULL_CONV_SLOPE
            return max(float(eps.min()), 0.0)

        return fn
    orders, alpha, k, log_binom, k_pairs, starts = _binom_tables()
    base = log_binom + k * math.log(q) + (alpha - k) * math.log1p(-q)
    lengths = orders + 1

    def fn(nbr_value: float) -> float:
        sigma_mult = batch * nbr_value
        terms = base + k_pairs / (sigma_mult * sigma_mult)
        log_a = _segment_logsumexp(terms, starts, lengths)
        rho = steps * np.maximum(log_a / (orders - 1), 0.0)
        eps = rho + _INT_CONV_OFFSET + neg_log_delta * _INT_CONV_SLOPE
        return max(float(eps.min()), 0.0)

    return fn


def _epsilon_poisson(setup: AccountingSetup, nbr_value: float, delta: float) -> float:
    return _poisson_epsilon_fn(setup, delta)(nbr_value)


def _epsilon_deterministic(setup: AccountingSetup, nbr_value: float, delta: float) -> float:
    sigma_eff = setup.batch_size * nbr_value / math.sqrt(setup.iterations)
    return _analytic_gaussian_epsilon(sigma_eff, delta)


def epsilon_of(setup: AccountingSetup, nbr: NoiseBatchRatio, delta: float) -> float:
    """Achieved epsilon of the setup at the given noise-batch ratio and delta."""
    if not (0 < delta < 1):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if nbr.value == 0:
        raise ValueError("non-private; epsilon undefined")
    if setup.batching is Batching.POISSON:
        return _epsilon_poisson(setup, nbr.value, delta)
    if setup.batching is Batching.DETERMINISTIC:
        return _epsilon_deterministic(setup, nbr.value, delta)
    return min(
        _epsilon_poisson(setup, nbr.value, delta),
        _epsilon_deterministic(setup, nbr.value, delta),
    )


def _bisect_nbr(satisfied, target_desc: str) -> float:
    """Smallest noise-batch ratio meeting a monotone budget predicate.

    ``satisfied(nbr)`` must be False below some threshold and True above
    it. Geometric bisection over NBR_BRACKET to relative width
    NBR_REL_TOL; the upper endpoint of the final bracket is returned so
    the budget is never exceeded.
    """
    lo, hi = NBR_BRACKET
    if not satisfied(hi):
        raise CalibrationError(
            f"privacy budget {target_desc} unattainable within "
            f"noise-batch-ratio bracket {NBR_BRACKET}"
        )
    if satisfied(lo):
        return lo
    for _ in range(_BISECT_MAX_ITER):
        if hi / lo <= 1.0 + NBR_REL_TOL:
            break
        mid = math.sqrt(lo * hi)
        if satisfied(mid):
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_detail(spec: PrivacySpec, setup: AccountingSetup) -> CalibrationResult:
    """Calibrate the noise-batch ratio and report the winning analysis."""
    if math.isinf(spec.epsilon):
        return CalibrationResult(NoiseBatchRatio(0.0), setup.batching, 0.0, 0.0)
    delta = spec.delta
    desc = f"(epsilon={spec.epsilon}, delta={delta})"
    candidates: list[tuple[float, Batching]] = []
    if setup.batching in (Batching.POISSON, Batching.BOTH):
        eps_fn = _poisson_epsilon_fn(setup, delta)
        value = _bisect_nbr(lambda s: eps_fn(s) <= spec.epsilon, desc)
        candidates.append((value, Batching.POISSON))
    if setup.batching in (Batching.DETERMINISTIC, Batching.BOTH):
        if setup.batch_size >= 1:
            # epsilon(nbr) <= target iff delta at the target epsilon is met.
            scale = setup.batch_size / math.sqrt(setup.iterations)
            value = _bisect_nbr(
                lambda s: analytic_gaussian_delta(scale * s, spec.epsilon) <= delta,
                desc,
            )
            candidates.append((value, Batching.DETERMINISTIC))
        elif setup.batching is Batching.DETERMINISTIC:
            raise ValueError("deterministic batching requires batch_size >= 1")
    # Lower noise wins; ties go to the deterministic (exact) analysis.
    value, branch = min(candidates, key=lambda c: (c[0], c[1] is not Batching.DETERMINISTIC))
    branch_setup = AccountingSetup(
        setup.data_budget, setup.batch_size, setup.iterations, branch
    )
    achieved = epsilon_of(branch_setup, NoiseBatchRatio(value), delta)
    return CalibrationResult(
        NoiseBatchRatio(value), branch, achieved, value * setup.batch_size
    )


def calibrate_nbr(spec: PrivacySpec, setup: AccountingSetup) -> NoiseBatchRatio:
    """Smallest noise-batch ratio meeting the budget under the setup's batching."""
    return calibrate_detail(spec, setup).nbr


# ---------------------------------------------------------------------------
# Profiles and vulnerability
# ---------------------------------------------------------------------------


def privacy_profile(
    setup: AccountingSetup, nbr: NoiseBatchRatio, epsilons: Sequence[float]
) -> PrivacyProfile:
    """Sample the mechanism's epsilon -> delta curve.

    Exact for deterministic batching; an RDP-converted upper bound for
    Poisson. Requires a concrete batching mode.
    """
    if nbr.value <= 0:
        raise ValueError("profile requires a positive noise-batch ratio")
    if setup.batching is Batching.BOTH:
        raise ValueError("privacy profile requires a concrete batching mode")
    eps_sorted = sorted(epsilons)
    if setup.batching is Batching.DETERMINISTIC:
        sigma_eff = setup.batch_size * nbr.value / math.sqrt(setup.iterations)
        points = [
            ProfilePoint(e, analytic_gaussian_delta(sigma_eff, e), "exact")
            for e in eps_sorted
        ]
    else:
        curve = compose(
            sampled_gaussian_curve(
                setup.batch_size * nbr.value, setup.sampling_probability
            ),
            setup.iterations,
        )
        points = [ProfilePoint(e, _rdp_to_delta(curve, e), "upper") for e in eps_sorted]
    # Guard against floating wobble breaking the monotone invariant.
    monotone: list[ProfilePoint] = []
    for p in points:
        if monotone and p.delta > monotone[-1].delta:
            p = ProfilePoint(p.epsilon, monotone[-1].delta, p.bound)
        monotone.append(p)
    return PrivacyProfile(tuple(monotone))


def mia_advantage(setup: AccountingSetup, nbr: NoiseBatchRatio) -> AdvantageResult:
    """Membership-inference advantage bound: the profile's delta at epsilon 0."""
    point = privacy_profile(setup, nbr, [0.0]).points[0]
    return AdvantageResult(point.delta, point.bound)


# ---------------------------------------------------------------------------
# Budget vector fields
# ---------------------------------------------------------------------------

BUDGET_AXES = ("privacy", "compute", "data")

# Default log2-spaced lattices mirroring the budget-sensitivity figures.
DEFAULT_LATTICES: Mapping[str, tuple[float, ...]] = {
    "privacy": tuple(2.0 ** np.arange(-2, 11)),
    "compute": tuple(2.0 ** np.arange(10, 23)),
    "data": tuple(2.0 ** np.arange(16, 31)),
}
DEFAULT_FIXED: Mapping[str, float] = {
    "privacy": 4.0,
    "compute": 65536.0,
    "data": float(2**24),
}


def _budgets_to_setup(
    point: Mapping[str, float], iterations: int, batching: Batching
) -> tuple[PrivacySpec, AccountingSetup]:
    spec = PrivacySpec(point["privacy"], point["delta"])
    setup = AccountingSetup(
        data_budget=int(round(point["data"])),
        batch_size=point["compute"],
        iterations=iterations,
        batching=batching,
    )
    return spec, setup


def vector_field(
    axis_x: str,
    axis_y: str,
    fixed: Mapping[str, float] | None = None,
    x_values: Sequence[float] | None = None,
    y_values: Sequence[float] | None = None,
    *,
    delta: float = DEFAULT_DELTA,
    iterations: int = 16000,
    batching: Batching = Batching.BOTH,
) -> VectorField:
    """Noise-batch-ratio doubling ratios over a lattice of two budgets.

    The component along each axis is nbr(point) / nbr(point with that
    budget doubled) - 1; a component of 1 means doubling the budget halves
    the noise. The third budget is taken from ``fixed``.
    """
    if axis_x not in BUDGET_AXES or axis_y not in BUDGET_AXES or axis_x == axis_y:
        raise ValueError(f"axes must be two distinct of {BUDGET_AXES}")
    remaining = next(a for a in BUDGET_AXES if a not in (axis_x, axis_y))
    fixed = dict(fixed or {})
    fixed.setdefault(remaining, DEFAULT_FIXED[remaining])
    xs = tuple(x_values if x_values is not None else DEFAULT_LATTICES[axis_x])
    ys = tuple(y_values if y_values is not None else DEFAULT_LATTICES[axis_y])

    cache: dict[tuple[float, float, float], float] = {}

    def nbr_at(point: dict[str, float]) -> float:
        key = (point["privacy"], point["compute"], point["data"])
        if key not in cache:
            spec, setup = _budgets_to_setup(
                {**point, "delta": delta}, iterations, batching
            )
            cache[key] = calibrate_detail(spec, setup).nbr.value
        return cache[key]

    u = np.empty((len(xs), len(ys)))
    v = np.empty((len(xs), len(ys)))
    for i, xv in enumerate(xs):
        for j, yv in enumerate(ys):
            point = {axis_x: xv, axis_y: yv, remaining: fixed[remaining]}
            base = nbr_at(point)
            u[i, j] = base / nbr_at({**point, axis_x: 2 * xv}) - 1.0
            v[i, j] = base / nbr_at({**point, axis_y: 2 * yv}) - 1.0
    return VectorField(
        axis_x, axis_y, xs, ys, u, v, {remaining: fixed[remaining], "delta": delta}, iterations
    )
