"""Report builders shared by the command line and the HTTP service.

Each builder returns a plain JSON-ready dict with a stable field order, so
both front ends emit identical documents for identical inputs.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

from .accounting import (
    AccountingSetup,
    Batching,
    PrivacySpec,
    calibrate_detail,
    vector_field,
)
from .lawfit import InterpolatedLaw, ParametricLaw
from .planner import Budgets, SweepSeries, optimal_allocation, sweep

REPORT_SCHEMA_VERSION = 1


def calibrate_report(
    epsilon: float,
    delta: float,
    data: int,
    batch: float,
    steps: int,
    batching: Batching = Batching.BOTH,
) -> dict:
    spec = PrivacySpec(epsilon, delta)
    setup = AccountingSetup(data, batch, steps, batching)
    cal = calibrate_detail(spec, setup)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "noise_batch_ratio": cal.nbr.value,
        "noise_multiplier": cal.noise_multiplier,
        "epsilon_achieved": cal.epsilon_achieved,
        "epsilon_target": epsilon,
        "delta": delta,
        "batching_branch": cal.branch.value,
        "data_budget": data,
        "batch_size": batch,
        "iterations": steps,
    }


def plan_report(
    law,
    budgets: Budgets,
    seq_len: float = 512.0,
    points_per_decade: int = 16,
) -> dict:
    report = optimal_allocation(
        budgets, law, seq_len=seq_len, points_per_decade=points_per_decade
    )
    best = report.best
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "data_budget": budgets.data,
        "privacy_budget": budgets.privacy.epsilon,
        "delta": budgets.privacy.delta,
        "compute_budget": budgets.compute,
        "cross_entropy": best.predicted_loss,
        "model_params": best.config.model_params,
        "iterations": best.config.iterations,
        "batch_size": best.config.batch_size,
        "token_model_ratio": best.token_model_ratio,
        "seq_len": seq_len,
        "noise_batch_ratio": None if best.nbr is None else best.nbr.value,
        "epsilon_achieved": best.epsilon_achieved,
        "batching_branch": None if best.branch is None else best.branch.value,
        "band": report.band.to_json_obj(),
        "counts": {
            "configs": report.n_configs,
            "infeasible": report.n_infeasible,
            "out_of_domain": report.n_out_of_domain,
        },
    }


def sweep_report(
    law,
    budgets: Budgets,
    axis: str,
    values: Sequence[float],
    seq_len: float = 512.0,
    points_per_decade: int = 16,
) -> dict:
    series = sweep(
        budgets, law, axis, values,
        seq_len=seq_len, points_per_decade=points_per_decade,
    )
    obj = series.to_json_obj()
    obj = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "axis": obj["axis"],
        "fixed": _fixed_budgets(budgets, axis),
        "x": obj["x"],
        "entries": obj["entries"],
    }
    return obj


def _fixed_budgets(budgets: Budgets, swept_axis: str) -> dict:
    fixed = {
        "compute": budgets.compute,
        "privacy": budgets.privacy.epsilon,
        "data": budgets.data,
        "delta": budgets.privacy.delta,
    }
    fixed.pop(swept_axis, None)
    return fixed


def vector_field_report(
    axis_x: str,
    axis_y: str,
    x_values: Sequence[float],
    y_values: Sequence[float],
    fixed: Mapping[str, float],
    delta: float,
    iterations: int,
) -> dict:
    field = vector_field(
        axis_x, axis_y, fixed=dict(fixed), x_values=x_values, y_values=y_values,
        delta=delta, iterations=iterations,
    )
    return {"schema_version": REPORT_SCHEMA_VERSION, **field.to_json_obj()}


def law_metadata(law) -> dict:
    if isinstance(law, InterpolatedLaw):
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "interp",
            "domain": law.domain,
            "axes_sizes": {
                "m": len(law.axis_m),
                "t": len(law.axis_t),
                "nbr": len(law.axis_nbr),
            },
            "provenance": dict(law.provenance),
        }
    if isinstance(law, ParametricLaw):
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": "parametric",
            "form": law.form,
            "coefficients": law.coefficients,
            "domain": dict(law.domain),
            "provenance": dict(law.fit_metadata),
        }
    raise TypeError(f"unknown law type {type(law).__name__}")


SWEEP_CSV_FIELDS = (
    "loss", "model_params", "batch_size", "iterations", "token_model_ratio"
)


def sweep_csv_files(series: SweepSeries) -> dict[str, tuple[list[str], list[tuple]]]:
    """Per-field plot-ready CSV payloads: name -> (header, rows)."""
    out = {}
    for field in SWEEP_CSV_FIELDS:
        rows = series.csv_rows(field)
        if rows and len(rows[0]) == 4:
            header = ["x", "value", "band_min", "band_max"]
        else:
            header = ["x", "value"]
        out[field] = (header, rows)
    return out
