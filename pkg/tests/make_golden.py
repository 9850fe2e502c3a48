"""Regenerate the golden interface files from fixed inputs.

Run from the repo root after an intentional schema change, then review the
diff:

    python3 tests/make_golden.py
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np

import dpscaling as dp
from dpscaling import lawfit
from dpscaling.reports import (
    calibrate_report,
    law_metadata,
    plan_report,
    sweep_report,
    vector_field_report,
)
from dpscaling.serialize import csv_text, dumps_json

GOLDEN = Path(__file__).parent / "golden"

GENERATOR = dp.ParametricLaw(
    form="L2", E=1.3, A=120.0, alpha=0.47, B_coef=40.0, beta=0.12,
    C_coef=3.0, gamma=0.95, alpha2=-0.07,
)
M_AXIS = (1e7, 3.2e7, 1e8)
T_AXIS = (1000.0, 3162.0, 10000.0, 31623.0, 100000.0)
NBR_AXIS = (0.0, 2.0**-18, 2.0**-12, 2.0**-8)


def synth_raw_grid() -> dp.MeasurementGrid:
    return dp.synth_grid(GENERATOR, M_AXIS, T_AXIS, NBR_AXIS, noise_sd=0.0, seed=0)


def grid_csv_text(grid: dp.MeasurementGrid) -> str:
    rows = []
    for l, lr in enumerate(grid.learning_rates):
        for i, m in enumerate(grid.axis_m):
            for j, t in enumerate(grid.axis_t):
                for k, s in enumerate(grid.axis_nbr):
                    rows.append(
                        (int(m), int(t), float(s), float(lr), grid.loss[l, i, j, k])
                    )
    return csv_text(dp.grid.CSV_HEADER, rows)


def cleaned_grid() -> dp.MeasurementGrid:
    """Cleaned grid via the CSV round trip, matching the CLI pipeline."""
    import io

    reloaded = dp.load_grid_csv(io.StringIO(grid_csv_text(synth_raw_grid())))
    return dp.clean(reloaded, window=1)


def interp_law() -> lawfit.InterpolatedLaw:
    return dp.build_interpolator(cleaned_grid())


def budgets() -> dp.Budgets:
    return dp.Budgets(1e18, dp.PrivacySpec(4.0, 1e-8), 10**7)


def artifacts() -> dict[str, str]:
    grid = synth_raw_grid()
    cleaned = cleaned_grid()
    law = interp_law()
    out = {
        "grid.csv": grid_csv_text(grid),
        "grid_clean.json": dumps_json(cleaned.to_json_obj(), indent=2) + "\n",
        "law_interp.json": dumps_json(lawfit.law_to_json_obj(law), indent=2) + "\n",
        "law_parametric.json": dumps_json(lawfit.law_to_json_obj(GENERATOR), indent=2) + "\n",
        "report_calibrate.json": dumps_json(
            calibrate_report(4.0, 1e-8, 10**7, 65536.0, 16000), indent=2
        ) + "\n",
        "report_plan.json": dumps_json(
            plan_report(law, budgets(), points_per_decade=4), indent=2
        ) + "\n",
        "api_health.json": dumps_json({"status": "ok", "law_loaded": True}),
        "api_calibrate.json": dumps_json(
            calibrate_report(4.0, 1e-8, 10**7, 65536.0, 16000)
        ),
        "api_plan.json": dumps_json(plan_report(law, budgets(), points_per_decade=4)),
        "api_sweep.json": dumps_json(
            sweep_report(
                law, budgets(), "compute", list(np.geomspace(1e17, 1e18, 3)),
                points_per_decade=3,
            )
        ),
        "api_vector_field.json": dumps_json(
            vector_field_report(
                "privacy", "compute",
                x_values=np.geomspace(1.0, 4.0, 3),
                y_values=np.geomspace(1024.0, 4096.0, 3),
                fixed={"data": float(2**24)},
                delta=1e-8,
                iterations=1000,
            )
        ),
        "api_law.json": dumps_json(law_metadata(law)),
    }
    return out


def main() -> None:
    GOLDEN.mkdir(exist_ok=True)
    for name, text in artifacts().items():
        (GOLDEN / name).write_text(text, encoding="utf-8")
        print(f"wrote {GOLDEN / name}")


if __name__ == "__main__":
    main()
