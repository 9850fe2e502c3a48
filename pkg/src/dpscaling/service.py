"""HTTP JSON API over an immutable loaded law.

All endpoints are GET, stateless, and deterministic: identical requests
produce byte-identical bodies. Invalid parameters return 400 with
``{code, message, field}``; requests that fall outside the law's domain
or an unattainable budget return 422.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from .accounting import Batching, CalibrationError, DEFAULT_DELTA
from .lawfit import DomainError, law_from_json_obj
from .planner import Budgets, PlanError
from .accounting import PrivacySpec
from .reports import (
    calibrate_report,
    law_metadata,
    plan_report,
    sweep_report,
    vector_field_report,
)
from .serialize import dumps_json, read_json

API_PREFIX = "/api/v1"
MAX_LATTICE_CONFIGS = 10**6
BUDGET_AXES = ("compute", "privacy", "data")


class ParamError(Exception):
    def __init__(self, message: str, field: str, code: str = "invalid_param"):
        super().__init__(message)
        self.field = field
        self.code = code


def _json_response(obj, status_code: int = 200) -> Response:
    return Response(
        content=dumps_json(obj), status_code=status_code,
        media_type="application/json",
    )


def _error(status: int, code: str, message: str, field: str | None = None) -> Response:
    body = {"code": code, "message": message}
    if field is not None:
        body["field"] = field
    return _json_response(body, status_code=status)


def _get_float(params, name: str, default: float | None = None, *, positive=True):
    raw = params.get(name)
    if raw is None:
        if default is not None:
            return default
        raise ParamError(f"missing required parameter {name!r}", name, "missing_param")
    try:
        value = float(raw)
    except ValueError:
        raise ParamError(f"{name} must be a number, got {raw!r}", name)
    if math.isnan(value) or math.isinf(value):
        raise ParamError(f"{name} must be finite", name)
    if positive and value <= 0:
        raise ParamError(f"{name} must be positive", name)
    return value


def _get_int(params, name: str, default: int | None = None):
    value = _get_float(params, name, None if default is None else float(default))
    if value != int(value):
        raise ParamError(f"{name} must be an integer", name)
    return int(value)


def create_app(law=None, law_path=None, cors: bool = False) -> FastAPI:
    """Build the service around one immutable law snapshot."""
    if law is None and law_path is not None:
        law = law_from_json_obj(read_json(Path(law_path)))
    app = FastAPI(title="dpscaling", docs_url=None, redoc_url=None, openapi_url=None)
    if cors:
        app.add_middleware(
            CORSMiddleware, allow_origins=["*"], allow_methods=["GET"],
            allow_headers=["*"],
        )
    app.state.law = law

    def require_law():
        if app.state.law is None:
            raise ParamError("no law loaded", "law", "no_law")
        return app.state.law

    @app.exception_handler(ParamError)
    async def param_error_handler(request: Request, exc: ParamError):
        return _error(400, exc.code, str(exc), exc.field)

    @app.exception_handler(DomainError)
    async def domain_error_handler(request: Request, exc: DomainError):
        return _error(422, "out_of_domain", str(exc), exc.axis)

    @app.exception_handler(PlanError)
    async def plan_error_handler(request: Request, exc: PlanError):
        return _error(422, "no_feasible_config", str(exc))

    @app.exception_handler(CalibrationError)
    async def calibration_error_handler(request: Request, exc: CalibrationError):
        return _error(422, "unattainable_budget", str(exc))

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError):
        return _error(400, "invalid_param", str(exc))

    @app.get(f"{API_PREFIX}/health")
    async def health():
        return _json_response(
            {"status": "ok", "law_loaded": app.state.law is not None}
        )

    @app.get(f"{API_PREFIX}/law")
    async def law_info():
        return _json_response(law_metadata(require_law()))

    @app.get(f"{API_PREFIX}/calibrate")
    async def calibrate(request: Request):
        p = request.query_params
        raw_batching = p.get("batching", "both")
        try:
            batching = Batching(raw_batching)
        except ValueError:
            raise ParamError(
                f"batching must be one of {[b.value for b in Batching]}", "batching"
            )
        report = calibrate_report(
            epsilon=_get_float(p, "epsilon"),
            delta=_get_float(p, "delta", DEFAULT_DELTA),
            data=_get_int(p, "data"),
            batch=_get_float(p, "batch"),
            steps=_get_int(p, "steps"),
            batching=batching,
        )
        return _json_response(report)

    def _budgets_from(p) -> Budgets:
        return Budgets(
            _get_float(p, "compute"),
            PrivacySpec(_get_float(p, "epsilon"), _get_float(p, "delta", DEFAULT_DELTA)),
            _get_int(p, "data"),
        )

    def _check_lattice(points_per_decade: int) -> int:
        if not 1 <= points_per_decade <= 128:
            raise ParamError(
                "points_per_decade must lie in [1, 128]", "points_per_decade"
            )
        return points_per_decade

    @app.get(f"{API_PREFIX}/plan")
    async def plan(request: Request):
        p = request.query_params
        report = plan_report(
            require_law(),
            _budgets_from(p),
            seq_len=_get_float(p, "seq_len", 512.0),
            points_per_decade=_check_lattice(_get_int(p, "points_per_decade", 16)),
        )
        return _json_response(report)

    @app.get(f"{API_PREFIX}/sweep")
    async def sweep_endpoint(request: Request):
        p = request.query_params
        axis = p.get("axis")
        if axis not in BUDGET_AXES:
            raise ParamError(f"axis must be one of {BUDGET_AXES}", "axis")
        lo = _get_float(p, "from")
        hi = _get_float(p, "to")
        points = _get_int(p, "points")
        if not 2 <= points <= 256:
            raise ParamError("points must lie in [2, 256]", "points")
        if hi < lo:
            raise ParamError("sweep range must have from <= to", "to")
        ppd = _check_lattice(_get_int(p, "points_per_decade", 16))
        # the swept axis takes a placeholder in the fixed budgets
        fixed = dict(p)
        fixed.setdefault(axis, str(lo))
        report = sweep_report(
            require_law(),
            _budgets_from(fixed),
            axis,
            np.geomspace(lo, hi, points),
            seq_len=_get_float(p, "seq_len", 512.0),
            points_per_decade=ppd,
        )
        return _json_response(report)

    @app.get(f"{API_PREFIX}/vector-field")
    async def vector_field_endpoint(request: Request):
        p = request.query_params
        axis_x = p.get("x")
        axis_y = p.get("y")
        if axis_x not in BUDGET_AXES:
            raise ParamError(f"x must be one of {BUDGET_AXES}", "x")
        if axis_y not in BUDGET_AXES or axis_y == axis_x:
            raise ParamError("y must be a distinct budget axis", "y")
        remaining = next(a for a in BUDGET_AXES if a not in (axis_x, axis_y))
        fixed = {remaining: _get_float(p, remaining)}

        def lattice(prefix: str, axis_name: str) -> np.ndarray:
            lo = _get_float(p, f"{prefix}_from")
            hi = _get_float(p, f"{prefix}_to")
            n = _get_int(p, f"{prefix}_points")
            if not 2 <= n <= 64:
                raise ParamError(f"{prefix}_points must lie in [2, 64]", f"{prefix}_points")
            if hi < lo:
                raise ParamError(f"{prefix} range must have from <= to", f"{prefix}_to")
            return np.geomspace(lo, hi, n)

        report = vector_field_report(
            axis_x=axis_x,
            axis_y=axis_y,
            x_values=lattice("x", axis_x),
            y_values=lattice("y", axis_y),
            fixed=fixed,
            delta=_get_float(p, "delta", DEFAULT_DELTA),
            iterations=_get_int(p, "steps", 16000),
        )
        return _json_response(report)

    return app
