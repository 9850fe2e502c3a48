"""HTTP API: endpoints, error schema, determinism, golden bodies."""

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest

pytest.importorskip("fastapi")
from fastapi.testclient import TestClient

import dpscaling as dp
from dpscaling import lawfit
from dpscaling.reports import plan_report
from dpscaling.service import create_app
from make_golden import GENERATOR, budgets, interp_law

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(law=interp_law()))


class TestHealthAndLaw:
    def test_health(self, client):
        r = client.get("/api/v1/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "law_loaded": True}

    def test_health_without_law(self):
        bare = TestClient(create_app(law=None))
        assert bare.get("/api/v1/health").json()["law_loaded"] is False
        assert bare.get("/api/v1/law").status_code == 400

    def test_law_metadata(self, client):
        doc = client.get("/api/v1/law").json()
        assert doc["kind"] == "interp"
        assert doc["domain"]["m"] == [1e7, 1e8]

    def test_parametric_law_metadata(self):
        c = TestClient(create_app(law=GENERATOR))
        doc = c.get("/api/v1/law").json()
        assert doc["kind"] == "parametric"
        assert doc["form"] == "L2"
        assert doc["coefficients"]["alpha"] == 0.47


class TestCalibrateEndpoint:
    def test_matches_library(self, client):
        r = client.get(
            "/api/v1/calibrate?epsilon=4&data=10000000&batch=65536&steps=16000"
        )
        assert r.status_code == 200
        doc = r.json()
        cal = dp.calibrate_detail(
            dp.PrivacySpec(4.0, 1e-8), dp.AccountingSetup(10**7, 65536.0, 16000)
        )
        assert doc["noise_batch_ratio"] == cal.nbr.value
        assert doc["batching_branch"] == cal.branch.value

    def test_malformed_epsilon_400_with_field(self, client):
        r = client.get(
            "/api/v1/calibrate?epsilon=spam&data=10000000&batch=65536&steps=16000"
        )
        assert r.status_code == 400
        doc = r.json()
        assert doc["field"] == "epsilon"
        assert set(doc) == {"code", "message", "field"}

    def test_missing_param_400(self, client):
        r = client.get("/api/v1/calibrate?epsilon=4")
        assert r.status_code == 400
        assert r.json()["code"] == "missing_param"

    def test_unattainable_budget_422(self, client):
        r = client.get(
            "/api/v1/calibrate?epsilon=1e-13&data=1000000&batch=128&steps=100"
        )
        assert r.status_code == 422
        assert r.json()["code"] == "unattainable_budget"

    def test_bad_batching_400(self, client):
        r = client.get(
            "/api/v1/calibrate?epsilon=4&data=1e6&batch=128&steps=100&batching=magic"
        )
        assert r.status_code == 400
        assert r.json()["field"] == "batching"


class TestPlanEndpoint:
    def test_equals_report_builder(self, client):
        r = client.get(
            "/api/v1/plan?compute=1e18&epsilon=4&data=10000000&points_per_decade=4"
        )
        assert r.status_code == 200
        want = plan_report(interp_law(), budgets(), points_per_decade=4)
        assert r.json() == json.loads(json.dumps(want, default=float))

    def test_no_feasible_config_422(self, client):
        r = client.get(
            "/api/v1/plan?compute=1e28&epsilon=4&data=100&points_per_decade=2"
        )
        assert r.status_code == 422
        assert r.json()["code"] == "no_feasible_config"

    def test_lattice_cap_400(self, client):
        r = client.get(
            "/api/v1/plan?compute=1e18&epsilon=4&data=1e7&points_per_decade=500"
        )
        assert r.status_code == 400
        assert r.json()["field"] == "points_per_decade"

    def test_concurrent_identical_requests_identical_bytes(self, client):
        url = "/api/v1/plan?compute=1e18&epsilon=4&data=10000000&points_per_decade=3"
        with ThreadPoolExecutor(8) as pool:
            bodies = list(pool.map(lambda _: client.get(url).content, range(16)))
        assert len(set(bodies)) == 1


class TestSweepEndpoint:
    def test_compute_sweep_nonincreasing(self, client):
        r = client.get(
            "/api/v1/sweep?axis=compute&from=1e17&to=1e18&points=3"
            "&epsilon=4&data=10000000&points_per_decade=3"
        )
        assert r.status_code == 200
        doc = r.json()
        losses = [e["best"]["predicted_loss"] for e in doc["entries"]]
        assert losses == sorted(losses, reverse=True)
        assert doc["axis"] == "compute"
        assert "compute" not in doc["fixed"]

    def test_privacy_sweep_needs_compute(self, client):
        r = client.get(
            "/api/v1/sweep?axis=privacy&from=1&to=8&points=3&data=10000000"
        )
        assert r.status_code == 400
        assert r.json()["field"] == "compute"

    def test_bad_axis_400(self, client):
        r = client.get("/api/v1/sweep?axis=flops&from=1&to=2&points=2")
        assert r.status_code == 400
        assert r.json()["field"] == "axis"

    def test_points_cap(self, client):
        r = client.get(
            "/api/v1/sweep?axis=compute&from=1e17&to=1e18&points=9999"
            "&epsilon=4&data=1e7"
        )
        assert r.status_code == 400


class TestVectorFieldEndpoint:
    def test_small_field(self, client):
        r = client.get(
            "/api/v1/vector-field?x=privacy&y=compute&x_from=1&x_to=4&x_points=3"
            "&y_from=1024&y_to=4096&y_points=3&data=16777216&steps=1000"
        )
        assert r.status_code == 200
        doc = r.json()
        assert len(doc["u"]) == 3 and len(doc["u"][0]) == 3
        assert all(c >= -1e-12 for row in doc["u"] for c in row)
        assert all(c >= -1e-12 for row in doc["v"] for c in row)

    def test_same_axis_rejected(self, client):
        r = client.get(
            "/api/v1/vector-field?x=privacy&y=privacy&x_from=1&x_to=2&x_points=2"
            "&y_from=1&y_to=2&y_points=2&data=1e6"
        )
        assert r.status_code == 400
        assert r.json()["field"] == "y"

    def test_requires_remaining_budget(self, client):
        r = client.get(
            "/api/v1/vector-field?x=privacy&y=compute&x_from=1&x_to=2&x_points=2"
            "&y_from=1024&y_to=2048&y_points=2"
        )
        assert r.status_code == 400
        assert r.json()["field"] == "data"


class TestGoldenBodies:
    CASES = {
        "api_health.json": "/api/v1/health",
        "api_calibrate.json": (
            "/api/v1/calibrate?epsilon=4&delta=1e-8&data=10000000"
            "&batch=65536&steps=16000"
        ),
        "api_plan.json": (
            "/api/v1/plan?compute=1e18&epsilon=4&delta=1e-8&data=10000000"
            "&points_per_decade=4"
        ),
        "api_sweep.json": (
            "/api/v1/sweep?axis=compute&from=1e17&to=1e18&points=3"
            "&epsilon=4&delta=1e-8&data=10000000&points_per_decade=3"
        ),
        "api_vector_field.json": (
            "/api/v1/vector-field?x=privacy&y=compute&x_from=1&x_to=4&x_points=3"
            "&y_from=1024&y_to=4096&y_points=3&data=16777216&delta=1e-8&steps=1000"
        ),
        "api_law.json": "/api/v1/law",
    }

    @pytest.mark.parametrize("golden_name", sorted(CASES))
    def test_bodies_match_golden(self, client, golden_name):
        r = client.get(self.CASES[golden_name])
        assert r.status_code == 200
        want = (GOLDEN / golden_name).read_bytes()
        assert r.content == want

    def test_reparse_round_trips_exactly(self, client):
        r = client.get(self.CASES["api_plan.json"])
        doc = json.loads(r.content)
        from dpscaling.serialize import dumps_json
        assert dumps_json(doc).encode() == r.content
