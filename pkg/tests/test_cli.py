"""Command-line interface: workflow stages, reports, exit codes."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

import dpscaling as dp
from dpscaling import lawfit
from dpscaling.cli import main, parse_axis, load_manifest
from dpscaling.serialize import read_json, write_json

GOLDEN = Path(__file__).parent / "golden"

GENERATOR = dp.ParametricLaw(
    form="L2", E=1.3, A=120.0, alpha=0.47, B_coef=40.0, beta=0.12,
    C_coef=3.0, gamma=0.95, alpha2=-0.07,
)


@pytest.fixture()
def gen_law_path(tmp_path):
    path = tmp_path / "gen.json"
    write_json(path, lawfit.law_to_json_obj(GENERATOR))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestParseAxis:
    def test_comma_list(self):
        assert parse_axis("1,2,4").tolist() == [1.0, 2.0, 4.0]

    def test_geom(self):
        assert parse_axis("geom:1:100:3").tolist() == [1.0, 10.0, 100.0]

    def test_pow2(self):
        assert parse_axis("pow2:-2:2").tolist() == [0.25, 0.5, 1.0, 2.0, 4.0]


class TestCalibrate:
    def test_round_trips_with_library(self, capsys):
        code, out, _ = run(
            capsys, "calibrate", "--epsilon", "8", "--delta", "1e-8",
            "--data", "1e7", "--batch", "65536", "--steps", "16000",
        )
        assert code == 0
        doc = json.loads(out)
        cal = dp.calibrate_detail(
            dp.PrivacySpec(8.0, 1e-8), dp.AccountingSetup(10**7, 65536.0, 16000)
        )
        assert doc["noise_batch_ratio"] == cal.nbr.value
        assert doc["noise_multiplier"] == cal.noise_multiplier
        assert doc["epsilon_achieved"] == cal.epsilon_achieved

    def test_both_reports_winning_branch(self, capsys):
        code, out, _ = run(
            capsys, "calibrate", "--epsilon", "4", "--data", "1e6",
            "--batch", "1024", "--steps", "1000", "--batching", "both",
        )
        doc = json.loads(out)
        assert doc["batching_branch"] in ("poisson", "deterministic")
        for mode in ("poisson", "deterministic"):
            code, out, _ = run(
                capsys, "calibrate", "--epsilon", "4", "--data", "1e6",
                "--batch", "1024", "--steps", "1000", "--batching", mode,
            )
            branch_doc = json.loads(out)
            assert branch_doc["noise_batch_ratio"] >= doc["noise_batch_ratio"]

    def test_invalid_flags_exit_2(self, capsys):
        code, out, err = run(capsys, "calibrate", "--epsilon", "8")
        assert code == 2

    def test_bad_value_reports_error_json(self, capsys):
        code, out, err = run(
            capsys, "calibrate", "--epsilon", "-4", "--data", "1e6",
            "--batch", "128", "--steps", "100",
        )
        assert code == 2
        assert json.loads(err)["code"] == "validation"

    def test_unattainable_budget_exit_3(self, capsys):
        code, out, err = run(
            capsys, "calibrate", "--epsilon", "1e-13", "--data", "1e6",
            "--batch", "128", "--steps", "100",
        )
        assert code == 3
        assert json.loads(err)["code"] == "numeric"

    def test_env_default_delta(self, capsys, monkeypatch):
        monkeypatch.setenv("DPSCALING_DELTA", "1e-6")
        _, out, _ = run(
            capsys, "calibrate", "--epsilon", "4", "--data", "1e6",
            "--batch", "128", "--steps", "100",
        )
        assert json.loads(out)["delta"] == 1e-6


class TestPipeline:
    def stage_paths(self, tmp_path):
        return {
            "grid": str(tmp_path / "grid.csv"),
            "clean": str(tmp_path / "clean.json"),
            "extrap": str(tmp_path / "extrap.json"),
            "law": str(tmp_path / "law.json"),
        }

    def run_stages(self, capsys, gen_law_path, paths):
        cmds = [
            ["pipeline", "synth", "--law", gen_law_path,
             "--m-axis", "geom:4.5e6:7.84e8:4", "--t-axis", "geom:100:102400:11",
             "--nbr-axis", "0.0,9.5367431640625e-07,6.103515625e-05,0.00390625",
             "--out", paths["grid"]],
            ["pipeline", "clean", paths["grid"], "--window", "1",
             "--out", paths["clean"]],
            ["pipeline", "extrapolate", paths["clean"], "--target-t",
             "204800,409600", "--out", paths["extrap"]],
            ["pipeline", "fit-interp", paths["extrap"], "--out", paths["law"]],
        ]
        for cmd in cmds:
            code, *_ = run(capsys, *cmd)
            assert code == 0, cmd

    def test_end_to_end_reproduces_generator_at_nodes(
        self, capsys, gen_law_path, tmp_path
    ):
        paths = self.stage_paths(tmp_path)
        self.run_stages(capsys, gen_law_path, paths)
        law = lawfit.law_from_json_obj(read_json(paths["law"]))
        for m in law.axis_m:
            for t in law.axis_t[:11]:  # original, non-extrapolated nodes
                for s in law.axis_nbr:
                    got = dp.query(law, m, t, s)
                    want = dp.predict_parametric(GENERATOR, m, 1024.0 * t, s)
                    assert got == pytest.approx(want, rel=1e-12)

    def test_clean_is_idempotent(self, capsys, gen_law_path, tmp_path):
        paths = self.stage_paths(tmp_path)
        self.run_stages(capsys, gen_law_path, paths)
        again = tmp_path / "clean2.json"
        code, *_ = run(
            capsys, "pipeline", "clean", paths["clean"], "--out", str(again)
        )
        assert code == 0
        assert again.read_bytes() == Path(paths["clean"]).read_bytes()

    def test_fit_parametric_reports_objective(self, capsys, gen_law_path, tmp_path):
        grid_path = tmp_path / "grid.csv"
        clean_path = tmp_path / "clean.json"
        law_path = tmp_path / "plaw.json"
        run(capsys, "pipeline", "synth", "--law", gen_law_path,
            "--m-axis", "geom:1e6:1e9:5", "--t-axis", "geom:110000:1000000:6",
            "--nbr-axis", "pow2:-21:-6", "--out", str(grid_path))
        run(capsys, "pipeline", "clean", str(grid_path), "--window", "1",
            "--out", str(clean_path))
        code, out, _ = run(
            capsys, "pipeline", "fit-parametric", str(clean_path),
            "--form", "L2", "--max-loss", "100", "--out", str(law_path),
        )
        assert code == 0
        doc = json.loads(out)
        assert set(doc) == {"coefficients", "final_loss", "n_rows"}
        assert doc["final_loss"] < 1e-6
        fitted = lawfit.law_from_json_obj(read_json(law_path))
        assert fitted.coefficients["alpha"] == pytest.approx(0.47, rel=0.02)


class TestPlanSweepVector:
    @pytest.fixture()
    def law_path(self, tmp_path):
        grid = dp.synth_grid(
            GENERATOR, np.geomspace(4.5e6, 7.84e8, 4),
            np.geomspace(100, 102400, 11),
            [0.0, 2.0**-20, 2.0**-14, 2.0**-8],
        )
        law = dp.build_interpolator(dp.clean(grid, window=1))
        path = tmp_path / "law.json"
        write_json(path, lawfit.law_to_json_obj(law))
        return str(path)

    def test_plan_table_shape(self, capsys, law_path):
        code, out, _ = run(
            capsys, "plan", "--law", law_path, "--compute", "1e19",
            "--epsilon", "4", "--data", "1e7", "--points-per-decade", "4",
        )
        assert code == 0
        doc = json.loads(out)
        for column in (
            "data_budget", "privacy_budget", "compute_budget", "cross_entropy",
            "model_params", "iterations", "batch_size", "token_model_ratio",
        ):
            assert column in doc
        assert doc["band"]["model_params"][0] <= doc["model_params"]

    def test_sweep_loss_nonincreasing_and_csv(self, capsys, law_path, tmp_path):
        csv_dir = tmp_path / "csv"
        code, out, _ = run(
            capsys, "sweep", "--law", law_path, "--axis", "compute",
            "--from", "1e17", "--to", "1e19", "--points", "3",
            "--compute", "1e17", "--epsilon", "4", "--data", "1e7",
            "--points-per-decade", "3", "--csv-dir", str(csv_dir),
        )
        assert code == 0
        doc = json.loads(out)
        losses = [e["best"]["predicted_loss"] for e in doc["entries"]]
        assert losses == sorted(losses, reverse=True)
        loss_csv = (csv_dir / "loss.csv").read_text().splitlines()
        assert loss_csv[0] == "x,value"
        assert len(loss_csv) == 4
        band_csv = (csv_dir / "model_params.csv").read_text().splitlines()
        assert band_csv[0] == "x,value,band_min,band_max"

    def test_vector_field_definitional_component(self, capsys, tmp_path):
        csv_path = tmp_path / "vf.csv"
        code, out, _ = run(
            capsys, "vector-field", "--x", "privacy", "--y", "compute",
            "--x-values", "pow2:0:2", "--y-values", "pow2:10:12",
            "--fixed", "data=16777216", "--steps", "1000",
            "--csv", str(csv_path),
        )
        assert code == 0
        doc = json.loads(out)
        setup = lambda b: dp.AccountingSetup(2**24, float(b), 1000)
        direct = (
            dp.calibrate_nbr(dp.PrivacySpec(1.0, 1e-8), setup(1024)).value
            / dp.calibrate_nbr(dp.PrivacySpec(2.0, 1e-8), setup(1024)).value
            - 1.0
        )
        assert doc["u"][0][0] == direct
        rows = csv_path.read_text().splitlines()
        assert rows[0] == "x,y,u,v"
        assert len(rows) == 1 + 3 * 3


class TestManifest:
    def test_resolves_law_names(self, capsys, tmp_path):
        law_file = tmp_path / "laws" / "main.json"
        law_file.parent.mkdir()
        write_json(law_file, lawfit.law_to_json_obj(GENERATOR))
        manifest = tmp_path / "manifest.json"
        write_json(manifest, {
            "schema_version": 1,
            "laws": {"main": "laws/main.json"},
            "grids": {},
            "default_budgets": {"epsilon": 4.0, "delta": 1e-8, "data": 10**7},
        })
        doc = load_manifest(manifest)
        assert doc["laws"]["main"] == "laws/main.json"
        code, out, _ = run(
            capsys, "plan", "--law", "main", "--manifest", str(manifest),
            "--compute", "1e18", "--epsilon", "4", "--data", "1e7",
            "--points-per-decade", "2",
        )
        assert code == 0

    def test_missing_artifact_rejected(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        write_json(manifest, {
            "schema_version": 1, "laws": {"gone": "nope.json"}, "grids": {},
        })
        with pytest.raises(Exception, match="missing"):
            load_manifest(manifest)


class TestGolden:
    def test_calibrate_report_bytes(self, capsys, tmp_path):
        out_path = tmp_path / "cal.json"
        code, *_ = run(
            capsys, "calibrate", "--epsilon", "4", "--delta", "1e-8",
            "--data", "1e7", "--batch", "65536", "--steps", "16000",
            "--out", str(out_path),
        )
        assert code == 0
        assert out_path.read_text() == (GOLDEN / "report_calibrate.json").read_text()

    def test_grid_csv_and_law_bytes(self, capsys, tmp_path):
        from make_golden import GENERATOR as G, M_AXIS, T_AXIS, NBR_AXIS
        gen_path = tmp_path / "gen.json"
        write_json(gen_path, lawfit.law_to_json_obj(G))
        grid_path = tmp_path / "grid.csv"
        clean_path = tmp_path / "clean.json"
        law_path = tmp_path / "law.json"
        run(capsys, "pipeline", "synth", "--law", str(gen_path),
            "--m-axis", ",".join(map(str, M_AXIS)),
            "--t-axis", ",".join(map(str, T_AXIS)),
            "--nbr-axis", ",".join(map(str, NBR_AXIS)),
            "--out", str(grid_path))
        assert grid_path.read_text() == (GOLDEN / "grid.csv").read_text()
        run(capsys, "pipeline", "clean", str(grid_path), "--window", "1",
            "--out", str(clean_path))
        assert clean_path.read_text() == (GOLDEN / "grid_clean.json").read_text()
        run(capsys, "pipeline", "fit-interp", str(clean_path), "--out", str(law_path))
        assert law_path.read_text() == (GOLDEN / "law_interp.json").read_text()

    def test_plan_report_bytes(self, capsys, tmp_path):
        law_path = tmp_path / "law.json"
        from make_golden import interp_law
        write_json(law_path, lawfit.law_to_json_obj(interp_law()))
        out_path = tmp_path / "plan.json"
        code, *_ = run(
            capsys, "plan", "--law", str(law_path), "--compute", "1e18",
            "--epsilon", "4", "--delta", "1e-8", "--data", "1e7",
            "--points-per-decade", "4", "--out", str(out_path),
        )
        assert code == 0
        assert out_path.read_text() == (GOLDEN / "report_plan.json").read_text()
