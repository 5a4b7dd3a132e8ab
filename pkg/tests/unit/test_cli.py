"""Tests for the CLI interface."""

import json
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from regretfolio.config import settings
from regretfolio.interfaces.cli import app, load_run_config
from regretfolio.models.schemas import Mode, VariantKind

runner = CliRunner()

MU = [0.08, 0.12, 0.10]
SIGMA = [[0.04, 0.006, 0.004], [0.006, 0.09, 0.01], [0.004, 0.01, 0.0625]]


def _write(path: Path, data: object) -> Path:
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def params_file(tmp_path: Path) -> Path:
    return _write(tmp_path / "params.json", {"mu": MU, "sigma": SIGMA})


@pytest.fixture
def finite_file(tmp_path: Path) -> Path:
    scenarios = [
        {"mu": MU, "sigma": SIGMA},
        {"mu": [0.11, 0.07, 0.09], "sigma": SIGMA},
        {"mu": [0.06, 0.14, 0.08], "sigma": SIGMA},
    ]
    return _write(tmp_path / "finite.json", {"finite": scenarios})


@pytest.fixture
def ellipsoid_file(tmp_path: Path) -> Path:
    body = {"mu_bar": MU, "M": [[0.02, 0.0], [0.0, 0.02], [0.0, 0.0]], "sigma": SIGMA}
    return _write(tmp_path / "ellipsoid.json", {"ellipsoidal": body})


@pytest.fixture(autouse=True)
def _restore_workers(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(settings, "max_workers", settings.max_workers)


class TestEstimateCommand:
    def test_writes_params(self, tmp_path: Path) -> None:
        rng = np.random.default_rng(0)
        rows = np.round(rng.normal(0.01, 0.05, size=(12, 3)), 6)
        csv = tmp_path / "returns.csv"
        csv.write_text("A,B,C\n" + "\n".join(",".join(f"{v:.6f}" for v in row) for row in rows) + "\n")
        out = tmp_path / "params.json"

        result = runner.invoke(app, ["estimate", str(csv), "--out", str(out)])

        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert np.array(data["mu"]) == pytest.approx(rows.mean(axis=0), abs=1e-10)
        assert np.array(data["sigma"]).shape == (3, 3)

    def test_missing_file(self) -> None:
        result = runner.invoke(app, ["estimate", "/nonexistent/returns.csv"])
        assert result.exit_code == 5
        assert "does not exist" in result.output

    def test_malformed_csv(self, tmp_path: Path) -> None:
        csv = tmp_path / "returns.csv"
        csv.write_text("A,B\n0.1,abc\n0.2,0.3\n")
        result = runner.invoke(app, ["estimate", str(csv)])
        assert result.exit_code == 5


class TestSolveCommand:
    def test_classical(self, tmp_path: Path, params_file: Path) -> None:
        out = tmp_path / "solution.json"
        result = runner.invoke(app, ["solve", "-p", str(params_file), "--lambda", "2", "-o", str(out)])
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert data["status"] == "optimal"
        assert sum(data["x"]) == pytest.approx(1.0, abs=1e-6)
        assert "Written to" in result.output

    def test_classical_to_stdout(self, params_file: Path) -> None:
        result = runner.invoke(app, ["solve", "-p", str(params_file)])
        assert result.exit_code == 0
        assert '"status": "optimal"' in result.output

    def test_infeasible_target(self, params_file: Path) -> None:
        result = runner.invoke(app, ["solve", "-p", str(params_file), "--variant", "min_variance", "--rho", "1.0"])
        assert result.exit_code == 2
        assert "infeasible" in result.output

    def test_max_return_needs_cap(self, params_file: Path) -> None:
        result = runner.invoke(app, ["solve", "-p", str(params_file), "--variant", "max_return"])
        assert result.exit_code == 5
        assert "sigma2" in result.output

    def test_not_rational_to_invest(self, params_file: Path) -> None:
        result = runner.invoke(app, ["solve", "-p", str(params_file), "--variant", "max_sharpe", "--rf", "0.5"])
        assert result.exit_code == 4

    def test_absolute(self, tmp_path: Path, finite_file: Path) -> None:
        out = tmp_path / "absolute.json"
        result = runner.invoke(app, ["solve", "--mode", "absolute", "-u", str(finite_file), "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text())["status"] == "optimal"

    def test_absolute_needs_uncertainty(self, params_file: Path) -> None:
        result = runner.invoke(app, ["solve", "--mode", "absolute", "-p", str(params_file)])
        assert result.exit_code == 5
        assert "uncertainty" in result.output

    def test_relative_finite(self, tmp_path: Path, finite_file: Path) -> None:
        out = tmp_path / "relative.json"
        args = ["solve", "--mode", "relative", "-u", str(finite_file), "--threads", "2", "-o", str(out)]
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert data["gamma"] >= 0.0
        assert len(data["regrets"]) == 3
        assert settings.max_workers == 2

    def test_relative_ellipsoidal(self, tmp_path: Path, ellipsoid_file: Path) -> None:
        out = tmp_path / "ellipsoidal.json"
        args = ["solve", "--mode", "relative", "-u", str(ellipsoid_file), "--samples", "20", "--seed", "1"]
        result = runner.invoke(app, [*args, "-o", str(out)])
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert data["bracket"]["lower"] <= data["bracket"]["upper"]
        assert data["certificate"]["gamma"] == data["bracket"]["upper"]
        assert "Regret Bracket" in result.output

    def test_relative_ellipsoidal_min_variance_unsupported(self, ellipsoid_file: Path) -> None:
        args = ["solve", "--mode", "relative", "-u", str(ellipsoid_file), "--variant", "min_variance"]
        result = runner.invoke(app, args)
        assert result.exit_code == 5
        assert "risk-adjusted" in result.output

    def test_relative_scaled(self, tmp_path: Path, finite_file: Path) -> None:
        out = tmp_path / "scaled.json"
        result = runner.invoke(app, ["solve", "--mode", "relative", "-u", str(finite_file), "--scaled", "-o", str(out)])
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert 0.0 <= data["gamma"] <= 1.0

    def test_scaled_needs_discrete_relative(self, finite_file: Path, ellipsoid_file: Path) -> None:
        absolute = runner.invoke(app, ["solve", "--mode", "absolute", "-u", str(finite_file), "--scaled"])
        assert absolute.exit_code == 5
        ellipsoidal = runner.invoke(app, ["solve", "--mode", "relative", "-u", str(ellipsoid_file), "--scaled"])
        assert ellipsoidal.exit_code == 5
        assert "finite or polytopic" in ellipsoidal.output

    def test_refine_reports_last_bracket(self, tmp_path: Path, ellipsoid_file: Path) -> None:
        out = tmp_path / "refined.json"
        args = ["solve", "--mode", "relative", "-u", str(ellipsoid_file), "--samples", "10", "--refine", "3"]
        result = runner.invoke(app, [*args, "--seed", "2", "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text())["bracket"]["sample_count"] == 40

    def test_dump_cbf(self, tmp_path: Path, ellipsoid_file: Path) -> None:
        cbf = tmp_path / "arrp.cbf"
        args = ["solve", "--mode", "relative", "-u", str(ellipsoid_file), "--samples", "10", "--dump-cbf", str(cbf)]
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
        text = cbf.read_text()
        assert text.startswith("VER\n3\n")
        assert "PSDCON" in text

    def test_dump_cbf_needs_ellipsoid(self, tmp_path: Path, finite_file: Path) -> None:
        args = ["solve", "--mode", "relative", "-u", str(finite_file), "--dump-cbf", str(tmp_path / "x.cbf")]
        result = runner.invoke(app, args)
        assert result.exit_code == 5
        assert "ellipsoidal" in result.output

    def test_config_file_paths_are_relative_to_it(self, tmp_path: Path, params_file: Path) -> None:
        config = _write(tmp_path / "run.json", {"params": "params.json", "variant": "min_variance"})
        out = tmp_path / "from_config.json"
        result = runner.invoke(app, ["solve", "-c", str(config), "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text())["variant"]["kind"] == "min_variance"


class TestLoadRunConfig:
    def test_flags_override_file(self, tmp_path: Path, params_file: Path) -> None:
        config = _write(tmp_path / "run.json", {"params": "params.json", "lambda": 3.0, "variant": "risk_adjusted"})
        run = load_run_config(config, lam=5.0, variant=None)
        assert run.lam == 5.0
        assert run.variant == VariantKind.RISK_ADJUSTED
        assert run.params == tmp_path / "params.json"
        assert run.mode == Mode.CLASSICAL

    def test_no_inputs(self) -> None:
        with pytest.raises(ValueError, match="required"):
            load_run_config(None)


class TestFrontierCommand:
    def test_csv_output(self, tmp_path: Path, params_file: Path) -> None:
        out = tmp_path / "frontier.csv"
        result = runner.invoke(app, ["frontier", "--grid", "0.09,0.1,0.5", "-p", str(params_file), "-o", str(out)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0] == "rho,risk,return,status"
        assert len(lines) == 4
        assert lines[3].endswith(",,infeasible")

    def test_malformed_grid(self, params_file: Path) -> None:
        result = runner.invoke(app, ["frontier", "--grid", "0.1,abc", "-p", str(params_file)])
        assert result.exit_code == 5
        assert "malformed grid" in result.output

    def test_descending_grid(self, params_file: Path) -> None:
        result = runner.invoke(app, ["frontier", "--grid", "0.1,0.09", "-p", str(params_file)])
        assert result.exit_code == 5


class TestRegretEvalCommand:
    def test_finite(self, tmp_path: Path, finite_file: Path) -> None:
        out = tmp_path / "regret.json"
        args = ["regret-eval", "--weights", "1,0,0", "-u", str(finite_file), "-o", str(out)]
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert data["value"] >= 0.0
        assert data["witness"] == int(np.argmax(data["regrets"]))
        assert "Maximum regret" in result.output

    def test_ellipsoidal(self, tmp_path: Path, ellipsoid_file: Path) -> None:
        out = tmp_path / "regret.json"
        args = ["regret-eval", "--weights", "0.3,0.3,0.4", "-u", str(ellipsoid_file), "--samples", "15", "-o", str(out)]
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert data["sample_count"] == 15
        assert len(data["witness_mu"]) == 3

    def test_scaled(self, tmp_path: Path, finite_file: Path) -> None:
        out = tmp_path / "scaled.json"
        args = ["regret-eval", "--weights", "1,0,0", "-u", str(finite_file), "--scaled", "-o", str(out)]
        result = runner.invoke(app, args)
        assert result.exit_code == 0, result.output
        data = json.loads(out.read_text())
        assert 0.0 <= data["value"] <= 1.0
        assert data["witness"] in (0, 1, 2)

    def test_wrong_number_of_weights(self, finite_file: Path) -> None:
        result = runner.invoke(app, ["regret-eval", "--weights", "0.5,0.5", "-u", str(finite_file)])
        assert result.exit_code == 5
        assert "expected 3 weights" in result.output


class TestCompareCommand:
    def test_three_modes(self, tmp_path: Path, finite_file: Path) -> None:
        out = tmp_path / "compare.csv"
        result = runner.invoke(app, ["compare", "-u", str(finite_file), "--lambda", "2", "-o", str(out)])
        assert result.exit_code == 0, result.output
        lines = out.read_text().splitlines()
        assert lines[0].startswith("mode,status,objective,worst_case_objective,max_regret,w_0")
        assert [line.split(",")[0] for line in lines[1:]] == ["classical", "absolute", "relative"]
        regrets = [float(line.split(",")[4]) for line in lines[1:]]
        assert regrets[2] <= min(regrets) + 1e-6

    def test_needs_uncertainty(self, params_file: Path) -> None:
        result = runner.invoke(app, ["compare", "-p", str(params_file)])
        assert result.exit_code == 5


class TestInitCommand:
    def test_init_creates_env_file(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.chdir(tmp_path)
        result = runner.invoke(app, ["init"])
        assert result.exit_code == 0
        content = (tmp_path / ".env").read_text()
        assert "REGRETFOLIO_SOLVER" in content

    def test_init_warns_if_env_exists(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.chdir(tmp_path)
        (tmp_path / ".env").write_text("existing")
        result = runner.invoke(app, ["init"])
        assert result.exit_code == 0
        assert "already exists" in result.output
        assert (tmp_path / ".env").read_text() == "existing"
