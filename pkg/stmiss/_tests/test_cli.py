import json
import os
import pathlib
import subprocess
import sysconfig

import click.testing
import pandas
import pytest

import stmiss
from stmiss._cli import cli


@pytest.fixture(name="runner")
def runner_fixture():
    return click.testing.CliRunner()


@pytest.fixture(name="amputed_csv")
def amputed_csv_fixture(tmp_path, runner):
    complete = os.fspath(tmp_path / "complete.csv")
    amputed = os.fspath(tmp_path / "amputed.csv")
    runner.invoke(
        cli,
        ["simulate", "--model", "bank", "--n", "200", "--seed", "3", "--out", complete],
        catch_exceptions=False,
    )
    runner.invoke(
        cli,
        ["ampute", "--in", complete, "--p", "0.1", "--seed", "4", "--out", amputed],
        catch_exceptions=False,
    )
    return amputed


def test_help():
    """The console script doesn't fail when asked for --help."""
    scripts = pathlib.Path(sysconfig.get_path("scripts"))
    subprocess.run([os.fspath(scripts / "stmiss"), "--help"], check=True)


def test_simulate_writes_complete_rows(tmp_path, runner):
    out = os.fspath(tmp_path / "data.csv")

    result = runner.invoke(
        cli, ["simulate", "--model", "chds", "--n", "25", "--out", out]
    )

    assert result.exit_code == 0, result.output
    spec = stmiss.generators.load("chds").tree.variables
    data = stmiss.read_csv(out, spec=spec)
    assert len(data) == 25
    assert data.is_complete()
    assert data.spec == spec


def test_ampute_punches_holes(tmp_path, amputed_csv):
    data = stmiss.read_csv(amputed_csv)

    # floor(0.1 * 200 * 4) = 80 holes
    assert data.missing_mask.sum() == 80


def test_ampute_parses_weights(tmp_path, runner):
    complete = os.fspath(tmp_path / "complete.csv")
    out = os.fspath(tmp_path / "amputed.csv")
    runner.invoke(cli, ["simulate", "--model", "bank", "--n", "50", "--out", complete])

    result = runner.invoke(
        cli,
        [
            "ampute",
            "--in", complete,
            "--p", "0.1",
            "--mechanism", "mar",
            "--weights", "1,0,0,two",
            "--out", out,
        ],
    )

    assert result.exit_code == 2
    assert "--weights" in result.output


def test_fit_and_evaluate(tmp_path, runner, amputed_csv):
    model = os.fspath(tmp_path / "model.json")
    report = tmp_path / "report.json"
    metrics = tmp_path / "metrics.json"

    fitted = runner.invoke(
        cli,
        [
            "fit",
            "--in", amputed_csv,
            "--algo", "bhc",
            "--score", "omit",
            "--out", model,
            "--report", os.fspath(report),
        ],
    )
    evaluated = runner.invoke(
        cli,
        [
            "evaluate",
            "--true", "bank",
            "--est", model,
            "--metrics", "kl,hamming",
            "--out", os.fspath(metrics),
        ],
    )

    assert fitted.exit_code == 0, fitted.output
    assert evaluated.exit_code == 0, evaluated.output
    document = json.loads(report.read_text())
    assert document["score_kind"] == "omit"
    assert document["n_stages"] == stmiss.load_model(model).staging.n_stages
    assert set(json.loads(metrics.read_text())) == {"kl", "hamming", "cd_degenerate"}


def test_fit_with_em_reports_iterations(tmp_path, runner, amputed_csv):
    groups = tmp_path / "groups.json"
    report = tmp_path / "report.json"

    result = runner.invoke(
        cli,
        [
            "fit",
            "--in", amputed_csv,
            "--algo", "em-params",
            "--em-max-iter", "5",
            "--dump-groups", os.fspath(groups),
            "--report", os.fspath(report),
        ],
    )

    assert result.exit_code == 0, result.output
    document = json.loads(report.read_text())
    assert 1 <= document["iterations"] <= 5
    assert len(document["loglik_trace"]) == document["iterations"]
    assert groups.exists()


def test_levels_follow_the_model_named_by_spec_from(tmp_path, runner):
    complete = os.fspath(tmp_path / "complete.csv")
    model = os.fspath(tmp_path / "model.json")
    metrics = tmp_path / "metrics.json"
    runner.invoke(
        cli,
        ["simulate", "--model", "titanic", "--n", "8", "--out", complete],
        catch_exceptions=False,
    )

    fitted = runner.invoke(
        cli,
        [
            "fit",
            "--in", complete,
            "--algo", "bhc",
            "--spec-from", "titanic",
            "--out", model,
        ],
    )
    evaluated = runner.invoke(
        cli,
        ["evaluate", "--true", "titanic", "--est", model, "--out", os.fspath(metrics)],
    )

    assert fitted.exit_code == 0, fitted.output
    assert evaluated.exit_code == 0, evaluated.output
    spec = stmiss.generators.load("titanic").tree.variables
    assert stmiss.load_model(model).tree.variables == spec
    assert "hamming" in json.loads(metrics.read_text())


def test_ampute_with_spec_from_writes_the_model_column_order(tmp_path, runner):
    spec = stmiss.generators.load("bank").tree.variables
    complete = tmp_path / "complete.csv"
    out = os.fspath(tmp_path / "amputed.csv")
    runner.invoke(
        cli,
        ["simulate", "--model", "bank", "--n", "40", "--out", os.fspath(complete)],
        catch_exceptions=False,
    )
    frame = pandas.read_csv(complete, dtype=str)
    frame[list(reversed(spec.names))].to_csv(complete, index=False)

    result = runner.invoke(
        cli,
        [
            "ampute",
            "--in", os.fspath(complete),
            "--p", "0.1",
            "--spec-from", "bank",
            "--out", out,
        ],
    )

    assert result.exit_code == 0, result.output
    assert list(pandas.read_csv(out, nrows=0).columns) == list(spec.names)
    assert stmiss.read_csv(out, spec=spec).spec == spec


def test_spec_from_rejects_levels_the_model_does_not_have(tmp_path, runner):
    path = tmp_path / "data.csv"
    names = stmiss.generators.load("bank").tree.variables.names
    path.write_text(",".join(names) + "\n" + ",".join(["bogus"] * len(names)) + "\n")

    result = runner.invoke(
        cli,
        [
            "fit",
            "--in", os.fspath(path),
            "--spec-from", "bank",
            "--out", os.fspath(tmp_path / "model.json"),
        ],
    )

    assert result.exit_code == 1
    assert "bogus" in result.output


def test_library_errors_become_click_errors(tmp_path, runner, amputed_csv):
    out = os.fspath(tmp_path / "x.csv")

    result = runner.invoke(cli, ["ampute", "--in", amputed_csv, "--p", "0.1", "--out", out])

    assert result.exit_code == 1
    assert "Error: Can only ampute complete data." in result.output


def test_unknown_metric(tmp_path, runner):
    model = os.fspath(tmp_path / "model.json")
    stmiss.save_model(stmiss.generators.load("bank"), model)

    result = runner.invoke(
        cli, ["evaluate", "--true", "bank", "--est", model, "--metrics", "kl,speed"]
    )

    assert result.exit_code == 2
    assert "--metrics" in result.output


def test_log_level_from_environment(runner):
    result = runner.invoke(cli, ["simulate", "--help"], env={"STM_LOG": "chatty"})

    assert result.exit_code == 2
    assert "chatty" in result.output


def test_benchmark_writes_results_and_timings(tmp_path, runner):
    plan = tmp_path / "plan.json"
    out = tmp_path / "results.csv"
    plan.write_text(
        json.dumps(
            {
                "models": ["bank"],
                "sizes": [40],
                "proportions": [0.1],
                "mechanisms": ["mcar"],
                "algorithms": ["om-hc"],
                "replicates": 2,
            }
        )
    )

    result = runner.invoke(
        cli,
        [
            "benchmark",
            "--plan", os.fspath(plan),
            "--out", os.fspath(out),
            "--jobs", "2",
            "--seed", "9",
        ],
    )

    assert result.exit_code == 0, result.output
    assert len(pandas.read_csv(out)) == 2
    assert (tmp_path / "results.timing.csv").exists()


def test_benchmark_reports_bad_plans(tmp_path, runner):
    plan = tmp_path / "plan.json"
    plan.write_text("{")

    out = os.fspath(tmp_path / "results.csv")

    result = runner.invoke(cli, ["benchmark", "--plan", os.fspath(plan), "--out", out])

    assert result.exit_code == 1
    assert "not valid JSON" in result.output
