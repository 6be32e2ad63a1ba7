from __future__ import annotations

from typer.testing import CliRunner

from unrect.CLI.main import app

runner = CliRunner()


def test_root_help():
    result = runner.invoke(app, ["--help"])
    assert result.exit_code == 0
    assert "unrect" in result.stdout
    for command in ("gen", "favard", "measure", "perturb", "lemma", "iterate"):
        assert command in result.stdout


def test_iterate_help():
    result = runner.invoke(app, ["iterate", "--help"])
    assert result.exit_code == 0
    assert "--steps" in result.stdout
    assert "--ledger" in result.stdout
