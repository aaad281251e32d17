import json

import pytest
from click.testing import CliRunner

from metastable_mdp.cli import cli, run


@pytest.fixture
def runner():
    return CliRunner()


def test_solve_prints_value_table(runner):
    result = runner.invoke(cli, ["solve", "--L", "10", "--lambda", "0.9", "--reward", "r1"])
    assert result.exit_code == 0, result.output
    row = next(line for line in result.output.splitlines() if line.strip().startswith("(10,10)"))
    assert float(row.split()[1]) == pytest.approx(10.0)
    assert "stay" in row


def test_solve_rejects_bad_discount(runner):
    result = runner.invoke(cli, ["solve", "--lambda", "1.5"])
    assert result.exit_code == 2
    assert "lambda must lie in (0,1)" in result.output


def test_solve_rejects_small_torus(runner):
    result = runner.invoke(cli, ["solve", "--L", "5"])
    assert result.exit_code == 2
    assert "L must be at least 6" in result.output


def test_solve_json_output(runner, tmp_path):
    path = tmp_path / "values.json"
    result = runner.invoke(cli, ["solve", "--L", "8", "--reward", "r2", "--kernel", "no-slide",
                                 "--format", "json", "--output", str(path)])
    assert result.exit_code == 0, result.output
    payload = json.loads(path.read_text())
    assert payload["reward"] == "r2"
    values = {(row["i"], row["j"]): row for row in payload["states"]}
    assert values[(8, 6)]["value"] == pytest.approx(-21 / 6.1)
    assert values[(6, 5)]["actions"] == ["b1c"]


def test_export_values_is_byte_stable(runner, tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (first, second):
        result = runner.invoke(cli, ["export", "--kind", "values", "--L", "8", "--output", str(path)])
        assert result.exit_code == 0, result.output
    assert first.read_bytes() == second.read_bytes()
    assert first.read_text().splitlines()[0] == "# metastable-mdp v1"


def test_export_policy_lists_corner_actions_for_energy_cost(runner, tmp_path):
    path = tmp_path / "policy.csv"
    result = runner.invoke(cli, ["export", "--kind", "policy", "--L", "10", "--reward", "r2",
                                 "--kernel", "no-slide", "--output", str(path)])
    assert result.exit_code == 0, result.output
    lines = path.read_text().splitlines()
    assert lines[1] == "i,j,value,policy"
    interior = [line for line in lines[2:] if line.startswith("4,5,")]
    assert set(interior[0].split(",")[3].split("|")) == {"b1c", "b2c"}


def test_export_kernel(runner, tmp_path):
    path = tmp_path / "kernel.csv"
    result = runner.invoke(cli, ["export-kernel", "--L", "6", "--output", str(path)])
    assert result.exit_code == 0, result.output
    lines = path.read_text().splitlines()
    assert lines[1] == "i,j,action,i',j',num,den"
    assert "6,6,stay,6,6,1,1" in lines


def test_export_trajectories_needs_output(runner):
    result = runner.invoke(cli, ["export", "--kind", "trajectories", "--L", "6"])
    assert result.exit_code == 2


def test_export_trajectories(runner, tmp_path):
    path = tmp_path / "trajectories.jsonl"
    args = ["export", "--kind", "trajectories", "--L", "6", "--start", "6,4", "--episodes", "5",
            "--seed", "3", "--output", str(path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == 0, result.output
    assert "Seed: 3" in result.output
    first = path.read_bytes()
    assert runner.invoke(cli, args).exit_code == 0
    assert path.read_bytes() == first
    records = [json.loads(line) for line in first.decode().splitlines()]
    assert {record["episode"] for record in records} == set(range(5))
    assert records[0]["state"] == [6, 4]


def test_derive_kernel_row(runner):
    result = runner.invoke(cli, ["derive-kernel", "--L", "8", "--state", "5,4", "--action", "b1"])
    assert result.exit_code == 0, result.output
    assert "matches exactly" in result.output


def test_derive_kernel_reports_unresolved_mass(runner):
    result = runner.invoke(cli, ["derive-kernel", "--L", "8", "--state", "2,2", "--action", "b1c"])
    assert result.exit_code == 0, result.output
    assert "Unresolved:" in result.output
    lattice_line = next(line for line in result.output.splitlines() if line.startswith("Lattice:"))
    assert "unresolved:" in lattice_line
    assert "differs next to a rectangle corner" in result.output


def test_derive_kernel_rejects_unavailable_action(runner):
    result = runner.invoke(cli, ["derive-kernel", "--L", "8", "--state", "2,4", "--action", "b1"])
    assert result.exit_code == 1
    assert "not available" in result.output


def test_verify_solvers_suite(runner):
    result = runner.invoke(cli, ["verify", "--suite", "solvers"])
    assert result.exit_code == 0, result.output
    assert "Seed: 0" in result.output
    assert "1 passed, 0 failed, 0 notes" in result.output


def test_seed_environment_override(runner):
    result = runner.invoke(cli, ["verify", "--suite", "solvers", "--seed", "1"],
                           env={"METASTABLE_MDP_SEED": "9"})
    assert result.exit_code == 0, result.output
    assert "Seed: 9" in result.output


def test_verify_json_report(runner, tmp_path):
    path = tmp_path / "report.json"
    result = runner.invoke(cli, ["verify", "--suite", "closed-forms", "--L", "8", "--format", "json",
                                 "--output", str(path)])
    assert result.exit_code == 0, result.output
    assert json.loads(path.read_text())["all_passed"] is True


def test_simulate_with_kernel_dynamics(runner):
    result = runner.invoke(cli, ["simulate", "--L", "6", "--start", "6,4", "--dynamics", "kernel",
                                 "--episodes", "20", "--threads", "1"])
    assert result.exit_code == 0, result.output
    assert "Seed: 0" in result.output
    assert "Episodes: 20 (20 absorbed)" in result.output


def test_stability_of_square(runner, tmp_path):
    path = tmp_path / "square.txt"
    rows = ["......", "......", "..##..", "..##..", "......", "......"]
    path.write_text("\n".join(["L=6 boundary=periodic", *rows]) + "\n")
    result = runner.invoke(cli, ["stability", str(path), "--max-particles", "5"])
    assert result.exit_code == 0, result.output
    assert "Stability level: 2" in result.output
    assert "Robust: yes" in result.output


def test_stability_below_the_robustness_threshold_is_undetermined(runner, tmp_path):
    path = tmp_path / "bar.txt"
    rows = ["......", "......", "..##..", "......", "......", "......"]
    path.write_text("\n".join(["L=6 boundary=periodic", *rows]) + "\n")
    result = runner.invoke(cli, ["stability", str(path), "--max-particles", "3", "--max-energy", "0.5"])
    assert result.exit_code == 0, result.output
    assert "unreached within bounds" in result.output
    assert "Robust: undetermined" in result.output
    result = runner.invoke(cli, ["stability", str(path), "--max-particles", "3"])
    assert "Stability level: 1" in result.output
    assert "Robust: no" in result.output


def test_simulate_on_the_lattice_prints_the_lattice_derived_value(runner):
    result = runner.invoke(cli, ["simulate", "--L", "10", "--start", "10,8", "--episodes", "20", "--threads", "1"])
    assert result.exit_code == 0, result.output
    assert "Episodes: 20 (20 absorbed)" in result.output
    assert "Lattice-derived value: 8.85245901639" in result.output
    assert "Unresolved:" not in result.output


def test_run_returns_exit_codes():
    assert run(["solve", "--L", "6"]) == 0
    assert run(["solve", "--lambda", "0"]) == 2


def test_verify_help_shows_the_episode_default(runner):
    result = runner.invoke(cli, ["verify", "--help"])
    assert result.exit_code == 0
    assert "default: 100000" in result.output
