import io
import json
from collections import defaultdict
from fractions import Fraction

from metastable_mdp.config import CSV_HEADER
from metastable_mdp.export import (append_trajectories, fmt, value_rows, write_kernel_csv, write_report,
                                   write_values)
from metastable_mdp.models import AuxAction, OutputFormat
from metastable_mdp.schemas import EpochRecord, Trajectory, VerificationReport


def test_kernel_csv_rows_sum_to_one():
    stream = io.StringIO()
    lines = write_kernel_csv(6, stream)
    text = stream.getvalue().splitlines()
    assert text[0] == CSV_HEADER
    assert text[1] == "i,j,action,i',j',num,den"
    assert len(text) == lines + 2
    totals = defaultdict(Fraction)
    for line in text[2:]:
        i, j, action, _, _, num, den = line.split(",")
        totals[(i, j, action)] += Fraction(int(num), int(den))
    assert set(totals.values()) == {Fraction(1)}
    assert ("6", "6", "stay") in totals


def test_kernel_csv_is_byte_stable():
    first, second = io.StringIO(), io.StringIO()
    write_kernel_csv(8, first)
    write_kernel_csv(8, second)
    assert first.getvalue() == second.getvalue()


def test_full_precision_numbers():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(7.836603063692555)) == 7.836603063692555


def test_value_formats():
    rows = value_rows([(2, 2), (6, 6)], [1.5, 10.0], [[AuxAction.B1C, AuxAction.B2C], [AuxAction.STAY]])
    csv_stream, json_stream, table_stream = io.StringIO(), io.StringIO(), io.StringIO()
    write_values(rows, csv_stream, OutputFormat.CSV)
    write_values(rows, json_stream, OutputFormat.JSON, {"L": 6})
    write_values(rows, table_stream, OutputFormat.TABLE)
    assert csv_stream.getvalue().splitlines()[2] == "2,2,1.5,b1c|b2c"
    payload = json.loads(json_stream.getvalue())
    assert payload["L"] == 6
    assert payload["states"][1] == {"i": 6, "j": 6, "value": 10.0, "actions": ["stay"]}
    assert "(6,6)" in table_stream.getvalue()


def test_report_table():
    report = VerificationReport()
    report.record("first", True, measured=1.0, expected=1.0)
    report.record("second", False, detail="off by one")
    report.note("third", "documented")
    stream = io.StringIO()
    write_report(report, stream, OutputFormat.TABLE)
    lines = stream.getvalue().splitlines()
    assert lines[0].startswith("✓ PASS first")
    assert lines[1] == "✗ FAIL second (off by one)"
    assert lines[-1] == "1 passed, 1 failed, 1 notes"
    assert not report.all_passed
    assert json.loads(report.model_dump_json())["all_passed"] is False


def test_trajectories_are_appended_in_order(tmp_path):
    path = tmp_path / "trajectories.jsonl"
    trajectory = Trajectory(
        epochs=[EpochRecord(state=(6, 4), action=AuxAction.B1, reward=-3.0, discount=1.0),
                EpochRecord(state=(6, 6), action=AuxAction.STAY, reward=0.0, discount=0.9)],
        discounted_return=-3.0, hit_target=True, steps=1,
    )
    append_trajectories(str(path), [trajectory], first_episode=0)
    append_trajectories(str(path), [trajectory], first_episode=1)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert [record["episode"] for record in records] == [0, 0, 1, 1]
    assert records[0] == {"episode": 0, "state": [6, 4], "action": "b1", "reward": -3.0, "discount": 1.0}
