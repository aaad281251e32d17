"""Writers for kernel, value, policy, trajectory and report output."""
import json
import os
from typing import IO, Any, Dict, List, Optional, Sequence

from filelock import FileLock

from .config import CSV_HEADER, LOCK_DIR
from .models import CheckStatus, KernelVariant, OutputFormat
from .schemas import Trajectory, VerificationReport


def fmt(x: float) -> str:
    """Full double precision for CSV"""
    return format(float(x), ".17g")


def _lock_for(path: str) -> FileLock:
    name = os.path.basename(os.path.abspath(path)) or "output"
    return FileLock(os.path.join(LOCK_DIR, f"{name}.lock"))


def write_kernel_csv(L: int, stream: IO[str], variant: KernelVariant = KernelVariant.FULL) -> int:
    """Write every kernel row as exact rationals; returns the number of lines written"""
    from .auxmdp import kernel_rows

    stream.write(f"{CSV_HEADER}\n")
    stream.write("i,j,action,i',j',num,den\n")
    lines = 0
    for s, a, row in kernel_rows(L, variant):
        for target, p in row.entries:
            stream.write(f"{s.i},{s.j},{a.value},{target.i},{target.j},{p.numerator},{p.denominator}\n")
            lines += 1
    return lines


def value_rows(states: Sequence, values: Sequence[float], actions: Sequence[Sequence[Any]]) -> List[Dict[str, Any]]:
    return [
        {"i": s[0], "j": s[1], "value": float(v), "actions": [getattr(a, "value", a) for a in acts]}
        for s, v, acts in zip(states, values, actions)
    ]


def write_values(rows: List[Dict[str, Any]], stream: IO[str], output_format: OutputFormat,
                 meta: Optional[Dict[str, Any]] = None, action_header: str = "actions") -> None:
    """Value table with the greedy (or chosen) actions of every state"""
    if output_format == OutputFormat.JSON:
        payload = dict(meta or {})
        payload["states"] = rows
        stream.write(json.dumps(payload, indent=2) + "\n")
    elif output_format == OutputFormat.CSV:
        stream.write(f"{CSV_HEADER}\n")
        stream.write(f"i,j,value,{action_header}\n")
        for row in rows:
            stream.write(f"{row['i']},{row['j']},{fmt(row['value'])},{'|'.join(row['actions'])}\n")
    else:
        stream.write(f"{'state':>10}  {'value':>22}  {action_header}\n")
        for row in rows:
            state = f"({row['i']},{row['j']})"
            stream.write(f"{state:>10}  {row['value']:>22.15g}  {', '.join(row['actions'])}\n")


def trajectory_lines(trajectory: Trajectory, episode: int) -> List[str]:
    return [
        json.dumps({
            "episode": episode,
            "state": list(record.state),
            "action": record.action.value,
            "reward": record.reward,
            "discount": record.discount,
        })
        for record in trajectory.epochs
    ]


def append_trajectories(path: str, trajectories: Sequence[Trajectory], first_episode: int = 0) -> None:
    """Append trajectories as JSON lines, one epoch per line"""
    lines = []
    for offset, trajectory in enumerate(trajectories):
        lines.extend(trajectory_lines(trajectory, first_episode + offset))
    if not lines:
        return
    with _lock_for(path):
        with open(path, "a") as handle:
            handle.write("\n".join(lines) + "\n")


def write_report(report: VerificationReport, stream: IO[str], output_format: OutputFormat) -> None:
    if output_format == OutputFormat.JSON:
        stream.write(report.model_dump_json(indent=2) + "\n")
        return
    for check in report.checks:
        mark = {CheckStatus.PASS: "✓", CheckStatus.FAIL: "✗", CheckStatus.NOTE: "•"}[check.status]
        numbers = ""
        if check.measured is not None:
            numbers = f" measured={check.measured:.12g}"
            if check.expected is not None:
                numbers += f" expected={check.expected:.12g}"
        detail = f" ({check.detail})" if check.detail else ""
        stream.write(f"{mark} {check.status.value.upper():4} {check.name}{numbers}{detail}\n")
    counts = report.counts()
    stream.write(f"{counts['pass']} passed, {counts['fail']} failed, {counts['note']} notes\n")
