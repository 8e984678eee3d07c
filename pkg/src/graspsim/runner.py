"""Headless scenario execution and metrics aggregation."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import ScenarioConfig, load_scenario
from .session import GraspSession

MAX_TICKS = 60000


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        if not self.rows:
            return 0.0
        return sum(1 for r in self.rows if r["status"] == "success") / len(self.rows)

    def to_csv(self, path: str | Path) -> None:
        fields = ["scenario", "status", "final_error", "replans", "relocated", "ticks", "wall_time_s"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in fields})
            fh.write(f"# success_rate,{self.success_rate:.4f}\n")


def run_scenario(
    config: ScenarioConfig,
    log_path: str | Path | None = None,
    closed_loop: bool = True,
    max_ticks: int = MAX_TICKS,
    realtime: bool = False,
) -> dict:
    """Execute one scenario headlessly: apply its prompt script, then tick
    to completion. Returns the per-scenario metrics row."""
    t0 = time.perf_counter()
    session = GraspSession(config, closed_loop=closed_loop)
    for msg in config.prompt_script:
        session.handle_message(msg)
        if session.done:
            break
    next_deadline = time.monotonic()
    while not session.done and session.tick_index < max_ticks:
        session.tick()
        if realtime:
            next_deadline += session.params.dt
            delay = next_deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)
    if not session.done:
        session._finish("ik_failure")
    wall = time.perf_counter() - t0

    if log_path is not None:
        Path(log_path).write_text(session.log_lines())

    outcome = session.outcome or {}
    return {
        "scenario": config.name,
        "status": outcome.get("status", "unknown"),
        "final_error": outcome.get("final_error"),
        "replans": outcome.get("replans", 0),
        "relocated": outcome.get("relocated", False),
        "ticks": outcome.get("ticks", session.tick_index),
        "wall_time_s": round(wall, 3),
    }


def run_batch(directory: str | Path, metrics_out: str | Path | None = None, log_dir: str | Path | None = None) -> MetricsReport:
    report = MetricsReport()
    paths = sorted(Path(directory).glob("*.json"))
    for path in paths:
        config = load_scenario(path)
        log_path = Path(log_dir) / f"{path.stem}.ndjson" if log_dir else None
        row = run_scenario(config, log_path=log_path)
        report.rows.append(row)
    if metrics_out is not None:
        report.to_csv(metrics_out)
    return report
