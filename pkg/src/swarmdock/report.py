"""Batch execution, run summaries, and CSV exporters for external plotting."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .scenario import parse_scenario, scenario_to_dict
from .sim import (
    LandingMetrics,
    MetricsUnavailableError,
    RunRecord,
    ScenarioConfig,
    Termination,
    compute_metrics,
    run_scenario,
)


@dataclass(frozen=True)
class RunSummary:
    scenario: str
    seed: int
    termination: str
    errors: dict[int, float]
    rmse: float
    boundary_radius: float
    elections: int
    runtime_s: float

    def core_fields(self) -> tuple:
        """Everything except wall-clock runtime, for determinism checks."""
        return (
            self.scenario,
            self.seed,
            self.termination,
            tuple(sorted(self.errors.items())),
            self.rmse,
            self.boundary_radius,
            self.elections,
        )


def summarize(record: RunRecord, metrics: Optional[LandingMetrics], runtime_s: float) -> RunSummary:
    return RunSummary(
        scenario=record.config.name,
        seed=record.config.seed,
        termination=record.termination.value,
        errors=dict(metrics.errors) if metrics else {},
        rmse=metrics.rmse if metrics else math.nan,
        boundary_radius=metrics.boundary_radius if metrics else math.nan,
        elections=sum(1 for ev in record.events if ev.kind == "election"),
        runtime_s=runtime_s,
    )


def execute_batch(
    config: ScenarioConfig, runs: int, base_seed: int
) -> list[tuple[RunRecord, Optional[LandingMetrics], RunSummary]]:
    """Run the scenario with seeds base_seed .. base_seed+runs-1."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    results = []
    for i in range(runs):
        cfg = replace(config, seed=base_seed + i)
        started = time.perf_counter()
        record = run_scenario(cfg)
        runtime = time.perf_counter() - started
        try:
            metrics = compute_metrics(record)
        except MetricsUnavailableError:
            metrics = None
        results.append((record, metrics, summarize(record, metrics, runtime)))
    return results


def run_batch(config: ScenarioConfig, runs: int, base_seed: int) -> list[RunSummary]:
    """Summaries for a seed sweep, ordered by seed."""
    return [summary for _, _, summary in execute_batch(config, runs, base_seed)]


def aggregate(summaries: Sequence[RunSummary]) -> dict:
    """Mean/max landing statistics over a batch."""
    errors = [e for s in summaries for e in s.errors.values()]
    rmses = [s.rmse for s in summaries if not math.isnan(s.rmse)]
    return {
        "runs": len(summaries),
        "mean_error": sum(errors) / len(errors) if errors else math.nan,
        "max_error": max(errors) if errors else math.nan,
        "mean_rmse": sum(rmses) / len(rmses) if rmses else math.nan,
        "max_boundary_radius": max(
            (s.boundary_radius for s in summaries if not math.isnan(s.boundary_radius)),
            default=math.nan,
        ),
        "terminations": {
            kind.value: sum(1 for s in summaries if s.termination == kind.value)
            for kind in Termination
        },
        "elections": sum(s.elections for s in summaries),
    }


def format_report(summaries: Sequence[RunSummary]) -> str:
    """Human-readable batch table plus the aggregate line."""
    lines = [
        f"{'scenario':<28} {'seed':>6} {'termination':<12} {'rmse_m':>9} {'boundary_m':>11} {'elections':>9}"
    ]
    for s in sorted(summaries, key=lambda s: (s.scenario, s.seed)):
        rmse = f"{s.rmse:.4f}" if not math.isnan(s.rmse) else "-"
        boundary = f"{s.boundary_radius:.4f}" if not math.isnan(s.boundary_radius) else "-"
        lines.append(
            f"{s.scenario:<28} {s.seed:>6} {s.termination:<12} {rmse:>9} {boundary:>11} {s.elections:>9}"
        )
    agg = aggregate(summaries)
    lines.append(
        f"aggregate: mean_error={agg['mean_error']:.4f} m  max_error={agg['max_error']:.4f} m  "
        f"terminations={agg['terminations']}"
    )
    return "\n".join(lines)


TRAJECTORY_HEADER = "t,entity,x,y,z,vx,vy,vz,role,phase"


def export_trajectories(record: RunRecord, path) -> None:
    """Per-tick CSV: one drone row per drone plus one platform row.

    Values carry six decimal places, so identical records export to
    byte-identical files.
    """
    lines = [TRAJECTORY_HEADER]
    for row in record.rows:
        for d in row.drones:
            lines.append(
                f"{row.t:.6f},drone{d.id},{d.x:.6f},{d.y:.6f},{d.z:.6f},"
                f"{d.vx:.6f},{d.vy:.6f},{d.vz:.6f},{d.role.value},{d.phase.name.lower()}"
            )
        pvx = row.platform_speed * math.cos(row.platform_heading)
        pvy = row.platform_speed * math.sin(row.platform_heading)
        lines.append(
            f"{row.t:.6f},platform,{row.platform_x:.6f},{row.platform_y:.6f},0.000000,"
            f"{pvx:.6f},{pvy:.6f},0.000000,,"
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write trajectory CSV {path}: {exc}") from None


def emit_plot_data(records: Sequence[RunRecord], out_dir) -> list[Path]:
    """Figure-ready CSVs: top-view traces, touchdown scatter, boundary radii."""
    if not records:
        raise ValueError("need at least one record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    traces = ["run,seed,entity,t,x,y"]
    for run_idx, record in enumerate(records):
        seed = record.config.seed
        for row in record.rows:
            for d in row.drones:
                traces.append(f"{run_idx},{seed},drone{d.id},{row.t:.6f},{d.x:.6f},{d.y:.6f}")
            traces.append(
                f"{run_idx},{seed},platform,{row.t:.6f},{row.platform_x:.6f},{row.platform_y:.6f}"
            )

    scatter = ["run,seed,drone,touchdown_x,touchdown_y,target_x,target_y,error_m"]
    boundaries = ["run,seed,boundary_radius_m"]
    for run_idx, record in enumerate(records):
        seed = record.config.seed
        formation = record.config.formation
        try:
            metrics = compute_metrics(record)
        except MetricsUnavailableError:
            continue
        for td in record.touchdowns:
            rx = td.x - td.platform_x
            ry = td.y - td.platform_y
            cos_h, sin_h = math.cos(td.platform_heading), math.sin(td.platform_heading)
            ex = cos_h * rx + sin_h * ry
            ey = -sin_h * rx + cos_h * ry
            ox, oy = formation.offset_for(td.drone_id)
            scatter.append(
                f"{run_idx},{seed},{td.drone_id},{ex:.6f},{ey:.6f},{ox:.6f},{oy:.6f},"
                f"{metrics.errors[td.drone_id]:.6f}"
            )
        boundaries.append(f"{run_idx},{seed},{metrics.boundary_radius:.6f}")

    paths = []
    for name, lines in (("traces.csv", traces), ("touchdowns.csv", scatter), ("boundaries.csv", boundaries)):
        target = out / name
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(target)
    return paths


def save_summaries(
    summaries: Sequence[RunSummary], config: ScenarioConfig, base_seed: int, path
) -> None:
    """Batch results plus the scenario itself, so runs can be reproduced."""
    payload = {
        "scenario_name": config.name,
        "base_seed": base_seed,
        "scenario": scenario_to_dict(config),
        "summaries": [
            {
                "scenario": s.scenario,
                "seed": s.seed,
                "termination": s.termination,
                "errors": {str(k): v for k, v in sorted(s.errors.items())},
                "rmse": None if math.isnan(s.rmse) else s.rmse,
                "boundary_radius": None if math.isnan(s.boundary_radius) else s.boundary_radius,
                "elections": s.elections,
                "runtime_s": s.runtime_s,
            }
            for s in summaries
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_summaries(path) -> tuple[ScenarioConfig, int, list[RunSummary]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    config = parse_scenario(data["scenario"], name=data.get("scenario_name", "scenario"))
    summaries = [
        RunSummary(
            scenario=item["scenario"],
            seed=item["seed"],
            termination=item["termination"],
            errors={int(k): v for k, v in item["errors"].items()},
            rmse=math.nan if item["rmse"] is None else item["rmse"],
            boundary_radius=(
                math.nan if item["boundary_radius"] is None else item["boundary_radius"]
            ),
            elections=item["elections"],
            runtime_s=item["runtime_s"],
        )
        for item in data["summaries"]
    ]
    return config, data["base_seed"], summaries
