"""Per-process energy accounting over a trace.

Per-process power comes from the model's intercept-free dynamic term; energy
is its trapezoidal integral over the trace timestamps.  The intercept is
booked as node idle energy and never prorated, and the gap between measured
and modeled node energy is reported as unexplained.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import DeviceMismatchError, PowerModel
from .trace_io import Trace

GAP_FACTOR = 10.0
REPORT_FORMAT_VERSION = 1


@dataclass
class ProcessEnergy:
    pid: str
    power: list[float]
    energy_joules: float
    share_of_dynamic: float


@dataclass
class AttributionReport:
    timestamps: list[float]
    processes: dict[str, ProcessEnergy]
    idle_energy_joules: float
    modeled_energy_joules: float
    total_measured_energy_joules: float
    unexplained_energy_joules: float
    duration: float
    gaps: list[tuple[float, float]] = field(default_factory=list)
    idle: bool = False
    device: str = ""
    idle_power_w: float = 0.0

    @property
    def dynamic_energy_joules(self) -> float:
        return math.fsum(p.energy_joules for p in self.processes.values())


def interval_weights(t: np.ndarray, max_gap: float) -> tuple[np.ndarray, list[tuple[float, float]]]:
    """Trapezoid weights per sample, skipping intervals wider than ``max_gap``.

    ``energy = weights @ power`` reproduces the trapezoid rule over every kept
    interval.  Returns the weights and the list of skipped ``(start, end)``.
    """
    n = len(t)
    weights = np.zeros(n)
    gaps = []
    for i in range(n - 1):
        dt = t[i + 1] - t[i]
        if dt > max_gap:
            gaps.append((float(t[i]), float(t[i + 1])))
            continue
        weights[i] += dt / 2.0
        weights[i + 1] += dt / 2.0
    return weights, gaps


def attribute_trace(trace: Trace, model: PowerModel) -> AttributionReport:
    if trace.device is not model.device:
        raise DeviceMismatchError(
            f"trace device {trace.device.value} does not match model device {model.device.value}")
    t = trace.timestamps
    n = len(t)
    pids: list[str] = []
    for s in trace.samples:
        for p in s.processes:
            if p.pid not in pids:
                pids.append(p.pid)
    power = {pid: np.zeros(n) for pid in pids}
    for i, s in enumerate(trace.samples):
        for p in s.processes:
            power[p.pid][i] += model.process_power(p)

    weights, gaps = interval_weights(t, GAP_FACTOR * trace.header.sample_period)
    duration = float(weights.sum())
    energy = {pid: float(weights @ series) for pid, series in power.items()}
    idle_energy = model.intercept * duration
    modeled = idle_energy + math.fsum(energy.values())
    measured = float(weights @ trace.measured) if n else 0.0

    dynamic_total = math.fsum(energy.values())
    if dynamic_total > 0.0:
        shares = {pid: e / dynamic_total for pid, e in energy.items()}
    else:
        # zero-length trace: fall back to instantaneous power
        summed = {pid: float(series.sum()) for pid, series in power.items()}
        total = math.fsum(summed.values())
        shares = {pid: (v / total if total > 0.0 else 0.0) for pid, v in summed.items()}
    idle = not any(v > 0.0 for v in shares.values())

    processes = {
        pid: ProcessEnergy(pid, power[pid].tolist(), energy[pid], shares[pid]) for pid in pids
    }
    return AttributionReport(
        timestamps=t.tolist(),
        processes=processes,
        idle_energy_joules=idle_energy,
        modeled_energy_joules=modeled,
        total_measured_energy_joules=measured,
        unexplained_energy_joules=measured - modeled,
        duration=duration,
        gaps=gaps,
        idle=idle,
        device=trace.device.value,
        idle_power_w=model.intercept,
    )


# -- rendering ----------------------------------------------------------------

def report_to_dict(r: AttributionReport) -> dict:
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "device": r.device,
        "timestamps": r.timestamps,
        "processes": [
            {"pid": p.pid, "power_w": p.power, "energy_j": p.energy_joules,
             "share_of_dynamic": p.share_of_dynamic}
            for p in r.processes.values()
        ],
        "totals": {
            "duration_s": r.duration,
            "idle_power_w": r.idle_power_w,
            "idle_energy_j": r.idle_energy_joules,
            "modeled_energy_j": r.modeled_energy_joules,
            "measured_energy_j": r.total_measured_energy_joules,
            "unexplained_energy_j": r.unexplained_energy_joules,
            "idle_window": r.idle,
        },
        "gaps": [list(g) for g in r.gaps],
    }


def report_from_dict(doc: dict) -> AttributionReport:
    totals = doc["totals"]
    processes = {
        p["pid"]: ProcessEnergy(p["pid"], list(p["power_w"]), p["energy_j"], p["share_of_dynamic"])
        for p in doc["processes"]
    }
    return AttributionReport(
        timestamps=list(doc["timestamps"]),
        processes=processes,
        idle_energy_joules=totals["idle_energy_j"],
        modeled_energy_joules=totals["modeled_energy_j"],
        total_measured_energy_joules=totals["measured_energy_j"],
        unexplained_energy_joules=totals["unexplained_energy_j"],
        duration=totals["duration_s"],
        gaps=[tuple(g) for g in doc.get("gaps", [])],
        idle=totals["idle_window"],
        device=doc.get("device", ""),
        idle_power_w=totals.get("idle_power_w", 0.0),
    )


CSV_COLUMNS = ("record", "pid", "t", "value")
_TOTAL_RECORDS = (
    ("duration_s", "duration"),
    ("idle_power_w", "idle_power_w"),
    ("idle_energy_j", "idle_energy_joules"),
    ("modeled_energy_j", "modeled_energy_joules"),
    ("measured_energy_j", "total_measured_energy_joules"),
    ("unexplained_energy_j", "unexplained_energy_joules"),
)


def _render_csv(r: AttributionReport) -> str:
    """Long-format CSV: ``power_w`` rows per (pid, t), then per-pid and node totals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    g = lambda x: format(x, ".17g")  # noqa: E731
    for p in r.processes.values():
        for t, watts in zip(r.timestamps, p.power):
            writer.writerow(("power_w", p.pid, g(t), g(watts)))
    for p in r.processes.values():
        writer.writerow(("energy_j", p.pid, "", g(p.energy_joules)))
        writer.writerow(("share_of_dynamic", p.pid, "", g(p.share_of_dynamic)))
    for record, attr in _TOTAL_RECORDS:
        writer.writerow((record, "", "", g(getattr(r, attr))))
    for start, end in r.gaps:
        writer.writerow(("gap_s", "", g(start), g(end - start)))
    return buf.getvalue()


def _render_text(r: AttributionReport) -> str:
    lines = [f"Per-process energy ({r.device or 'unknown device'}, {len(r.timestamps)} samples, "
             f"{r.duration:.3f} s integrated)", ""]
    if r.processes:
        width = max(8, *(len(pid) for pid in r.processes))
        lines.append(f"{'pid':<{width}}  {'energy [J]':>16}  {'mean power [W]':>14}  {'share':>8}")
        for p in sorted(r.processes.values(), key=lambda p: -p.energy_joules):
            mean = (p.energy_joules / r.duration) if r.duration > 0 else float(np.mean(p.power))
            lines.append(f"{p.pid:<{width}}  {p.energy_joules:16.3f}  {mean:14.3f}  "
                         f"{100 * p.share_of_dynamic:7.2f}%")
        lines.append("")
    lines += [
        f"idle (static) energy   {r.idle_energy_joules:16.3f} J",
        f"dynamic energy         {r.dynamic_energy_joules:16.3f} J",
        f"modeled energy         {r.modeled_energy_joules:16.3f} J",
        f"measured energy        {r.total_measured_energy_joules:16.3f} J",
        f"unexplained energy     {r.unexplained_energy_joules:16.3f} J",
    ]
    if r.idle:
        lines.append("no dynamic power attributed (idle window)")
    for start, end in r.gaps:
        lines.append(f"gap skipped: {start!r} .. {end!r}")
    return "\n".join(lines) + "\n"


def render_report(r: AttributionReport, format: str = "text") -> str:
    if format == "json":
        return json.dumps(report_to_dict(r), indent=1) + "\n"
    if format == "csv":
        return _render_csv(r)
    if format == "text":
        return _render_text(r)
    raise ValueError(f"unknown report format {format!r}")


def read_report(text: str) -> AttributionReport:
    return report_from_dict(json.loads(text))
