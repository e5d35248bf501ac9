"""Synthetic node simulator with known ground truth.

Traces are generated from a given power model: each scheduled point yields a
node sample whose measured power is the model prediction plus seeded noise.
The same model then serves as the attribution oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .model import NodeSample, PowerModel, ProcessSample
from .taxonomy import CLASSES, InstructionHistogram
from .trace_io import Trace, TraceHeader

RNG_NAME = "numpy.PCG64"
# measured power never drops below this, so extreme noise draws stay valid
MIN_POWER = 1e-3


@dataclass(frozen=True)
class WorkloadSpec:
    name: str
    histogram: InstructionHistogram
    utilization: tuple[float, ...]
    repetitions: int = 50

    def __post_init__(self):
        object.__setattr__(self, "utilization", tuple(float(w) for w in self.utilization))
        if self.repetitions < 1:
            raise ValueError(f"workload {self.name!r}: repetitions must be >= 1")
        if not self.utilization:
            raise ValueError(f"workload {self.name!r}: empty utilization schedule")
        if any(w < 0 or not math.isfinite(w) for w in self.utilization):
            raise ValueError(f"workload {self.name!r}: utilization must be finite and >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    sd: float = 0.0
    seed: int = 0
    outlier_fraction: float = 0.0
    outlier_scale: float = 10.0

    def __post_init__(self):
        if self.sd < 0:
            raise ValueError(f"noise sd must be >= 0, got {self.sd!r}")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SynthPlan:
    """Workloads plus optional concurrent groupings, as loaded from a workloads file."""

    workloads: tuple[WorkloadSpec, ...]
    groups: tuple[tuple[str, ...], ...] = ()
    sample_period: float = 1.0
    isolated: bool = True


def generate_trace(
    truth: PowerModel,
    workloads: Sequence[WorkloadSpec],
    noise: NoiseSpec = NoiseSpec(),
    multi_process: "Sequence[Sequence[str]] | None" = None,
    *,
    sample_period: float = 1.0,
    isolated: bool = True,
) -> Trace:
    """Simulate a trace from ``truth``.

    Every workload is first run in isolation over its utilization schedule
    (each level repeated ``repetitions`` times) unless ``isolated`` is False.
    Each grouping in ``multi_process`` then runs its members concurrently:
    point ``i`` pairs the ``i``-th schedule entry of every member (shorter
    schedules wrap), repeated as many times as the largest member asks.
    """
    by_name = {}
    for wl in workloads:
        if wl.name in by_name:
            raise ValueError(f"duplicate workload name {wl.name!r}")
        for w in wl.utilization:
            if w > truth.max_utilization:
                raise ValueError(
                    f"workload {wl.name!r}: utilization {w!r} exceeds {truth.max_utilization!r}")
        by_name[wl.name] = wl

    points: list[list[tuple[str, WorkloadSpec, float]]] = []
    if isolated:
        for wl in workloads:
            for w in wl.utilization:
                points.extend([[(wl.name, wl, w)]] * wl.repetitions)
    for group in multi_process or ():
        members = []
        for name in group:
            if name not in by_name:
                raise ValueError(f"grouping refers to unknown workload {name!r}")
            members.append(by_name[name])
        if not members:
            continue
        pids = _group_pids([m.name for m in members])
        length = max(len(m.utilization) for m in members)
        reps = max(m.repetitions for m in members)
        for i in range(length):
            point = [(pid, m, m.utilization[i % len(m.utilization)]) for pid, m in zip(pids, members)]
            points.extend([point] * reps)

    rng = np.random.Generator(np.random.PCG64(noise.seed))
    draws = rng.normal(0.0, 1.0, size=len(points)) * noise.sd
    if noise.outlier_fraction > 0.0:
        hit = rng.random(len(points)) < noise.outlier_fraction
        draws = np.where(hit, rng.normal(0.0, 1.0, size=len(points)) * noise.sd * noise.outlier_scale, draws)

    samples = []
    for k, point in enumerate(points):
        t = k * float(sample_period)
        procs = tuple(ProcessSample(pid, w, wl.histogram, t) for pid, wl, w in point)
        power = truth.node_power(procs) + float(draws[k])
        samples.append(NodeSample(t, max(power, MIN_POWER), procs))

    source = f"synth rng={RNG_NAME} seed={noise.seed} sd={noise.sd!r}"
    if noise.outlier_fraction:
        source += f" outliers={noise.outlier_fraction!r}"
    header = TraceHeader(truth.device, truth.n_cores, sample_period, source)
    return Trace(header, tuple(samples))


def _group_pids(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name}#{seen[name]}")
    return out


def oracle_attribution(truth: PowerModel, s: NodeSample) -> dict[str, float]:
    """Ground-truth dynamic power per pid for one node sample."""
    out: dict[str, float] = {}
    for p in s.processes:
        out[p.pid] = out.get(p.pid, 0.0) + truth.process_power(p)
    return out


# -- workloads file -----------------------------------------------------------

def plan_from_dict(doc: Mapping) -> SynthPlan:
    """Parse a workloads document.

    ::

        {"sample_period": 1.0,
         "isolated": true,
         "workloads": [{"name": "stream", "histogram": {"scalar_memory": 1.0},
                        "utilization": [1, 2, 4], "repetitions": 50}],
         "groups": [["stream", "dgemm"]]}

    ``histogram`` is either a class-name mapping or a list of eight
    probabilities in canonical class order.
    """
    workloads = []
    for i, item in enumerate(doc.get("workloads", []), 1):
        try:
            hist = item["histogram"]
            if isinstance(hist, Mapping):
                histogram = InstructionHistogram.from_mapping(hist)
            else:
                histogram = InstructionHistogram(tuple(hist))
            workloads.append(WorkloadSpec(
                name=str(item["name"]),
                histogram=histogram,
                utilization=tuple(item["utilization"]),
                repetitions=int(item.get("repetitions", 50)),
            ))
        except KeyError as exc:
            raise ValueError(f"workload {i}: missing field {exc}") from None
    if not workloads:
        raise ValueError("workloads document lists no workloads")
    groups = tuple(tuple(str(n) for n in g) for g in doc.get("groups", []))
    return SynthPlan(tuple(workloads), groups, float(doc.get("sample_period", 1.0)),
                     bool(doc.get("isolated", True)))


def load_plan(path: "str | Path") -> SynthPlan:
    return plan_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def generate_from_plan(truth: PowerModel, plan: SynthPlan, noise: NoiseSpec = NoiseSpec()) -> Trace:
    return generate_trace(truth, plan.workloads, noise, plan.groups,
                          sample_period=plan.sample_period, isolated=plan.isolated)


def one_hot_sweep(levels: Sequence[float], repetitions: int = 50) -> list[WorkloadSpec]:
    """One single-class workload per instruction class over the same utilization levels."""
    return [WorkloadSpec(c.value, InstructionHistogram.one_hot(c), tuple(levels), repetitions)
            for c in CLASSES]
