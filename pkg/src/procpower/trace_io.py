"""Reading, validating and writing recorded power traces.

Two layouts are supported.

CSV, one process per row, with ``#`` header lines carrying trace metadata::

    # device=cpu
    # n_cores=128
    # sample_period=1
    # source=lab export
    t,power_w,pid,w,h_sa,h_sm,h_sl,h_va,h_vm,h_vl,h_br,h_jp
    0,402.1,stream,4,0,1,0,0,0,0,0,0

Rows sharing a timestamp belong to the same node sample.  An idle sample is
a row with empty ``pid``, ``w`` and histogram fields.

JSON is the nested form: ``{"format_version": 1, "header": {...},
"samples": [{"t", "power_w", "processes": [{"pid", "w", "h": [...]}]}]}``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .model import DeviceMismatchError, NodeSample, PowerModel, ProcessSample, Sigma, default_sigma, sigma_feature
from .regression import DesignMatrix
from .taxonomy import N_CLASSES, SHORT_NAMES, Device, InstructionHistogram

FORMAT_VERSION = 1
INPUT_HISTOGRAM_TOLERANCE = 1e-6
CSV_COLUMNS = ["t", "power_w", "pid", "w"] + [f"h_{s}" for s in SHORT_NAMES]


class TraceError(ValueError):
    """Base class for trace validation failures."""

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class TraceSchemaError(TraceError):
    pass


class TraceOrderError(TraceError):
    pass


class HistogramError(TraceError):
    pass


class BoundsError(TraceError):
    pass


@dataclass(frozen=True)
class TraceHeader:
    device: Device
    n_cores: "int | None" = None
    sample_period: float = 1.0
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "device", Device.parse(self.device))
        object.__setattr__(self, "sample_period", float(self.sample_period))
        if not (self.sample_period > 0.0) or not math.isfinite(self.sample_period):
            raise TraceSchemaError(f"sample_period must be > 0, got {self.sample_period!r}")
        if self.device is Device.CPU:
            if self.n_cores is None or int(self.n_cores) < 1:
                raise TraceSchemaError("CPU traces need a positive n_cores")
        if self.n_cores is not None:
            object.__setattr__(self, "n_cores", int(self.n_cores))

    @property
    def max_utilization(self) -> float:
        return float(self.n_cores) if self.device is Device.CPU else 1.0


@dataclass(frozen=True)
class Trace:
    header: TraceHeader
    samples: tuple[NodeSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        validate(self)

    def __len__(self):
        return len(self.samples)

    @property
    def device(self) -> Device:
        return self.header.device

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=np.float64)

    @property
    def measured(self) -> np.ndarray:
        return np.array([s.measured_power for s in self.samples], dtype=np.float64)


def validate(trace: Trace) -> None:
    limit = trace.header.max_utilization
    previous = None
    for i, s in enumerate(trace.samples, 1):
        if previous is not None and not s.t > previous:
            raise TraceOrderError(f"timestamp {s.t!r} does not increase (previous {previous!r})", i)
        previous = s.t
        for p in s.processes:
            if p.w > limit:
                raise BoundsError(
                    f"process {p.pid!r} utilization {p.w!r} exceeds {limit!r} "
                    f"for a {trace.header.device.value} trace", i)


def _histogram(values, record) -> InstructionHistogram:
    probs = [float(v) for v in values]
    if len(probs) != N_CLASSES:
        raise TraceSchemaError(f"histogram needs {N_CLASSES} entries, got {len(probs)}", record)
    for v in probs:
        if not math.isfinite(v) or v < 0.0 or v > 1.0 + INPUT_HISTOGRAM_TOLERANCE:
            raise HistogramError(f"histogram entry {v!r} outside [0, 1]", record)
    total = math.fsum(probs)
    if total == 0.0:
        return InstructionHistogram.idle()
    if abs(total - 1.0) > INPUT_HISTOGRAM_TOLERANCE:
        raise HistogramError(f"histogram sums to {total!r}", record)
    if abs(total - 1.0) > 1e-12:
        probs = [min(v / total, 1.0) for v in probs]
    return InstructionHistogram(tuple(probs))


def _float(value, name, record) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise TraceSchemaError(f"field {name!r}: cannot parse {value!r} as a number", record) from None
    if not math.isfinite(out):
        raise TraceSchemaError(f"field {name!r} is not finite", record)
    return out


def _process(pid, w, h, t, record) -> ProcessSample:
    w = _float(w, "w", record)
    if w < 0.0:
        raise BoundsError(f"process {pid!r} utilization {w!r} is negative", record)
    return ProcessSample(str(pid), w, _histogram(h, record), t)


def _node(t, power, processes, record) -> NodeSample:
    if not power > 0.0:
        raise BoundsError(f"measured power {power!r} must be > 0", record)
    return NodeSample(t, power, tuple(processes))


def _build(header, samples) -> Trace:
    return Trace(header, tuple(samples))


# -- CSV --------------------------------------------------------------------

def _parse_csv_header(lines: list[str]) -> TraceHeader:
    meta = {}
    for line in lines:
        body = line.lstrip("#").strip()
        if "=" in body:
            key, value = body.split("=", 1)
            meta[key.strip()] = value.strip()
    if "device" not in meta:
        raise TraceSchemaError("CSV trace is missing the '# device=' header line")
    try:
        return TraceHeader(
            device=Device.parse(meta["device"]),
            n_cores=int(meta["n_cores"]) if meta.get("n_cores") else None,
            sample_period=float(meta.get("sample_period", 1.0)),
            source=meta.get("source", ""),
        )
    except ValueError as exc:
        if isinstance(exc, TraceError):
            raise
        raise TraceSchemaError(f"bad CSV header: {exc}") from None


def read_csv(stream: TextIO) -> Trace:
    comments = []
    body = []
    for line in stream:
        if not body and line.startswith("#"):
            comments.append(line)
        elif line.strip():
            body.append(line)
    header = _parse_csv_header(comments)
    reader = csv.reader(body)
    try:
        columns = next(reader)
    except StopIteration:
        raise TraceSchemaError("CSV trace has no column header") from None
    columns = [c.strip() for c in columns]
    if columns != CSV_COLUMNS:
        raise TraceSchemaError(f"expected columns {','.join(CSV_COLUMNS)}, got {','.join(columns)}")

    samples = []
    current_t = current_power = None
    current_procs: list = []
    first_record = None
    for record, row in enumerate(reader, 1):
        if len(row) != len(CSV_COLUMNS):
            raise TraceSchemaError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", record)
        t = _float(row[0], "t", record)
        power = _float(row[1], "power_w", record)
        if current_t is not None and t == current_t:
            if power != current_power:
                raise TraceSchemaError(f"rows at t={t!r} disagree on power_w", record)
            if not current_procs:
                raise TraceSchemaError(f"idle row at t={t!r} cannot be combined with processes", record)
        else:
            if current_t is not None:
                samples.append(_node(current_t, current_power, current_procs, first_record))
            current_t, current_power, current_procs, first_record = t, power, [], record
        pid = row[2].strip()
        rest = [v.strip() for v in row[3:]]
        if pid == "" and not any(rest):
            if current_procs:
                raise TraceSchemaError(f"idle row at t={t!r} cannot be combined with processes", record)
            continue
        if pid == "":
            raise TraceSchemaError("process row without pid", record)
        current_procs.append(_process(pid, rest[0], rest[1:], t, record))
    if current_t is not None:
        samples.append(_node(current_t, current_power, current_procs, first_record))
    return _build(header, samples)


def write_csv(trace: Trace, stream: TextIO) -> None:
    h = trace.header
    stream.write(f"# device={h.device.value}\n")
    if h.n_cores is not None:
        stream.write(f"# n_cores={h.n_cores}\n")
    stream.write(f"# sample_period={_fmt(h.sample_period)}\n")
    if h.source:
        stream.write(f"# source={h.source}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in trace.samples:
        if not s.processes:
            writer.writerow([_fmt(s.t), _fmt(s.measured_power), ""] + [""] * (1 + N_CLASSES))
        for p in s.processes:
            writer.writerow([_fmt(s.t), _fmt(s.measured_power), p.pid, _fmt(p.w)]
                            + [_fmt(v) for v in p.h.probs])


def _fmt(x: float) -> str:
    return format(x, ".17g")


# -- JSON -------------------------------------------------------------------

def trace_to_dict(trace: Trace) -> dict:
    h = trace.header
    return {
        "format_version": FORMAT_VERSION,
        "header": {
            "device": h.device.value,
            "n_cores": h.n_cores,
            "sample_period": h.sample_period,
            "source": h.source,
        },
        "samples": [
            {
                "t": s.t,
                "power_w": s.measured_power,
                "processes": [{"pid": p.pid, "w": p.w, "h": list(p.h.probs)} for p in s.processes],
            }
            for s in trace.samples
        ],
    }


def trace_from_dict(doc) -> Trace:
    if not isinstance(doc, dict):
        raise TraceSchemaError("JSON trace must be an object")
    if doc.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise TraceSchemaError(f"unsupported format_version {doc.get('format_version')!r}")
    try:
        hd = doc["header"]
        header = TraceHeader(
            device=Device.parse(hd["device"]),
            n_cores=hd.get("n_cores"),
            sample_period=hd.get("sample_period", 1.0),
            source=hd.get("source", "") or "",
        )
        raw_samples = doc["samples"]
    except (KeyError, TypeError) as exc:
        raise TraceSchemaError(f"JSON trace missing field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, TraceError):
            raise
        raise TraceSchemaError(str(exc)) from None

    samples = []
    for record, s in enumerate(raw_samples, 1):
        try:
            t = _float(s["t"], "t", record)
            power = _float(s["power_w"], "power_w", record)
            procs = [_process(p["pid"], p["w"], p["h"], t, record) for p in s.get("processes", [])]
        except (KeyError, TypeError) as exc:
            raise TraceSchemaError(f"missing or malformed field {exc}", record) from None
        samples.append(_node(t, power, procs, record))
    return _build(header, samples)


def read_json(stream: TextIO) -> Trace:
    try:
        doc = json.load(stream)
    except json.JSONDecodeError as exc:
        raise TraceSchemaError(f"invalid JSON: {exc}") from None
    return trace_from_dict(doc)


def write_json(trace: Trace, stream: TextIO) -> None:
    json.dump(trace_to_dict(trace), stream, indent=1)
    stream.write("\n")


# -- front doors ------------------------------------------------------------

def guess_format(path: "str | Path | None", text: str = "") -> str:
    if path not in (None, "-"):
        suffix = Path(path).suffix.lower()
        if suffix == ".csv":
            return "csv"
        if suffix == ".json":
            return "json"
    return "json" if text.lstrip().startswith("{") else "csv"


def read_trace(source, format: "str | None" = None) -> Trace:
    """Read and validate a trace from a path or text stream (``format``: csv or json)."""
    if hasattr(source, "read"):
        text = source.read()
        path = None
    else:
        path = Path(source)
        text = path.read_text(encoding="utf-8")
    format = format or guess_format(path, text)
    stream = io.StringIO(text)
    if format == "csv":
        return read_csv(stream)
    if format == "json":
        return read_json(stream)
    raise ValueError(f"unknown trace format {format!r}")


def write_trace(trace: Trace, target, format: "str | None" = None) -> None:
    if hasattr(target, "write"):
        (write_csv if (format or "json") == "csv" else write_json)(trace, target)
        return
    format = format or guess_format(target)
    with open(target, "w", encoding="utf-8", newline="") as fh:
        (write_csv if format == "csv" else write_json)(trace, fh)


def dumps_trace(trace: Trace, format: str = "json") -> str:
    buf = io.StringIO()
    write_trace(trace, buf, format)
    return buf.getvalue()


def to_design_matrix(trace: Trace, model_template: "PowerModel | tuple | None" = None) -> DesignMatrix:
    """One row per node sample: the summed per-process features, against measured power.

    ``model_template`` supplies the per-class transforms; by default those of
    the trace's device.
    """
    if not trace.samples:
        raise TraceSchemaError("cannot build a design matrix from an empty trace")
    if isinstance(model_template, PowerModel):
        if model_template.device is not trace.device:
            raise DeviceMismatchError(
                f"trace device {trace.device.value} does not match model device "
                f"{model_template.device.value}")
        sigma = model_template.sigma
    elif model_template is None:
        sigma = default_sigma(trace.device)
    else:
        sigma = tuple(Sigma(s) for s in model_template)
    rows = np.zeros((len(trace.samples), N_CLASSES))
    for i, s in enumerate(trace.samples):
        for p in s.processes:
            rows[i] += [sigma_feature(h_k, p.w, kind) for h_k, kind in zip(p.h.probs, sigma)]
    return DesignMatrix(rows, trace.measured, trace.device, trace.header.n_cores)


def iter_processes(trace: Trace) -> Iterable[ProcessSample]:
    for s in trace.samples:
        yield from s.processes
