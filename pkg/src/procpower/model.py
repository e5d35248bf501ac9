"""Linear instruction-mix power models and their feature transforms.

A model predicts the power of a node (or GPU card) as a static intercept plus
one dynamic term per running process.  The dynamic term of a process is a
weighted sum over instruction classes of a per-class feature that mixes the
class probability ``h_k`` with the process utilization ``w``:

* log-linear classes use ``h_k * ln(w + 1)``
* linear classes use ``h_k * w``
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .taxonomy import CLASSES, N_CLASSES, Device, InstructionClass, InstructionHistogram

FORMAT_VERSION = 1


class Sigma(enum.Enum):
    LOG_LINEAR = "log_linear"
    LINEAR = "linear"


_CPU_LOG_LINEAR = {
    InstructionClass.SCALAR_MEMORY,
    InstructionClass.VECTOR_MEMORY,
    InstructionClass.VECTOR_ARITHMETIC,
}


def default_sigma(device: "Device | str") -> tuple[Sigma, ...]:
    """Per-class feature transform, in canonical class order."""
    device = Device.parse(device)
    if device is Device.GPU:
        return (Sigma.LINEAR,) * N_CLASSES
    return tuple(Sigma.LOG_LINEAR if c in _CPU_LOG_LINEAR else Sigma.LINEAR for c in CLASSES)


class UtilizationError(ValueError):
    """A process utilization falls outside the device's valid range."""


class DeviceMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessSample:
    pid: str
    w: float
    h: InstructionHistogram
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pid", str(self.pid))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "t", float(self.t))
        if not (self.w >= 0.0) or not math.isfinite(self.w):
            raise UtilizationError(f"process {self.pid!r}: utilization {self.w!r} must be finite and >= 0")


@dataclass(frozen=True)
class NodeSample:
    t: float
    measured_power: float
    processes: tuple[ProcessSample, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "measured_power", float(self.measured_power))
        object.__setattr__(self, "processes", tuple(self.processes))
        if not (self.measured_power > 0.0) or not math.isfinite(self.measured_power):
            raise ValueError(f"sample at t={self.t!r}: measured power {self.measured_power!r} must be > 0")
        for p in self.processes:
            if p.t != self.t:
                raise ValueError(f"sample at t={self.t!r}: process {p.pid!r} stamped t={p.t!r}")


def sigma_feature(h_k: float, w: float, kind: Sigma) -> float:
    """Feature value of one instruction class.

    >>> sigma_feature(0.5, 4.0, Sigma.LINEAR)
    2.0
    """
    if h_k == 0.0 or w == 0.0:
        return 0.0
    if kind is Sigma.LOG_LINEAR:
        return h_k * math.log1p(w)
    return h_k * w


@dataclass(frozen=True)
class PowerModel:
    """Fitted (or reference) linear power model for one device kind.

    Attributes
    ----------
    device : Device
        CPU models take utilization in cores, GPU models a fraction in [0, 1].
    gamma : tuple of float
        Watts per feature unit, canonical class order.
    intercept : float
        Static power in watts, never attributed to processes.
    sigma : tuple of Sigma
        Feature transform per class.
    n_cores : int or None
        Core count bounding CPU utilization.
    metadata : dict
        Fit provenance (solver, RMSE, sample count...).  Not part of equality.
    """

    device: Device
    gamma: tuple[float, ...]
    intercept: float
    sigma: tuple[Sigma, ...] = None
    n_cores: "int | None" = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        device = Device.parse(self.device)
        object.__setattr__(self, "device", device)
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "intercept", float(self.intercept))
        sigma = default_sigma(device) if self.sigma is None else tuple(Sigma(s) for s in self.sigma)
        object.__setattr__(self, "sigma", sigma)
        if len(self.gamma) != N_CLASSES or len(sigma) != N_CLASSES:
            raise ValueError(f"model needs {N_CLASSES} weights and transforms")
        if not all(math.isfinite(g) for g in self.gamma) or not math.isfinite(self.intercept):
            raise ValueError("model coefficients must be finite")
        if self.intercept < 0.0:
            raise ValueError(f"intercept {self.intercept!r} must be >= 0")
        if device is Device.CPU:
            if self.n_cores is None or int(self.n_cores) < 1:
                raise ValueError("CPU models need a positive n_cores")
            object.__setattr__(self, "n_cores", int(self.n_cores))
        elif self.n_cores is not None:
            object.__setattr__(self, "n_cores", int(self.n_cores))

    @property
    def max_utilization(self) -> float:
        return float(self.n_cores) if self.device is Device.CPU else 1.0

    def weight(self, klass: InstructionClass) -> float:
        return self.gamma[klass.index]

    def check_utilization(self, p: ProcessSample) -> None:
        if p.w > self.max_utilization:
            raise UtilizationError(
                f"process {p.pid!r}: utilization {p.w!r} exceeds {self.max_utilization!r} "
                f"for a {self.device.value} model"
            )

    def feature_vector(self, p: ProcessSample) -> list[float]:
        self.check_utilization(p)
        return [sigma_feature(h_k, p.w, s) for h_k, s in zip(p.h.probs, self.sigma)]

    def process_power(self, p: ProcessSample) -> float:
        return math.fsum(g * x for g, x in zip(self.gamma, self.feature_vector(p)))

    def node_power(self, processes: Iterable[ProcessSample]) -> float:
        return self.intercept + math.fsum(self.process_power(p) for p in processes)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "device": self.device.value,
            "n_cores": self.n_cores,
            "sigma": {c.value: s.value for c, s in zip(CLASSES, self.sigma)},
            "gamma": list(self.gamma),
            "classes": [c.value for c in CLASSES],
            "intercept": self.intercept,
            "fit": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PowerModel":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version!r}")
        classes = doc.get("classes", [c.value for c in CLASSES])
        if list(classes) != [c.value for c in CLASSES]:
            raise ValueError("model class order does not match the canonical order")
        sigma_doc = doc["sigma"]
        sigma = tuple(Sigma(sigma_doc[c.value]) for c in CLASSES)
        return cls(
            device=Device.parse(doc["device"]),
            gamma=tuple(doc["gamma"]),
            intercept=doc["intercept"],
            sigma=sigma,
            n_cores=doc.get("n_cores"),
            metadata=dict(doc.get("fit") or {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PowerModel":
        return cls.from_dict(json.loads(text))


def save_model(model: PowerModel, path: "str | Path") -> None:
    Path(path).write_text(model.dumps(), encoding="utf-8")


def load_model(path: "str | Path") -> PowerModel:
    return PowerModel.loads(Path(path).read_text(encoding="utf-8"))


def feature_vector(p: ProcessSample, model: PowerModel) -> list[float]:
    return model.feature_vector(p)


def predict_process_power(p: ProcessSample, model: PowerModel) -> float:
    """Dynamic power of a single process; the intercept is excluded."""
    return model.process_power(p)


def predict_node_power(s: NodeSample, model: PowerModel) -> float:
    return model.node_power(s.processes)


class WindowShares(NamedTuple):
    fractions: dict
    idle: bool


def attribution_fractions(s: NodeSample, model: PowerModel) -> WindowShares:
    """Share of the window's dynamic power taken by each process.

    A window with no dynamic power yields zero shares and ``idle=True``.
    """
    powers = {}
    for p in s.processes:
        powers[p.pid] = powers.get(p.pid, 0.0) + model.process_power(p)
    total = math.fsum(powers.values())
    if total <= 0.0:
        return WindowShares({pid: 0.0 for pid in powers}, True)
    return WindowShares({pid: v / total for pid, v in powers.items()}, False)


# Coefficients fitted on a dual-socket AMD EPYC 7H12 node (PSU power, NNLS)
# and on an NVIDIA V100 card (card power, OLS).
_REFERENCE_CPU = (0.6717, 35.6589, 0.0, 38.6822, 35.3435, 154.5258, 0.6459, 0.3239)
_REFERENCE_GPU = (276.1728, 33.0339, 108.412, 4.9488, 102.3084, 0.0, 0.0, 0.0)


def reference_cpu_model(n_cores: int = 128) -> PowerModel:
    return PowerModel(Device.CPU, _REFERENCE_CPU, 336.5031, n_cores=n_cores,
                      metadata={"source": "reference"})


def reference_gpu_model() -> PowerModel:
    return PowerModel(Device.GPU, _REFERENCE_GPU, 34.9818, metadata={"source": "reference"})


def make_model(device, gamma: Sequence[float], intercept: float, n_cores=None, **metadata) -> PowerModel:
    return PowerModel(Device.parse(device), tuple(gamma), intercept, n_cores=n_cores, metadata=metadata)
