import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import histograms, process_samples
from procpower.model import (
    NodeSample,
    PowerModel,
    ProcessSample,
    Sigma,
    UtilizationError,
    attribution_fractions,
    default_sigma,
    feature_vector,
    predict_node_power,
    predict_process_power,
    reference_cpu_model,
    reference_gpu_model,
    sigma_feature,
)
from procpower.taxonomy import CLASSES, Device, InstructionClass as IC, InstructionHistogram

CPU = reference_cpu_model()
GPU = reference_gpu_model()


def one_hot(klass, w, pid="p", t=0.0):
    return ProcessSample(pid, w, InstructionHistogram.one_hot(klass), t)


def test_default_sigma_assignment():
    cpu = dict(zip(CLASSES, default_sigma("cpu")))
    assert {c for c, s in cpu.items() if s is Sigma.LOG_LINEAR} == {
        IC.SCALAR_MEMORY, IC.VECTOR_MEMORY, IC.VECTOR_ARITHMETIC}
    assert set(default_sigma("gpu")) == {Sigma.LINEAR}


@pytest.mark.parametrize("h, w, kind, expected", [
    (0.5, 4.0, Sigma.LINEAR, 2.0),
    (1.0, 0.0, Sigma.LOG_LINEAR, 0.0),
    (0.5, math.e - 1.0, Sigma.LOG_LINEAR, 0.5),
    (0.0, 7.0, Sigma.LINEAR, 0.0),
])
def test_sigma_feature(h, w, kind, expected):
    assert sigma_feature(h, w, kind) == pytest.approx(expected, rel=1e-15)


def test_feature_vector_examples():
    idle = ProcessSample("a", 3.0, InstructionHistogram.idle())
    assert feature_vector(idle, CPU) == [0.0] * 8
    fv = feature_vector(one_hot(IC.BRANCH, 2.0), CPU)
    assert fv == [0, 0, 0, 0, 0, 0, 2.0, 0]
    fv = feature_vector(one_hot(IC.SCALAR_MEMORY, 1.0), CPU)
    assert fv[IC.SCALAR_MEMORY.index] == pytest.approx(math.log(2.0), rel=1e-15)
    assert fv[IC.SCALAR_MEMORY.index] == pytest.approx(0.6931, abs=1e-4)


def test_utilization_bounds():
    with pytest.raises(UtilizationError, match="'hog'"):
        feature_vector(one_hot(IC.JUMP, 129.0, pid="hog"), CPU)
    with pytest.raises(UtilizationError, match="'g'"):
        feature_vector(one_hot(IC.JUMP, 1.5, pid="g"), GPU)
    with pytest.raises(UtilizationError):
        ProcessSample("neg", -0.1, InstructionHistogram.idle())


def test_reference_models():
    # published reference coefficients
    assert predict_node_power(NodeSample(0.0, 1.0), CPU) == 336.5031
    assert predict_node_power(NodeSample(0.0, 1.0), GPU) == 34.9818
    assert predict_process_power(one_hot(IC.VECTOR_LOGIC, 1.0), CPU) == pytest.approx(154.5258, rel=1e-12)
    assert predict_process_power(one_hot(IC.SCALAR_ARITHMETIC, 1.0), GPU) == pytest.approx(276.1728, rel=1e-12)
    assert predict_process_power(one_hot(IC.SCALAR_MEMORY, 1.0), GPU) == pytest.approx(33.0339, rel=1e-12)


def test_zero_utilization_gives_zero_power():
    p = ProcessSample("p", 0.0, InstructionHistogram((0.25, 0.25, 0.5, 0, 0, 0, 0, 0)))
    assert predict_process_power(p, CPU) == 0.0


def test_node_power_superposition_example():
    p = one_hot(IC.VECTOR_LOGIC, 3.0, "a")
    q = one_hot(IC.VECTOR_LOGIC, 3.0, "b")
    d = predict_process_power(p, CPU)
    assert predict_node_power(NodeSample(0.0, 1.0, (p, q)), CPU) == pytest.approx(CPU.intercept + 2 * d, rel=1e-15)


def test_attribution_fractions():
    a = one_hot(IC.SCALAR_ARITHMETIC, 2.0, "a")
    b = one_hot(IC.SCALAR_ARITHMETIC, 1.0, "b")
    assert attribution_fractions(NodeSample(0, 1, (a,)), CPU).fractions == {"a": 1.0}
    shares = attribution_fractions(NodeSample(0, 1, (a, a.__class__("c", 2.0, a.h))), CPU)
    assert shares.fractions == {"a": 0.5, "c": 0.5} and not shares.idle
    shares = attribution_fractions(NodeSample(0, 1, (a, b)), CPU).fractions
    assert shares["a"] == pytest.approx(2 / 3, rel=1e-15)
    assert shares["b"] == pytest.approx(1 / 3, rel=1e-15)


def test_attribution_idle_window():
    idle = attribution_fractions(NodeSample(0, 1, (one_hot(IC.JUMP, 0.0, "z"),)), CPU)
    assert idle.idle and idle.fractions == {"z": 0.0}
    assert attribution_fractions(NodeSample(0, 1), CPU) == ({}, True)


@settings(max_examples=300)
@given(st.lists(process_samples(128.0), max_size=12), st.integers(0, 12))
def test_superposition_any_partition(procs, cut):
    total = predict_node_power(NodeSample(0.0, 1.0, tuple(procs)), CPU)
    left, right = procs[:cut], procs[cut:]
    parts = (CPU.intercept
             + math.fsum(predict_process_power(p, CPU) for p in left)
             + math.fsum(predict_process_power(p, CPU) for p in right))
    assert total == pytest.approx(parts, rel=1e-12)


@given(st.sampled_from(CLASSES), st.floats(0, 127), st.floats(0, 1), st.sampled_from([CPU, GPU]))
def test_monotone_in_utilization(klass, w, dw, model):
    w = min(w, model.max_utilization)
    w2 = min(w + dw, model.max_utilization)
    if model is GPU:
        w, w2 = w / 128.0, w2 / 128.0
    lo = predict_process_power(one_hot(klass, w), model)
    hi = predict_process_power(one_hot(klass, w2), model)
    assert hi >= lo


@given(histograms(), st.floats(0, 60), st.floats(0, 2))
def test_linear_classes_homogeneous(h, w, c):
    p = ProcessSample("p", w, h)
    q = ProcessSample("p", w * c, h)
    fp, fq = feature_vector(p, CPU), feature_vector(q, CPU)
    for k, kind in enumerate(CPU.sigma):
        if kind is Sigma.LINEAR:
            assert fq[k] == pytest.approx(c * fp[k], rel=1e-15, abs=0)


def test_model_invariants():
    with pytest.raises(ValueError):
        PowerModel(Device.CPU, (1.0,) * 8, -1.0, n_cores=4)
    with pytest.raises(ValueError):
        PowerModel(Device.CPU, (1.0,) * 8, 1.0)  # no n_cores
    with pytest.raises(ValueError):
        PowerModel(Device.GPU, (1.0,) * 7, 1.0)


@settings(max_examples=100)
@given(st.lists(st.floats(-500, 500), min_size=8, max_size=8), st.floats(0, 1000),
       st.lists(process_samples(1.0), min_size=1, max_size=5))
def test_model_round_trip(gamma, intercept, procs):
    model = PowerModel(Device.GPU, gamma, intercept, metadata={"rmse": 1.25, "n_samples": 10})
    back = PowerModel.loads(model.dumps())
    assert back == model
    assert back.metadata == model.metadata
    for p in procs:
        assert predict_process_power(p, back) == predict_process_power(p, model)
    s = NodeSample(0.0, 1.0, tuple(procs))
    assert predict_node_power(s, back) == predict_node_power(s, model)


def test_model_file_format_version():
    doc = CPU.to_dict()
    assert doc["format_version"] == 1
    assert doc["gamma"] == list(CPU.gamma)
    doc["format_version"] = 2
    with pytest.raises(ValueError, match="format_version"):
        PowerModel.from_dict(doc)
