import io

import numpy as np
import pytest

from procpower.model import NodeSample, ProcessSample, reference_cpu_model, reference_gpu_model
from procpower.regression import fit_nnls, fit_ols
from procpower.synth import (
    NoiseSpec,
    WorkloadSpec,
    generate_trace,
    one_hot_sweep,
    oracle_attribution,
    plan_from_dict,
)
from procpower.taxonomy import InstructionClass as IC, InstructionHistogram
from procpower.trace_io import dumps_trace, read_trace, to_design_matrix

CPU = reference_cpu_model()
GPU = reference_gpu_model()


def wl(name, klass, levels, reps=3):
    return WorkloadSpec(name, InstructionHistogram.one_hot(klass), tuple(levels), reps)


def test_noise_free_trace_matches_model_exactly():
    trace = generate_trace(CPU, one_hot_sweep([1, 8, 64], 2))
    assert len(trace) == 8 * 3 * 2
    for s in trace.samples:
        assert s.measured_power == CPU.node_power(s.processes)


def test_timestamps_follow_sample_period():
    trace = generate_trace(GPU, [wl("a", IC.BRANCH, [0.5])], sample_period=0.25)
    np.testing.assert_array_equal(trace.timestamps, [0.0, 0.25, 0.5])
    assert trace.header.sample_period == 0.25


def test_group_is_additive():
    a, b = wl("a", IC.SCALAR_ARITHMETIC, [0.2, 0.4]), wl("b", IC.VECTOR_MEMORY, [0.5])
    trace = generate_trace(GPU, [a, b], multi_process=[["a", "b"]], isolated=False)
    assert len(trace) == 2 * 3
    for s in trace.samples:
        pa, pb = s.processes
        assert (pa.pid, pb.pid) == ("a", "b")
        assert pb.w == 0.5  # shorter schedule wraps
        expected = GPU.intercept + GPU.process_power(pa) + GPU.process_power(pb)
        assert s.measured_power == pytest.approx(expected, rel=1e-15)


def test_repeated_member_gets_distinct_pid():
    a = wl("a", IC.BRANCH, [0.3], reps=1)
    trace = generate_trace(GPU, [a], multi_process=[["a", "a"]], isolated=False)
    assert [p.pid for p in trace.samples[0].processes] == ["a", "a#2"]


def test_seed_determinism():
    noise = NoiseSpec(sd=5.0, seed=42)
    a = generate_trace(CPU, one_hot_sweep([2, 4], 3), noise)
    b = generate_trace(CPU, one_hot_sweep([2, 4], 3), noise)
    c = generate_trace(CPU, one_hot_sweep([2, 4], 3), NoiseSpec(sd=5.0, seed=43))
    assert a == b
    assert a != c
    assert "seed=42" in a.header.source and "PCG64" in a.header.source


def test_noise_statistics():
    trace = generate_trace(CPU, one_hot_sweep([4], 500), NoiseSpec(sd=10.0, seed=1))
    resid = np.array([s.measured_power - CPU.node_power(s.processes) for s in trace.samples])
    assert abs(resid.mean()) < 1.0
    assert resid.std() == pytest.approx(10.0, rel=0.05)


def test_outliers_widen_tails():
    plain = generate_trace(GPU, one_hot_sweep([0.5], 200), NoiseSpec(sd=1.0, seed=2))
    spiky = generate_trace(GPU, one_hot_sweep([0.5], 200), NoiseSpec(sd=1.0, seed=2, outlier_fraction=0.1))
    spread = lambda tr: max(abs(s.measured_power - GPU.node_power(s.processes)) for s in tr.samples)  # noqa: E731
    assert spread(spiky) > 3 * spread(plain)


def test_oracle_attribution_examples():
    s = NodeSample(0.0, 100.0, (ProcessSample("p", 1.0, InstructionHistogram.one_hot(IC.SCALAR_MEMORY)),))
    assert oracle_attribution(GPU, s) == {"p": pytest.approx(33.0339, rel=1e-15)}
    s = NodeSample(0.0, 100.0, (ProcessSample("p", 0.0, InstructionHistogram.one_hot(IC.SCALAR_MEMORY)),))
    assert oracle_attribution(GPU, s) == {"p": 0.0}
    h = InstructionHistogram.one_hot(IC.VECTOR_ARITHMETIC)
    s = NodeSample(0.0, 100.0, (ProcessSample("x", 0.4, h), ProcessSample("y", 0.4, h)))
    got = oracle_attribution(GPU, s)
    assert got["x"] == got["y"]


@pytest.mark.parametrize("truth, levels", [(CPU, [1, 2, 4, 8, 16, 32, 64, 128]), (GPU, [0.1, 0.5, 1.0])])
@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_generated_trace_passes_validation(truth, levels, fmt):
    trace = generate_trace(truth, one_hot_sweep(levels, 2), NoiseSpec(3.0, seed=9))
    assert read_trace(io.StringIO(dumps_trace(trace, fmt)), fmt) == trace


@pytest.mark.parametrize("truth, fitter, levels", [
    (CPU, fit_nnls, [1, 2, 4, 8, 16, 32, 64, 128]),
    (GPU, fit_ols, [0.1, 0.3, 0.5, 0.7, 1.0]),
])
def test_noise_free_fit_reproduces_truth(truth, fitter, levels):
    report = fitter(to_design_matrix(generate_trace(truth, one_hot_sweep(levels, 1))))
    np.testing.assert_allclose(report.model.gamma, truth.gamma, rtol=1e-6, atol=1e-6)
    assert report.model.intercept == pytest.approx(truth.intercept, rel=1e-6)


def test_input_validation():
    with pytest.raises(ValueError):
        NoiseSpec(sd=-1.0)
    with pytest.raises(ValueError, match="exceeds"):
        generate_trace(GPU, [wl("a", IC.BRANCH, [1.5])])
    with pytest.raises(ValueError, match="unknown workload"):
        generate_trace(GPU, [wl("a", IC.BRANCH, [0.5])], multi_process=[["a", "zz"]])
    with pytest.raises(ValueError, match="duplicate"):
        generate_trace(GPU, [wl("a", IC.BRANCH, [0.5]), wl("a", IC.JUMP, [0.5])])


def test_plan_from_dict():
    plan = plan_from_dict({
        "sample_period": 0.5,
        "workloads": [
            {"name": "stream", "histogram": {"scalar_memory": 0.75, "branch": 0.25}, "utilization": [1, 2]},
            {"name": "dgemm", "histogram": [0, 0, 0, 1, 0, 0, 0, 0], "utilization": [4], "repetitions": 2},
        ],
        "groups": [["stream", "dgemm"]],
    })
    assert plan.sample_period == 0.5 and plan.isolated
    assert plan.workloads[0].histogram[IC.BRANCH] == 0.25 and plan.workloads[0].repetitions == 50
    assert plan.groups == (("stream", "dgemm"),)
    with pytest.raises(ValueError, match="missing field"):
        plan_from_dict({"workloads": [{"name": "x"}]})
    with pytest.raises(ValueError, match="no workloads"):
        plan_from_dict({})
