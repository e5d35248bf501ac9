"""Instruction-mix power models and per-process energy attribution for shared CPU/GPU nodes."""

from .accounting import AttributionReport, attribute_trace, render_report
from .model import (
    NodeSample,
    PowerModel,
    ProcessSample,
    Sigma,
    attribution_fractions,
    feature_vector,
    predict_node_power,
    predict_process_power,
    reference_cpu_model,
    reference_gpu_model,
    sigma_feature,
)
from .regression import DesignMatrix, FitReport, compute_metrics, fit, fit_nnls, fit_ols
from .synth import NoiseSpec, WorkloadSpec, generate_trace, oracle_attribution
from .taxonomy import (
    ClassificationRules,
    Device,
    InstructionClass,
    InstructionHistogram,
    build_histogram,
    classify_mnemonic,
    parse_disassembly,
)
from .trace_io import Trace, TraceHeader, read_trace, to_design_matrix, write_trace

__version__ = "0.1.0"
