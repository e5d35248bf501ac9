import numpy as np

from procpower.accounting import attribute_trace
from procpower.model import reference_cpu_model
from procpower.plotting import plot_attribution, plot_fit, plot_weights
from procpower.synth import generate_trace, one_hot_sweep

PNG = b"\x89PNG\r\n\x1a\n"


def test_figures_are_written(tmp_path):
    model = reference_cpu_model()
    trace = generate_trace(model, one_hot_sweep([1, 8], 2))
    report = attribute_trace(trace, model)
    plot_fit(trace.measured, trace.measured + 1.0, tmp_path / "fit.png", title="fit")
    plot_weights(model, tmp_path / "weights.png")
    plot_attribution(report, tmp_path / "attr.png")
    plot_fit(np.array([1.0, 2.0]), np.array([1.0, 2.5]), tmp_path / "fit.pdf")
    for name in ("fit.png", "weights.png", "attr.png"):
        assert (tmp_path / name).read_bytes()[:8] == PNG
    assert (tmp_path / "fit.pdf").read_bytes()[:4] == b"%PDF"
