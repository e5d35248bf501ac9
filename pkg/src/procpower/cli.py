"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import accounting, regression, synth, taxonomy, trace_io
from .model import PowerModel, UtilizationError, reference_cpu_model, reference_gpu_model
from .taxonomy import CLASSES, Device

log = logging.getLogger("procpower")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

BUILTIN_MODELS = {
    "@cpu-reference": reference_cpu_model,
    "@gpu-reference": reference_gpu_model,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- output helpers -------------------------------------------------------------

def _write_atomic(path: str, payload) -> None:
    """Write text (or call ``payload(tmp_path)``) and rename into place."""
    if path == "-":
        sys.stdout.write(payload)
        sys.stdout.flush()
        return
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=f".{target.name}.", suffix=target.suffix)
    try:
        if callable(payload):
            os.close(fd)
            payload(tmp)
        else:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(payload)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _summary_stream(*outs):
    """Human-readable summaries go to stderr whenever data is streamed to stdout."""
    return sys.stderr if "-" in outs else sys.stdout


def _require_input(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if path != "-" and not Path(path).is_file():
        raise UsageError(f"{flag}: no such file: {path}")


def _read_text(path) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _load_model(path) -> PowerModel:
    if path in BUILTIN_MODELS:
        return BUILTIN_MODELS[path]()
    try:
        return PowerModel.loads(_read_text(path))
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from None


def _load_trace(path, fmt=None) -> trace_io.Trace:
    text = _read_text(path)
    return trace_io.read_trace(io.StringIO(text), fmt or trace_io.guess_format(path, text))


def _check_model_arg(path):
    if path not in BUILTIN_MODELS:
        _require_input(path, "--model")


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    _check_model_arg(args.model)
    _require_input(args.workloads, "--workloads")
    if not (args.noise_sd >= 0.0) or not math.isfinite(args.noise_sd):
        raise UsageError("--noise-sd must be a finite number >= 0")
    if not 0.0 <= args.outlier_fraction <= 1.0:
        raise UsageError("--outlier-fraction must lie in [0, 1]")

    truth = _load_model(args.model)
    try:
        plan = synth.plan_from_dict(json.loads(_read_text(args.workloads)))
        noise = synth.NoiseSpec(args.noise_sd, args.seed, args.outlier_fraction)
        trace = synth.generate_from_plan(truth, plan, noise)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"workloads: {exc}") from None
    fmt = args.format or trace_io.guess_format(args.out)
    _write_atomic(args.out, trace_io.dumps_trace(trace, fmt))
    log.info("wrote %d samples to %s", len(trace), args.out)
    return EXIT_OK


def format_fit_report(report: regression.FitReport, holdout=None) -> str:
    m = report.model
    lines = [
        f"device                 {m.device.value}",
        f"solver                 {report.metadata['solver']}",
        f"samples                {report.n_samples}",
        f"RMSE                   {report.rmse:.4f} W",
        f"relative error         {report.relative_error_midpoint:.3f} % of midpoint",
    ]
    if holdout is not None:
        lines.append(f"holdout RMSE           {holdout['rmse']:.4f} W ({holdout['n_samples']} samples)")
    if report.metadata.get("rank_deficient"):
        lines.append("warning                rank-deficient design, ridge fallback used")
    if report.metadata.get("intercept_constrained") or report.metadata.get("intercept_clamped"):
        lines.append("note                   intercept held at its non-negative bound")
    lines.append("")
    lines.append(f"{'Intercept':<30} {m.intercept:12.4f}")
    for c in CLASSES:
        lines.append(f"{'Weight of ' + c.label:<30} {m.weight(c):12.4f}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    _require_input(args.trace, "--trace")
    if not 0.0 <= args.holdout < 1.0:
        raise UsageError("--holdout must lie in [0, 1)")

    trace = _load_trace(args.trace, args.trace_format)
    device = Device.parse(args.device) if args.device else trace.device
    if device is not trace.device:
        raise DataError(f"trace holds {trace.device.value} samples but --device is {device.value}")
    d = trace_io.to_design_matrix(trace)

    holdout = None
    train = d
    if args.holdout > 0.0:
        rng = np.random.Generator(np.random.PCG64(args.seed))
        order = rng.permutation(d.n_samples)
        n_test = int(round(args.holdout * d.n_samples))
        if d.n_samples - n_test < d.rows.shape[1] + 1 or n_test < 1:
            raise UsageError("--holdout leaves too few samples on one side of the split")
        train = d.subset(np.sort(order[n_test:]))
        test = d.subset(np.sort(order[:n_test]))
    report = regression.fit(train, args.solver)
    model = report.model
    meta = dict(model.metadata)
    meta["fitted_at"] = _timestamp() if args.stamp else None
    meta["trace_source"] = trace.header.source
    if args.holdout > 0.0:
        holdout = regression.compute_metrics(model, test)
        meta["holdout_fraction"] = args.holdout
        meta["holdout_rmse"] = holdout["rmse"]
    model = PowerModel(model.device, model.gamma, model.intercept, model.sigma, model.n_cores, meta)

    summary = format_fit_report(report, holdout)
    _write_atomic(args.out_model, model.dumps())
    if args.plot:
        _write_atomic(args.plot, lambda tmp: _plot_fit(model, d, tmp))
    _summary_stream(args.out_model).write(summary)
    return EXIT_OK


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.isoformat(timespec="seconds")


def _plot_fit(model, d, path):
    from .plotting import plot_fit

    plot_fit(d.targets, regression.predict_rows(model, d), path,
             title=f"{model.device.value.upper()} model")


def _predictions(args):
    model = _load_model(args.model)
    trace = _load_trace(args.trace, args.trace_format)
    if trace.device is not model.device:
        raise DataError(f"trace device {trace.device.value} does not match model device {model.device.value}")
    predicted = np.array([model.node_power(s.processes) for s in trace.samples])
    residual = trace.measured - predicted
    rmse = math.sqrt(float(np.mean(residual ** 2))) if len(residual) else 0.0
    return model, trace, predicted, residual, rmse


def cmd_predict(args) -> int:
    _check_model_arg(args.model)
    _require_input(args.trace, "--trace")
    model, trace, predicted, residual, rmse = _predictions(args)
    measured = trace.measured

    rows = ["t,measured_w,predicted_w,residual_w"]
    for t, m, p, r in zip(trace.timestamps, measured, predicted, residual):
        rows.append(",".join(format(v, ".17g") for v in (t, m, p, r)))
    _write_atomic(args.out, "\n".join(rows) + "\n")
    if args.plot and len(measured):
        from .plotting import plot_fit

        _write_atomic(args.plot, lambda tmp: plot_fit(measured, predicted, tmp))
    stream = _summary_stream(args.out)
    stream.write(f"RMSE {rmse:.4f} W over {len(measured)} samples")
    if len(measured):
        stream.write(f" ({regression.relative_error_midpoint(rmse, measured):.3f} % of midpoint)")
    stream.write("\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    """Goodness of fit of an existing model on a trace, as JSON."""
    _check_model_arg(args.model)
    _require_input(args.trace, "--trace")
    model, trace, predicted, residual, rmse = _predictions(args)
    if not len(trace):
        raise DataError("cannot evaluate on an empty trace")
    doc = {
        "device": model.device.value,
        "n_samples": len(trace),
        "rmse_w": rmse,
        "relative_error_midpoint_pct": regression.relative_error_midpoint(rmse, trace.measured),
        "max_abs_residual_w": float(np.max(np.abs(residual))),
        "mean_residual_w": float(np.mean(residual)),
    }
    _write_atomic(args.out, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_attribute(args) -> int:
    _check_model_arg(args.model)
    _require_input(args.trace, "--trace")
    model = _load_model(args.model)
    trace = _load_trace(args.trace, args.trace_format)
    report = accounting.attribute_trace(trace, model)
    _write_atomic(args.out, accounting.render_report(report, args.format))
    if args.plot:
        from .plotting import plot_attribution

        _write_atomic(args.plot, lambda tmp: plot_attribution(report, tmp))
    return EXIT_OK


def cmd_classify(args) -> int:
    _require_input(args.listing, "--listing")
    if args.rules is not None:
        _require_input(args.rules, "--rules")
    try:
        rules = taxonomy.load_rules(args.rules) if args.rules else taxonomy.DEFAULT_RULES
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise DataError(f"rules: {exc}") from None
    try:
        text = _read_text(args.listing)
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read listing {args.listing}: {exc}") from None
    device = Device.parse(args.device)
    counts, unknown = taxonomy.count_classes(text, device, rules)
    hist = taxonomy.build_histogram(counts)
    doc = {
        "device": device.value,
        "histogram": hist.as_dict(),
        "counts": {c.value: counts.get(c, 0) for c in CLASSES},
        "unknown_count": unknown,
    }
    _write_atomic(args.out, json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


# -- wiring ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="procpower", description="Per-process power and energy attribution.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", help="generate a synthetic trace from a known model")
    p.add_argument("--model", required=True,
                   help="model file, or @cpu-reference / @gpu-reference")
    p.add_argument("--workloads", required=True, help="workloads JSON document")
    p.add_argument("--noise-sd", type=float, default=0.0, help="Gaussian noise sd [W]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--format", choices=("csv", "json"), help="trace format (default: from --out)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a power model to a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--trace-format", choices=("csv", "json"))
    p.add_argument("--device", choices=("cpu", "gpu"), help="expected trace device")
    p.add_argument("--solver", choices=("nnls", "ols"),
                   help="default: nnls for cpu, ols for gpu")
    p.add_argument("--holdout", type=float, default=0.0, help="fraction held out for validation")
    p.add_argument("--seed", type=int, default=0, help="seed of the holdout split")
    p.add_argument("--stamp", action="store_true", help="record the fit time in the model file")
    p.add_argument("--out-model", required=True)
    p.add_argument("--plot", help="write a predicted-vs-measured figure here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predicted vs measured node power")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--trace-format", choices=("csv", "json"))
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="RMSE and residual summary of a model on a trace")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--trace-format", choices=("csv", "json"))
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attribute", help="per-process power and energy report")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--trace-format", choices=("csv", "json"))
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--out", default="-")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("classify", help="instruction histogram of a disassembly listing")
    p.add_argument("--listing", required=True)
    p.add_argument("--device", choices=("cpu", "gpu"), required=True)
    p.add_argument("--rules", help="rules file overriding the built-in tables")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(name)s: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"procpower {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except regression.NNLSConvergenceError as exc:
        print(f"procpower {args.command}: {exc} (after {exc.iterations} iterations)", file=sys.stderr)
        return EXIT_NUMERIC
    except (regression.FitError, np.linalg.LinAlgError) as exc:
        print(f"procpower {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, trace_io.TraceError, UtilizationError, ValueError, OSError) as exc:
        print(f"procpower {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
