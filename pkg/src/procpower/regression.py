"""Least-squares fitting of power models.

CPU models are fitted with non-negative least squares (Lawson-Hanson active
set) so every class weight keeps a physical reading; GPU models use ordinary
least squares.  Both fit an intercept alongside the class weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import PowerModel, default_sigma
from .taxonomy import N_CLASSES, Device


class FitError(RuntimeError):
    pass


class NNLSConvergenceError(FitError):
    """Raised when the active-set loop exceeds its iteration budget."""

    def __init__(self, message, x, iterations):
        super().__init__(message)
        self.x = x
        self.iterations = iterations


@dataclass(frozen=True)
class DesignMatrix:
    """Per-sample class features (rows) against measured power (targets)."""

    rows: np.ndarray
    targets: np.ndarray
    device: Device
    n_cores: "int | None" = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64, ndmin=2)
        targets = np.array(self.targets, dtype=np.float64).reshape(-1)
        if rows.shape[0] != targets.shape[0]:
            raise ValueError(f"{rows.shape[0]} rows but {targets.shape[0]} targets")
        if rows.shape[0] < rows.shape[1] + 1:
            raise ValueError(
                f"need at least {rows.shape[1] + 1} samples for {rows.shape[1]} weights "
                f"plus an intercept, got {rows.shape[0]}"
            )
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(targets))):
            raise ValueError("design matrix contains NaN or Inf")
        rows.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "device", Device.parse(self.device))

    @property
    def n_samples(self) -> int:
        return self.rows.shape[0]

    def subset(self, index) -> "DesignMatrix":
        return DesignMatrix(self.rows[index], self.targets[index], self.device, self.n_cores)


@dataclass
class FitReport:
    model: PowerModel
    rmse: float
    relative_error_midpoint: float
    n_samples: int
    residuals: np.ndarray
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Solvers

def nnls(A, b, maxiter=None):
    """Solve ``min ||A x - b||`` subject to ``x >= 0`` by Lawson-Hanson.

    Parameters
    ----------
    A : array_like, shape (m, n)
    b : array_like, shape (m,)
    maxiter : int, optional
        Budget of least-squares subproblem solves (default ``10 * n``).

    Returns
    -------
    x : ndarray, shape (n,)
    iterations : int

    Raises
    ------
    NNLSConvergenceError
        Carries the last feasible iterate.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if maxiter is None:
        maxiter = 10 * max(n, 1)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    scale = max(1.0, float(np.abs(A).max(initial=0.0))) * max(1.0, float(np.abs(b).max(initial=0.0)))
    tol = 10.0 * np.finfo(float).eps * max(m, n) * scale
    iterations = 0

    # columns whose entry stalled at zero; retried once x moves again
    stalled = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    while True:
        open_ = ~passive & ~stalled
        if not open_.any() or np.max(w[open_]) <= tol:
            break
        candidates = np.where(open_)[0]
        j = candidates[np.argmax(w[candidates])]
        passive[j] = True

        first = True
        while True:
            iterations += 1
            if iterations > maxiter:
                raise NNLSConvergenceError(
                    f"NNLS did not converge within {maxiter} iterations", x.copy(), iterations - 1
                )
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0.0):
                x = z
                stalled[:] = False
                break
            if first and z[j] <= 0.0:
                # rounding made the entering column useless; drop it
                passive[j] = False
                stalled[j] = True
                break
            first = False
            # step back toward x until the first passive coefficient hits zero
            blocking = np.where(passive & (z <= 0.0))[0]
            ratios = x[blocking] / (x[blocking] - z[blocking])
            k = int(np.argmin(ratios))
            x = x + ratios[k] * (z - x)
            x[blocking[k]] = 0.0
            passive &= x > 0.0
            x[~passive] = 0.0
            stalled[:] = False
            if not passive.any():
                break
        w = A.T @ (b - A @ x)
    return x, iterations


def nnls_with_intercept(X, y, maxiter=None):
    """NNLS on the weights with a non-negative intercept.

    The intercept is first solved unconstrained by centering; if it comes out
    negative the problem is re-solved with the intercept as a constrained
    column.

    Returns
    -------
    coef, intercept, info : ndarray, float, dict
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    coef, iterations = nnls(X - x_mean, y - y_mean, maxiter)
    intercept = float(y_mean - x_mean @ coef)
    info = {"iterations": iterations, "intercept_constrained": False}
    if intercept < 0.0:
        aug = np.hstack([X, np.ones((X.shape[0], 1))])
        sol, more = nnls(aug, y, None if maxiter is None else maxiter)
        coef, intercept = sol[:-1], float(sol[-1])
        info = {"iterations": iterations + more, "intercept_constrained": True}
    return coef, intercept, info


def ols_with_intercept(X, y):
    """Ordinary least squares with an unpenalized intercept.

    Full-rank problems go through an SVD least-squares solve.  If ``[X | 1]``
    is rank deficient (a class never exercised, say) a tiny ridge term picks
    the minimum-norm-like solution and ``info["rank_deficient"]`` is set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, n = X.shape
    aug = np.hstack([X, np.ones((m, 1))])
    rank = np.linalg.matrix_rank(aug)
    if rank == n + 1:
        sol = np.linalg.lstsq(aug, y, rcond=None)[0]
        return sol[:-1], float(sol[-1]), {"rank_deficient": False, "rank": int(rank)}

    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    gram = Xc.T @ Xc
    lam = 1e-8 * np.trace(aug.T @ aug) / n
    coef = np.linalg.solve(gram + lam * np.eye(n), Xc.T @ (y - y.mean()))
    intercept = float(y.mean() - x_mean @ coef)
    return coef, intercept, {"rank_deficient": True, "rank": int(rank), "ridge_lambda": float(lam)}


def objective(X, y, coef, intercept) -> float:
    r = np.asarray(y) - (np.asarray(X) @ np.asarray(coef) + intercept)
    return float(r @ r)


# ---------------------------------------------------------------------------
# Metrics and fitting front ends

def relative_error_midpoint(rmse: float, targets) -> float:
    """RMSE as a percentage of the target range midpoint, ``(max + min) / 2``."""
    targets = np.asarray(targets, dtype=np.float64)
    midpoint = (float(targets.max()) + float(targets.min())) / 2.0
    if midpoint <= 0.0:
        return math.nan  # undefined without a positive power range
    return 100.0 * rmse / midpoint


def predict_rows(model: PowerModel, d: DesignMatrix) -> np.ndarray:
    return d.rows @ np.asarray(model.gamma) + model.intercept


def compute_metrics(model: PowerModel, d: DesignMatrix) -> dict:
    residuals = d.targets - predict_rows(model, d)
    rmse = math.sqrt(float(np.mean(residuals ** 2)))
    return {
        "rmse": rmse,
        "relative_error_midpoint": relative_error_midpoint(rmse, d.targets),
        "n_samples": d.n_samples,
        "residuals": residuals,
    }


def _report(d: DesignMatrix, coef, intercept, solver: str, info: dict) -> FitReport:
    if d.rows.shape[1] != N_CLASSES:
        raise ValueError(f"design matrix has {d.rows.shape[1]} columns, models need {N_CLASSES}")
    draft = PowerModel(d.device, tuple(coef), intercept, default_sigma(d.device), n_cores=d.n_cores)
    metrics = compute_metrics(draft, d)
    metadata = {
        "solver": solver,
        "rmse": metrics["rmse"],
        "relative_error_midpoint": metrics["relative_error_midpoint"],
        "n_samples": d.n_samples,
        **info,
    }
    model = PowerModel(draft.device, draft.gamma, draft.intercept, draft.sigma, draft.n_cores, metadata)
    return FitReport(model, metrics["rmse"], metrics["relative_error_midpoint"], d.n_samples,
                     metrics["residuals"], metadata)


def fit_ols(d: DesignMatrix) -> FitReport:
    coef, intercept, info = ols_with_intercept(d.rows, d.targets)
    if intercept < 0.0:
        # a power model cannot have negative static power: refit through the origin
        sol = np.linalg.lstsq(d.rows, d.targets, rcond=None)[0]
        coef, intercept = sol, 0.0
        info = {**info, "intercept_clamped": True}
    return _report(d, coef, intercept, "ols", info)


def fit_nnls(d: DesignMatrix, maxiter=None) -> FitReport:
    coef, intercept, info = nnls_with_intercept(d.rows, d.targets, maxiter)
    return _report(d, coef, intercept, "nnls", info)


def fit(d: DesignMatrix, solver: "str | None" = None) -> FitReport:
    """Fit with the device default solver (NNLS for CPU, OLS for GPU) unless overridden."""
    if solver is None:
        solver = "nnls" if d.device is Device.CPU else "ols"
    if solver == "nnls":
        return fit_nnls(d)
    if solver == "ols":
        return fit_ols(d)
    raise ValueError(f"unknown solver {solver!r}")
