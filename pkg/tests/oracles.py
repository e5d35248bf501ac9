"""Independent reference computations and hypothesis strategies shared by the tests."""

import itertools

import numpy as np
from hypothesis import strategies as st

from procpower.model import ProcessSample
from procpower.taxonomy import N_CLASSES, InstructionHistogram


def enumerate_nnls(A, b):
    """Exact NNLS by trying every support set.

    The optimum is the unconstrained least-squares solution on its own
    support, so the best feasible candidate over all supports is optimal.
    Only usable for a handful of columns.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    best_x, best_obj = np.zeros(n), float(b @ b)
    for k in range(1, n + 1):
        for support in itertools.combinations(range(n), k):
            cols = list(support)
            sol = np.linalg.lstsq(A[:, cols], b, rcond=None)[0]
            if np.any(sol < 0):
                continue
            x = np.zeros(n)
            x[cols] = sol
            r = b - A @ x
            obj = float(r @ r)
            if obj < best_obj:
                best_x, best_obj = x, obj
    return best_x, best_obj


def projected_gradient_nnls(A, b, iterations=200_000):
    """Plain projected gradient descent with a 1/L step."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    G = A.T @ A
    c = A.T @ b
    step = 1.0 / np.linalg.eigvalsh(G).max()
    x = np.zeros(A.shape[1])
    for _ in range(iterations):
        x_new = np.maximum(x - step * (G @ x - c), 0.0)
        if np.max(np.abs(x_new - x)) < 1e-15:
            x = x_new
            break
        x = x_new
    r = b - A @ x
    return x, float(r @ r)


def with_intercept(X):
    X = np.asarray(X, dtype=float)
    return np.hstack([X, np.ones((X.shape[0], 1))])


@st.composite
def histograms(draw, allow_idle=True):
    if allow_idle and draw(st.integers(0, 9)) == 0:
        return InstructionHistogram.idle()
    raw = draw(st.lists(st.integers(0, 1000), min_size=N_CLASSES, max_size=N_CLASSES)
               .filter(lambda xs: sum(xs) > 0))
    total = sum(raw)
    return InstructionHistogram(tuple(x / total for x in raw))


def process_samples(max_w, pid_prefix="p"):
    return st.builds(
        ProcessSample,
        pid=st.integers(0, 10_000).map(lambda i: f"{pid_prefix}{i}"),
        w=st.floats(0.0, max_w, allow_nan=False),
        h=histograms(),
    )
