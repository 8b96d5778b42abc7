"""Analytic linear ODE solutions and the weighted multi-start trajectory.

A patient's latent dynamics follow d/dt mu(t) = A mu(t) + c with constant,
patient-specific A and c. Solving this from every encoded visit value as an
initial condition gives a family of candidate trajectories; their
inverse-variance weighted combination is the single smooth estimate used
throughout training and evaluation. Solution variance at a time point is
estimated from the spread of solutions started at visits strictly between
the initial time and the evaluation time, falling back to 1 per dimension
when fewer than two such intermediates exist.

Two evaluation paths exist by design: a plain-array path using the
closed-form 2x2 matrix exponential (evaluation and reporting), and a tape
path built from truncated-series primitives (training), so gradients flow
through every solution while reported values agree to series accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from latentalign.errors import NumericError
from latentalign.numerics import tape
from latentalign.numerics.tape import Var

# below this |det A| the inverse-free form takes over
SINGULAR_DET_THRESHOLD = 1e-8

# sample variances below this floor are treated as ties to keep weights finite
VARIANCE_FLOOR = 1e-12

_SERIES_TERMS = 30


@dataclass
class OdeParams:
    """System matrix and offset of one patient's latent linear dynamics."""

    a: np.ndarray
    c: np.ndarray
    homogeneous: bool = False

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        d = self.a.shape[0]
        if self.a.shape != (d, d) or self.c.shape != (d,):
            raise ValueError(
                f"inconsistent shapes: A {self.a.shape}, c {self.c.shape}")
        if self.homogeneous:
            self.c = np.zeros(d)

    @property
    def dim(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class InitialCondition:
    """One encoded visit used as a solution start: mu(time) = value."""

    time: float
    value: np.ndarray
    source: str  # "R" or "S"

    def __post_init__(self):
        if self.source not in ("R", "S"):
            raise ValueError(f"source must be 'R' or 'S', got {self.source!r}")
        if not np.isfinite(self.time):
            raise ValueError("initial-condition time must be finite")


@dataclass
class TrajectoryEstimate:
    """Combined trajectory values plus the weights that produced them."""

    times: np.ndarray          # (T,)
    values: np.ndarray         # (T, d)
    weights: np.ndarray        # (T, K, d), nonnegative, sums to 1 over K

    def at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if idx.size == 0:
            raise KeyError(f"trajectory was not evaluated at t={t}")
        return self.values[idx[0]]


# -- matrix exponential ----------------------------------------------------

def _expm_2x2(m: np.ndarray) -> np.ndarray:
    """Closed form via the characteristic polynomial.

    With h = tr(M)/2 and q = det(M - h I) = -((a-d)^2/4 + bc), the
    eigenvalues are h +- sqrt(-q); exp(M) = e^h (f(D) I + g(D) (M - h I))
    where D = -q and f, g are the entire functions cosh(sqrt(D)) and
    sinh(sqrt(D))/sqrt(D), evaluated by series near D = 0 (repeated roots).
    """
    h = 0.5 * (m[0, 0] + m[1, 1])
    n = m - h * np.eye(2)
    disc = 0.25 * (m[0, 0] - m[1, 1]) ** 2 + m[0, 1] * m[1, 0]
    if disc > 1e-12:
        s = np.sqrt(disc)
        f = np.cosh(s)
        g = np.sinh(s) / s
    elif disc < -1e-12:
        s = np.sqrt(-disc)
        f = np.cos(s)
        g = np.sin(s) / s
    else:
        f = 1.0 + disc / 2.0 + disc * disc / 24.0
        g = 1.0 + disc / 6.0 + disc * disc / 120.0
    out = np.exp(h) * (f * np.eye(2) + g * n)
    if not np.all(np.isfinite(out)):
        raise NumericError("matrix_exp", f"norm {np.abs(m).max():.3g}")
    return out


def _expm_series(m: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring with a truncated Taylor series, any dimension."""
    norm = float(np.abs(m).sum(axis=-1).max())
    s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    b = m / (2.0 ** s)
    acc = np.eye(m.shape[0]) + b
    term = b.copy()
    for n in range(2, _SERIES_TERMS + 1):
        term = term @ b / n
        acc = acc + term
    for _ in range(s):
        acc = acc @ acc
    if not np.all(np.isfinite(acc)):
        raise NumericError("matrix_exp", f"norm {norm:.3g}")
    return acc


def matrix_exp(m: np.ndarray) -> np.ndarray:
    """exp(M) for a square matrix; closed form for d=2, series otherwise."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"matrix_exp expects a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix_exp", "non-finite input")
    if m.shape[0] == 2:
        return _expm_2x2(m)
    return _expm_series(m)


def phi1(m: np.ndarray) -> np.ndarray:
    """phi1(M) = sum_n M^n / (n+1)!, so that exp(M) = I + M phi1(M).

    Computed with the same scaling as the exponential and the doubling
    identity phi1(2B) = phi1(B) (exp(B) + I) / 2, exact at M = 0.
    """
    m = np.asarray(m, dtype=np.float64)
    d = m.shape[0]
    norm = float(np.abs(m).sum(axis=-1).max())
    s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    b = m / (2.0 ** s)
    eye = np.eye(d)
    e_acc = eye + b
    p_acc = eye + b / 2.0
    e_term = b.copy()
    p_term = b / 2.0
    for n in range(2, _SERIES_TERMS + 1):
        e_term = e_term @ b / n
        p_term = p_term @ b / (n + 1)
        e_acc = e_acc + e_term
        p_acc = p_acc + p_term
    for _ in range(s):
        p_acc = p_acc @ (e_acc + eye) / 2.0
        e_acc = e_acc @ e_acc
    if not np.all(np.isfinite(p_acc)):
        raise NumericError("phi1", f"norm {norm:.3g}")
    return p_acc


# -- single-start solutions --------------------------------------------------

def solve_ivp(params: OdeParams, init: InitialCondition, t: float) -> np.ndarray:
    """Analytic solution value mu(t) started from mu(init.time) = init.value.

    Invertible A uses exp(A dt)(A^-1 c + mu0) - A^-1 c; A with |det| below
    the threshold (including A = 0) uses the inverse-free
    exp(A dt) mu0 + dt phi1(A dt) c, which is exact for every A and reduces
    to c dt + mu0 at A = 0.
    """
    dt = t - init.time
    a, c = params.a, params.c
    mu0 = np.asarray(init.value, dtype=np.float64)
    if abs(np.linalg.det(a)) >= SINGULAR_DET_THRESHOLD:
        u = np.linalg.solve(a, c)
        return matrix_exp(a * dt) @ (u + mu0) - u
    return matrix_exp(a * dt) @ mu0 + dt * (phi1(a * dt) @ c)


def solve_ivp_singular_form(params: OdeParams, init: InitialCondition,
                            t: float) -> np.ndarray:
    """The inverse-free branch regardless of det(A); used for branch checks."""
    dt = t - init.time
    mu0 = np.asarray(init.value, dtype=np.float64)
    return matrix_exp(params.a * dt) @ mu0 + dt * (phi1(params.a * dt) @ params.c)


# -- variance estimation and weighting ---------------------------------------

def estimate_solution_variance(solutions_at_t: list[np.ndarray] | np.ndarray,
                               dim: int | None = None) -> np.ndarray:
    """Per-dimension unbiased sample variance; 1.0 per dim below two entries."""
    arr = np.asarray(solutions_at_t, dtype=np.float64)
    if arr.size == 0:
        if dim is None:
            raise ValueError("dim required for an empty solution list")
        return np.ones(dim)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 2:
        return np.ones(arr.shape[1])
    return np.var(arr, axis=0, ddof=1)


def inverse_variance_combine(solutions: np.ndarray,
                             variances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted average of rows of `solutions` with weights 1/variance.

    Variances are floored to keep weights finite when solutions coincide;
    ties then degrade to an unweighted average. Returns (combined (d,),
    weights (n, d)) with weights normalized per dimension.
    """
    solutions = np.asarray(solutions, dtype=np.float64)
    variances = np.maximum(np.asarray(variances, dtype=np.float64), VARIANCE_FLOOR)
    w = 1.0 / variances
    w = w / w.sum(axis=0, keepdims=True)
    return (w * solutions).sum(axis=0), w


def _intermediate_mask(init_times: np.ndarray, eval_times: np.ndarray) -> np.ndarray:
    """between[i, j, l]: init l lies strictly between init j and eval time i."""
    lo = np.minimum(init_times[None, :], eval_times[:, None])  # (T, K)
    hi = np.maximum(init_times[None, :], eval_times[:, None])
    t_l = init_times[None, None, :]
    return (t_l > lo[:, :, None]) & (t_l < hi[:, :, None])


def trajectory_weights(init_times: np.ndarray, eval_times: np.ndarray,
                       solutions: np.ndarray) -> np.ndarray:
    """Normalized inverse-variance weights, shape (T, K, d).

    `solutions[i, j]` is the solution started at init j evaluated at
    eval_times[i]. The variance behind weight (i, j) is the sample variance
    over solutions started strictly between init j's time and eval time i;
    with fewer than two intermediates it falls back to 1 per dimension.
    """
    t_eval = np.asarray(eval_times, dtype=np.float64)
    t_init = np.asarray(init_times, dtype=np.float64)
    between = _intermediate_mask(t_init, t_eval)           # (T, K, K)
    counts = between.sum(axis=2)                           # (T, K)
    centered = solutions - solutions.mean(axis=1, keepdims=True)
    sums = np.einsum("ijl,ild->ijd", between, centered)
    sumsq = np.einsum("ijl,ild->ijd", between, centered * centered)
    variances = np.ones_like(solutions)
    enough = counts >= 2
    if np.any(enough):
        n = counts[enough][:, None]
        mean = sums[enough] / n
        var = (sumsq[enough] - n * mean * mean) / (n - 1.0)
        variances[enough] = np.maximum(var, 0.0)
    weights = 1.0 / np.maximum(variances, VARIANCE_FLOOR)
    return weights / weights.sum(axis=1, keepdims=True)


def combined_trajectory(params: OdeParams, inits: list[InitialCondition],
                        eval_times) -> TrajectoryEstimate:
    """Inverse-variance weighted combination of all single-start solutions."""
    if not inits:
        raise ValueError("combined_trajectory requires at least one initial condition")
    eval_times = np.atleast_1d(np.asarray(eval_times, dtype=np.float64))
    if not np.all(np.isfinite(eval_times)):
        raise ValueError("evaluation times must be finite")
    init_times = np.array([ic.time for ic in inits])
    solutions = np.empty((eval_times.size, len(inits), params.dim))
    for j, ic in enumerate(inits):
        for i, t in enumerate(eval_times):
            solutions[i, j] = solve_ivp(params, ic, t)
    weights = trajectory_weights(init_times, eval_times, solutions)
    values = (weights * solutions).sum(axis=1)
    return TrajectoryEstimate(times=eval_times, values=values, weights=weights)


# -- tape path (training) -----------------------------------------------------

_GRAPH_SERIES_TERMS = 14  # truncation after scaling to norm <= 0.5: rem < 1e-16


def _scaling_steps(norm: float) -> int:
    return max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0


def matrix_exp_graph(m: Var) -> Var:
    """exp of a (..., d, d) batch on the tape, series with shared scaling."""
    norm = float(np.abs(m.value).sum(axis=-1).max())
    s = _scaling_steps(norm)
    b = m * (0.5 ** s)
    eye = np.broadcast_to(np.eye(m.value.shape[-1]), m.value.shape).copy()
    acc = tape.add(tape.constant(eye), b)
    term = b
    for n in range(2, _GRAPH_SERIES_TERMS + 1):
        term = (term @ b) * (1.0 / n)
        acc = acc + term
    for _ in range(s):
        acc = acc @ acc
    return acc


def matrix_exp_phi1_graph(m: Var) -> tuple[Var, Var]:
    """(exp(M), phi1(M)) on the tape with shared scaling and doubling."""
    norm = float(np.abs(m.value).sum(axis=-1).max())
    s = _scaling_steps(norm)
    b = m * (0.5 ** s)
    eye = np.broadcast_to(np.eye(m.value.shape[-1]), m.value.shape).copy()
    eye_c = tape.constant(eye)
    e_acc = tape.add(eye_c, b)
    p_acc = tape.add(eye_c, b * 0.5)
    e_term = b
    p_term = b * 0.5
    for n in range(2, _GRAPH_SERIES_TERMS + 1):
        e_term = (e_term @ b) * (1.0 / n)
        p_term = (p_term @ b) * (1.0 / (n + 1))
        e_acc = e_acc + e_term
        p_acc = p_acc + p_term
    for _ in range(s):
        p_acc = (p_acc @ (e_acc + eye_c)) * 0.5
        e_acc = e_acc @ e_acc
    return e_acc, p_acc


def trajectory_graph(a: Var, c: Var | None, init_values: Var,
                     init_times: np.ndarray, eval_times: np.ndarray) -> Var:
    """Combined-trajectory values (T, d) on the tape.

    `init_values` is (K, d); `a` is (d, d); `c` is (d,) or None for the
    homogeneous system. Inverse-variance weights are computed from detached
    solution values and enter the graph as constants: gradients flow through
    the solutions, not through the weight estimation.
    """
    init_times = np.asarray(init_times, dtype=np.float64)
    eval_times = np.asarray(eval_times, dtype=np.float64)
    tt, kk = eval_times.size, init_times.size
    d = init_values.value.shape[1]
    dt = (eval_times[:, None] - init_times[None, :]).reshape(-1, 1, 1)  # (T*K,1,1)
    m = tape.reshape(a, (1, d, d)) * tape.constant(dt)
    mu0 = tape.reshape(tape.gather_rows(init_values, np.tile(np.arange(kk), tt)),
                       (tt * kk, d, 1))
    if c is None:
        e = matrix_exp_graph(m)
        sols = tape.reshape(e @ mu0, (tt, kk, d))
    else:
        e, p = matrix_exp_phi1_graph(m)
        c_col = tape.reshape(c, (1, d, 1))
        sols = tape.reshape((e @ mu0) + (p @ c_col) * tape.constant(dt),
                            (tt, kk, d))
    weights = trajectory_weights(init_times, eval_times, sols.value)
    return tape.vsum(sols * tape.constant(weights), axis=1)
