"""Gradient-descent variant of the trimmed alternation.

Each outer round keeps the trimmed selection rule but replaces the exact
least-squares solve with a fixed number of plain gradient steps on the mean
squared loss of the selected rows. The per-round step count either stays
constant or follows an adaptive rule that takes more inner steps as the
outer iterate stops moving.
"""

from __future__ import annotations

import math

from dataclasses import dataclass

import numpy as np

from .ilts import SolverTrace, select_trimmed_set, trimmed_loss, _dist_to_nearest
from .model import Dataset, GroundTruth
from .util import check_finite, floor_count

SCHEDULES = ("fixed", "adaptive")

# Power-iteration budget for the default step size 1 / L_hat, where L_hat
# estimates the largest eigenvalue of the selected rows' mean Gram matrix.
POWER_ITERATIONS = 20


class DivergenceError(RuntimeError):
    """Inner gradient loop left the trust region."""


@dataclass(frozen=True)
class GdConfig:
    """Configuration for the gradient-descent variant.

    eta = None selects the step size 1 / L_hat per round via power iteration.
    schedule 'fixed' runs m_steps inner steps every round; 'adaptive' derives
    the count from the relative outer movement with weight w and scale c_u.
    """

    tau: float
    eta: float | None = None
    schedule: str = "fixed"
    m_steps: int = 100
    w: float = 10.0
    c_u: float = 1.0
    max_rounds: int = 50
    tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive when given")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.schedule == "fixed" and self.m_steps < 1:
            raise ValueError("m_steps must be at least 1")
        if self.w <= 0:
            raise ValueError("w must be positive")
        if self.c_u <= 0:
            raise ValueError("c_u must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


def stopping_steps(lam: float, w: float, c_u: float = 1.0) -> int:
    """Inner step count u = max(1, ceil(c_u * ln(w / (lam * ln(1 / lam))))).

    lam must lie strictly inside (0, 1). The count is nonincreasing in lam on
    (0, 1/e), so a smaller relative error budget buys more inner steps.
    """
    if not 0 < lam < 1:
        raise ValueError("lam must lie strictly in (0, 1)")
    if w <= 0:
        raise ValueError("w must be positive")
    if c_u <= 0:
        raise ValueError("c_u must be positive")
    inner = w / (lam * math.log(1.0 / lam))
    return max(1, math.ceil(c_u * math.log(inner)))


def largest_curvature(dataset: Dataset, subset: np.ndarray,
                      iterations: int = POWER_ITERATIONS) -> float:
    """Power-iteration estimate of the top eigenvalue of X_S^T X_S / |S|."""
    X_S = dataset.X[np.asarray(subset)]
    size = X_S.shape[0]
    if size == 0:
        raise ValueError("empty selection")
    v = np.ones(dataset.d) / math.sqrt(dataset.d)
    est = 0.0
    for _ in range(iterations):
        w = X_S.T @ (X_S @ v) / size
        est = float(np.linalg.norm(w))
        if est == 0.0:
            raise ValueError("selected rows are all zero; curvature undefined")
        v = w / est
    return est


def gd_inner_loop(dataset: Dataset, subset: np.ndarray, theta_start: np.ndarray,
                  eta: float, m_steps: int) -> np.ndarray:
    """Run m_steps gradient steps on the mean squared loss of the subset.

    Each step moves by eta * X_S^T (X_S theta - y_S) / |S|. The loop aborts
    with DivergenceError once the iterate norm exceeds
    1e8 * (1 + ||theta_start||).
    """
    if m_steps < 1:
        raise ValueError("m_steps must be at least 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("empty selection")
    theta = np.asarray(theta_start, dtype=float).copy()
    check_finite(theta, "theta_start")
    X_S = dataset.X[subset]
    y_S = dataset.y[subset]
    size = subset.size
    limit = 1e8 * (1.0 + float(np.linalg.norm(theta)))
    for _ in range(m_steps):
        theta = theta - eta * (X_S.T @ (X_S @ theta - y_S)) / size
        if np.linalg.norm(theta) > limit:
            raise DivergenceError(
                f"iterate norm exceeded {limit:.3e}; reduce eta")
    return theta


# Round-0 relative movement is unknown, so the adaptive schedule starts at
# the argmax of lam * ln(1/lam), where the step count is smallest.
_LAMBDA_START = 1.0 / math.e


def _adaptive_lambda(theta: np.ndarray, theta_prev: np.ndarray | None, n: int) -> float:
    if theta_prev is None:
        return _LAMBDA_START
    ref = float(np.linalg.norm(theta_prev))
    if ref == 0.0:
        return _LAMBDA_START
    rel = float(np.linalg.norm(theta - theta_prev)) / ref
    floor = math.log(n) / n
    # Clamp into [log(n)/n, 1/e]: the floor mirrors the smallest resolvable
    # relative error, the cap keeps early wild rounds at the cheap end.
    return min(max(rel, floor), _LAMBDA_START)


def gd_ilts_run(dataset: Dataset, theta0: np.ndarray, config: GdConfig,
                truth: GroundTruth | None = None) -> SolverTrace:
    """Trimmed alternation with gradient-descent inner solves.

    Unlike the exact alternation, a repeated selected set is not a fixed
    point here, so only the step-norm test stops the outer loop early.
    """
    n = dataset.n
    k = floor_count(config.tau * n)
    if k < 1:
        raise ValueError(f"floor(tau * n) = {k}; no samples would be selected")
    theta = np.asarray(theta0, dtype=float)
    if theta.shape != (dataset.d,):
        raise ValueError(f"theta0 must be a length-{dataset.d} vector")
    check_finite(theta, "theta0")

    theta_star = truth.theta_star if truth is not None else None
    iterates = [theta.copy()]
    subset = select_trimmed_set(dataset, theta, k)
    selected = [subset]
    losses = [trimmed_loss(dataset, theta, subset)]
    dists = [_dist_to_nearest(theta, theta_star)] if theta_star is not None else None
    steps: list[float] = []
    inner_counts: list[int] = []
    theta_prev: np.ndarray | None = None
    converged = False

    for _ in range(config.max_rounds):
        if config.schedule == "fixed":
            m_t = config.m_steps
        else:
            lam = _adaptive_lambda(theta, theta_prev, n)
            m_t = stopping_steps(lam, config.w, config.c_u)
        eta_t = config.eta if config.eta is not None else 1.0 / largest_curvature(dataset, subset)
        theta_next = gd_inner_loop(dataset, subset, theta, eta_t, m_t)
        step = float(np.linalg.norm(theta_next - theta))
        subset = select_trimmed_set(dataset, theta_next, k)
        iterates.append(theta_next)
        selected.append(subset)
        losses.append(trimmed_loss(dataset, theta_next, subset))
        steps.append(step)
        inner_counts.append(m_t)
        if dists is not None:
            dists.append(_dist_to_nearest(theta_next, theta_star))
        theta_prev, theta = theta, theta_next
        if step <= config.tol:
            converged = True
            break

    return SolverTrace(
        iterates=np.array(iterates),
        selected_sets=tuple(selected),
        trimmed_losses=np.array(losses),
        step_norms=np.array(steps),
        rounds_used=len(steps),
        converged=converged,
        dist_to_nearest=None if dists is None else np.array(dists),
        inner_steps=tuple(inner_counts),
    )
