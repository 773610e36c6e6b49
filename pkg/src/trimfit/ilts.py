"""Iterative least trimmed squares.

The solver alternates two half-steps from a starting point theta_0: select
the floor(tau * n) samples with smallest squared residuals under the current
iterate (ties broken toward the smaller sample index), then solve exact least
squares on the selected set. The trimmed loss a(theta, S), the sum of squared
residuals over S, never increases across the alternation, and the iteration
stops when the step norm falls to tol or the selected set repeats (a repeated
set makes the next iterate identical, hence a fixed point).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .model import Dataset, GroundTruth
from .util import check_finite, floor_count, fmt17

# Relative cutoff under which singular values count as zero when deciding
# rank deficiency.
RANK_RCOND = 1e-10

RANK_POLICIES = ("fail", "min-norm")


class RankDeficientError(RuntimeError):
    """Selected design matrix is rank deficient under rank_policy='fail'."""


@dataclass(frozen=True)
class IltsConfig:
    tau: float
    max_rounds: int = 50
    tol: float = 1e-10
    rank_policy: str = "fail"

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.rank_policy not in RANK_POLICIES:
            raise ValueError(f"rank_policy must be one of {RANK_POLICIES}")


@dataclass(frozen=True)
class SolverTrace:
    """Complete record of one solver run.

    iterates has rounds_used + 1 rows (theta_0 through the final iterate).
    selected_sets[t] and trimmed_losses[t] describe the trimmed selection at
    iterate t, including the final iterate, so both have rounds_used + 1
    entries while step_norms has rounds_used. dist_to_nearest (distance from
    each iterate to the nearest true component) is present only when ground
    truth was supplied. inner_steps is present only for gradient-descent runs
    and holds the inner step count that produced each post-start iterate.
    """

    iterates: np.ndarray
    selected_sets: tuple
    trimmed_losses: np.ndarray
    step_norms: np.ndarray
    rounds_used: int
    converged: bool
    dist_to_nearest: np.ndarray | None = None
    inner_steps: tuple | None = None

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def select_trimmed_set(dataset: Dataset, theta: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest squared residuals, ties toward smaller index.

    Returned indices are sorted ascending.
    """
    n = dataset.n
    if not 1 <= k <= n:
        raise ValueError(f"k = {k} must lie in [1, {n}]")
    theta = np.asarray(theta, dtype=float)
    check_finite(theta, "theta")
    res2 = np.square(dataset.y - dataset.X @ theta)
    order = np.argsort(res2, kind="stable")
    return np.sort(order[:k])


def trimmed_loss(dataset: Dataset, theta: np.ndarray, subset: np.ndarray) -> float:
    """Sum of squared residuals over the given index subset."""
    theta = np.asarray(theta, dtype=float)
    res = dataset.y[subset] - dataset.X[subset] @ theta
    return float(res @ res)


def least_squares(dataset: Dataset, subset: np.ndarray, rank_policy: str = "fail") -> np.ndarray:
    """Exact least squares on the selected rows.

    Solved through an orthogonal factorization, never the normal equations.
    Under rank_policy='fail' a rank-deficient selection raises; under
    'min-norm' the minimum-norm solution is returned, with singular values
    below RANK_RCOND times the largest treated as zero.
    """
    if rank_policy not in RANK_POLICIES:
        raise ValueError(f"rank_policy must be one of {RANK_POLICIES}")
    subset = np.asarray(subset)
    if subset.size == 0:
        raise ValueError("empty selection")
    X_S = dataset.X[subset]
    y_S = dataset.y[subset]
    theta, _, rank, _ = np.linalg.lstsq(X_S, y_S, rcond=RANK_RCOND)
    if rank < dataset.d and rank_policy == "fail":
        raise RankDeficientError(
            f"selected design has rank {rank} < d = {dataset.d}")
    return theta


def _dist_to_nearest(theta: np.ndarray, theta_star: np.ndarray) -> float:
    return float(np.min(np.linalg.norm(theta_star - theta[:, None], axis=0)))


def ilts_run(dataset: Dataset, theta0: np.ndarray, config: IltsConfig,
             truth: GroundTruth | None = None) -> SolverTrace:
    """Run the trimmed alternation from theta0."""
    n = dataset.n
    k = floor_count(config.tau * n)
    if k < 1:
        raise ValueError(f"floor(tau * n) = {k}; no samples would be selected")
    if config.rank_policy == "fail" and k < dataset.d:
        raise ValueError(
            f"floor(tau * n) = {k} < d = {dataset.d} cannot be solved under rank_policy='fail'")
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
    converged = False

    for _ in range(config.max_rounds):
        theta_next = least_squares(dataset, subset, config.rank_policy)
        step = float(np.linalg.norm(theta_next - theta))
        subset_next = select_trimmed_set(dataset, theta_next, k)
        iterates.append(theta_next)
        selected.append(subset_next)
        losses.append(trimmed_loss(dataset, theta_next, subset_next))
        steps.append(step)
        if dists is not None:
            dists.append(_dist_to_nearest(theta_next, theta_star))
        same_set = np.array_equal(subset_next, subset)
        theta, subset = theta_next, subset_next
        if step <= config.tol or same_set:
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
    )


def contraction_ratio(trace: SolverTrace, truth: GroundTruth, j: int) -> list[float]:
    """Per-round distance ratios to component j.

    Entry t is dist(theta_{t+1}) / dist(theta_t); rounds whose denominator
    falls below 1e-14 are omitted. Fewer than two iterates give [].
    """
    if not 0 <= j < truth.m:
        raise ValueError(f"component index {j} out of range")
    target = truth.theta_star[:, j]
    dists = np.linalg.norm(trace.iterates - target, axis=1)
    ratios = []
    for t in range(len(dists) - 1):
        if dists[t] >= 1e-14:
            ratios.append(float(dists[t + 1] / dists[t]))
    return ratios


def tau_grid(c: float = 0.9, floor: float = 0.05) -> list[float]:
    """Geometric trimming-fraction grid 1, c, c^2, ... down to floor."""
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    if not 0 < floor < 1:
        raise ValueError("floor must lie in (0, 1)")
    grid = []
    v = 1.0
    while v >= floor:
        grid.append(v)
        v *= c
    return grid


def write_trace_csv(trace: SolverTrace, path: str) -> None:
    """Per-round trace table.

    Row t describes iterate t; step_norm is the move into that iterate and is
    blank on the starting row, as is inner_steps when recorded.
    """
    cols = ["round", "step_norm", "trimmed_loss"]
    with_dist = trace.dist_to_nearest is not None
    with_inner = trace.inner_steps is not None
    cols.append("dist_to_nearest")
    if with_inner:
        cols.append("inner_steps")
    lines = [",".join(cols)]
    for t in range(trace.rounds_used + 1):
        row = [str(t)]
        row.append("" if t == 0 else fmt17(trace.step_norms[t - 1]))
        row.append(fmt17(trace.trimmed_losses[t]))
        row.append(fmt17(trace.dist_to_nearest[t]) if with_dist else "")
        if with_inner:
            row.append("" if t == 0 else str(trace.inner_steps[t - 1]))
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def trace_summary(trace: SolverTrace, config) -> dict:
    """JSON-shaped run summary with the configuration echoed back."""
    summary = {
        "final_theta": [float(v) for v in trace.final],
        "rounds_used": trace.rounds_used,
        "converged": trace.converged,
        "final_step_norm": float(trace.step_norms[-1]) if trace.rounds_used else None,
        "final_trimmed_loss": float(trace.trimmed_losses[-1]),
        "config": asdict(config),
    }
    if trace.dist_to_nearest is not None:
        summary["final_dist_to_nearest"] = float(trace.dist_to_nearest[-1])
    if trace.inner_steps is not None:
        summary["inner_steps"] = [int(v) for v in trace.inner_steps]
    return summary


def write_trace_summary(trace: SolverTrace, config, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(trace_summary(trace, config), fh, indent=1)
        fh.write("\n")
