"""Trimmed alternation solver tests."""

import itertools

import numpy as np
import pytest

from trimfit.ilts import (IltsConfig, RankDeficientError, contraction_ratio,
                          ilts_run, least_squares, select_trimmed_set,
                          tau_grid, trimmed_loss, write_trace_csv)
from trimfit.model import CorruptionSpec, Dataset, MixtureSpec, generate_mlrc


def test_selection_breaks_ties_toward_smaller_index():
    # residuals squared are (4, 4, 1) at theta = 0; k = 2 keeps index 2 and
    # the smaller of the tied pair
    ds = Dataset(X=np.array([[1.0], [1.0], [1.0]]), y=np.array([2.0, -2.0, 1.0]))
    sel = select_trimmed_set(ds, np.array([0.0]), 2)
    assert list(sel) == [0, 2]


def test_selection_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(4, 10))
        ds = Dataset(X=rng.standard_normal((n, 2)), y=rng.standard_normal(n))
        theta = rng.standard_normal(2)
        k = int(rng.integers(1, n + 1))
        sel = select_trimmed_set(ds, theta, k)
        best = min(trimmed_loss(ds, theta, np.array(c))
                   for c in itertools.combinations(range(n), k))
        assert trimmed_loss(ds, theta, sel) <= best + 1e-12


def test_selection_rejects_bad_k():
    ds = Dataset(X=np.ones((3, 1)), y=np.zeros(3))
    with pytest.raises(ValueError):
        select_trimmed_set(ds, np.array([0.0]), 0)
    with pytest.raises(ValueError):
        select_trimmed_set(ds, np.array([0.0]), 4)


def test_least_squares_hand_example():
    # points (1, 2) and (2, 6) through the origin: slope (2 + 12) / (1 + 4)
    ds = Dataset(X=np.array([[1.0], [2.0]]), y=np.array([2.0, 6.0]))
    theta = least_squares(ds, np.array([0, 1]))
    assert theta[0] == pytest.approx(2.8, abs=1e-12)


def test_least_squares_matches_normal_equations():
    rng = np.random.default_rng(3)
    ds = Dataset(X=rng.standard_normal((40, 5)), y=rng.standard_normal(40))
    subset = np.arange(25)
    theta = least_squares(ds, subset)
    X_S, y_S = ds.X[subset], ds.y[subset]
    oracle = np.linalg.solve(X_S.T @ X_S, X_S.T @ y_S)
    assert np.linalg.norm(theta - oracle) <= 1e-9
    # stationarity: the residual is orthogonal to the columns
    assert np.linalg.norm(X_S.T @ (X_S @ theta - y_S)) <= 1e-8


def test_least_squares_rank_policies():
    # two identical columns make the design rank 1
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    ds = Dataset(X=X, y=np.array([1.0, 2.0, 3.0]))
    with pytest.raises(RankDeficientError):
        least_squares(ds, np.arange(3), rank_policy="fail")
    theta = least_squares(ds, np.arange(3), rank_policy="min-norm")
    # minimum-norm solution splits the unit slope across both columns
    assert np.allclose(theta, [0.5, 0.5], atol=1e-10)


def one_dim_instance(n=120, seed=5, gamma=0.0):
    spec = MixtureSpec(d=1, m=2, components=[[1.0], [-1.0]], weights=[0.5, 0.5])
    corr = (CorruptionSpec() if gamma == 0 else
            CorruptionSpec(gamma_star=gamma, adversary="oblivious-random", magnitude=2.0))
    return generate_mlrc(spec, corr, n=n, seed=seed)


def test_converges_to_nearer_component():
    ds, truth = one_dim_instance()
    cfg = IltsConfig(tau=0.4, max_rounds=40, tol=1e-12)
    trace = ilts_run(ds, np.array([0.6]), cfg, truth=truth)
    assert trace.converged
    assert abs(trace.final[0] - 1.0) <= 1e-8
    trace = ilts_run(ds, np.array([-0.6]), cfg, truth=truth)
    assert abs(trace.final[0] + 1.0) <= 1e-8


def test_trimmed_loss_never_increases():
    ds, _ = one_dim_instance(n=200, seed=8, gamma=0.1)
    cfg = IltsConfig(tau=0.35, max_rounds=50, tol=0.0)
    trace = ilts_run(ds, np.array([0.3]), cfg)
    losses = trace.trimmed_losses
    for a, b in zip(losses, losses[1:]):
        assert b <= a + 1e-10 * max(1.0, a)


def test_fixed_point_at_truth():
    ds, truth = one_dim_instance()
    cfg = IltsConfig(tau=0.4, max_rounds=10, tol=1e-12)
    trace = ilts_run(ds, truth.theta_star[:, 0].copy(), cfg, truth=truth)
    assert trace.converged
    assert trace.rounds_used == 1
    assert abs(trace.final[0] - 1.0) <= 1e-12


def test_full_selection_stops_after_one_round():
    # tau = 1 selects every sample, so the first solve is already the fixed
    # point and the repeated-set rule stops the run
    spec = MixtureSpec(d=4, m=1, components=[np.arange(1.0, 5.0)], weights=[1.0])
    ds, _ = generate_mlrc(spec, CorruptionSpec(), n=100, seed=4)
    cfg = IltsConfig(tau=1.0, max_rounds=25, tol=0.0)
    trace = ilts_run(ds, np.zeros(4), cfg)
    assert trace.converged
    assert trace.rounds_used == 1
    assert np.allclose(trace.final, np.arange(1.0, 5.0), atol=1e-10)


def test_final_iterate_is_coordinatewise_local_minimum():
    ds, _ = one_dim_instance(n=60, seed=12, gamma=0.1)
    cfg = IltsConfig(tau=0.4, max_rounds=50, tol=1e-13)
    trace = ilts_run(ds, np.array([0.45]), cfg)
    k = len(trace.selected_sets[-1])

    def best_loss(theta):
        return trimmed_loss(ds, theta, select_trimmed_set(ds, theta, k))

    base = best_loss(trace.final)
    for delta in (1e-4, -1e-4):
        perturbed = trace.final + np.array([delta])
        assert best_loss(perturbed) >= base - 1e-10


def test_solver_validates_inputs():
    ds, _ = one_dim_instance()
    with pytest.raises(ValueError, match="tau"):
        IltsConfig(tau=0.0)
    with pytest.raises(ValueError, match="max_rounds"):
        IltsConfig(tau=0.5, max_rounds=0)
    cfg = IltsConfig(tau=0.5)
    with pytest.raises(ValueError, match="length-1"):
        ilts_run(ds, np.zeros(2), cfg)
    # selection smaller than d cannot be solved exactly under 'fail'
    wide = Dataset(X=np.eye(6), y=np.zeros(6))
    with pytest.raises(ValueError, match="< d"):
        ilts_run(wide, np.zeros(6), IltsConfig(tau=0.5))


def test_trace_shapes_and_distances():
    ds, truth = one_dim_instance()
    cfg = IltsConfig(tau=0.4, max_rounds=30, tol=1e-12)
    trace = ilts_run(ds, np.array([0.6]), cfg, truth=truth)
    r = trace.rounds_used
    assert trace.iterates.shape == (r + 1, 1)
    assert len(trace.selected_sets) == r + 1
    assert trace.trimmed_losses.shape == (r + 1,)
    assert trace.step_norms.shape == (r,)
    assert trace.dist_to_nearest.shape == (r + 1,)
    assert trace.dist_to_nearest[0] == pytest.approx(0.4)
    trace_no_truth = ilts_run(ds, np.array([0.6]), cfg)
    assert trace_no_truth.dist_to_nearest is None


def test_contraction_ratio_skips_tiny_denominators():
    ds, truth = one_dim_instance()
    cfg = IltsConfig(tau=0.4, max_rounds=30, tol=0.0)
    trace = ilts_run(ds, np.array([0.6]), cfg, truth=truth)
    ratios = contraction_ratio(trace, truth, 0)
    # once the iterate hits the component exactly the remaining rounds are
    # dropped rather than dividing by ~0
    assert len(ratios) < trace.rounds_used + 1
    assert all(r < 1.0 for r in ratios[:2])
    with pytest.raises(ValueError):
        contraction_ratio(trace, truth, 5)


def test_tau_grid_geometric():
    grid = tau_grid(c=0.9, floor=0.5)
    assert grid == [1.0, 0.9, 0.81, 0.7290000000000001, 0.6561000000000001,
                    0.5904900000000002, 0.5314410000000002]
    assert all(b == pytest.approx(a * 0.9) for a, b in zip(grid, grid[1:]))
    with pytest.raises(ValueError):
        tau_grid(c=1.0)


def test_trace_csv_layout(tmp_path):
    ds, truth = one_dim_instance()
    cfg = IltsConfig(tau=0.4, max_rounds=30, tol=1e-12)
    trace = ilts_run(ds, np.array([0.6]), cfg, truth=truth)
    path = tmp_path / "run.trace.csv"
    write_trace_csv(trace, str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "round,step_norm,trimmed_loss,dist_to_nearest"
    assert len(lines) == trace.rounds_used + 2
    first = lines[1].split(",")
    assert first[0] == "0" and first[1] == ""
    assert float(first[3]) == pytest.approx(0.4)
