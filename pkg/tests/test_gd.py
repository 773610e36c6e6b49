"""Gradient-descent variant tests."""

import math

import numpy as np
import pytest

from trimfit.gd import (DivergenceError, GdConfig, gd_ilts_run, gd_inner_loop,
                        largest_curvature, stopping_steps)
from trimfit.ilts import IltsConfig, ilts_run, least_squares
from trimfit.model import CorruptionSpec, Dataset, MixtureSpec, generate_mlrc


def test_stopping_steps_frozen_value():
    # w = 10, lam = 0.01: ceil(ln(10 / (0.01 * ln 100))) = ceil(5.3806...) = 6
    assert stopping_steps(0.01, 10.0) == 6


def test_stopping_steps_matches_formula():
    rng = np.random.default_rng(14)
    for _ in range(100):
        lam = float(rng.uniform(1e-6, 0.999))
        w = float(rng.uniform(0.1, 50.0))
        c_u = float(rng.uniform(0.2, 3.0))
        expect = max(1, math.ceil(c_u * math.log(w / (lam * math.log(1.0 / lam)))))
        assert stopping_steps(lam, w, c_u) == expect


def test_stopping_steps_nonincreasing_below_inverse_e():
    grid = np.linspace(1e-4, 1.0 / math.e, 50)
    counts = [stopping_steps(float(lam), 10.0) for lam in grid]
    for a, b in zip(counts, counts[1:]):
        assert a >= b


def test_stopping_steps_validation():
    with pytest.raises(ValueError):
        stopping_steps(0.0, 10.0)
    with pytest.raises(ValueError):
        stopping_steps(1.0, 10.0)
    with pytest.raises(ValueError):
        stopping_steps(0.5, 0.0)
    with pytest.raises(ValueError):
        stopping_steps(0.5, 10.0, c_u=0.0)


def test_single_gradient_step_hand_example():
    # X = (1, 1)^T, y = (1, 1), theta = 0, eta = 0.5: the mean gradient is
    # -1, so one step lands on 0.5
    ds = Dataset(X=np.array([[1.0], [1.0]]), y=np.array([1.0, 1.0]))
    theta = gd_inner_loop(ds, np.arange(2), np.array([0.0]), eta=0.5, m_steps=1)
    assert theta[0] == pytest.approx(0.5, abs=1e-15)


def test_inner_loop_fixed_at_least_squares_solution():
    rng = np.random.default_rng(6)
    ds = Dataset(X=rng.standard_normal((30, 3)), y=rng.standard_normal(30))
    subset = np.arange(30)
    star = least_squares(ds, subset)
    moved = gd_inner_loop(ds, subset, star, eta=0.1, m_steps=50)
    assert np.linalg.norm(moved - star) <= 1e-12


def test_inner_loop_descends_at_safe_step_size():
    rng = np.random.default_rng(7)
    ds = Dataset(X=rng.standard_normal((50, 4)), y=rng.standard_normal(50))
    subset = np.arange(50)
    eta = 1.0 / largest_curvature(ds, subset)

    def mean_loss(theta):
        res = ds.y - ds.X @ theta
        return float(res @ res) / 50

    theta = rng.standard_normal(4)
    prev = mean_loss(theta)
    for _ in range(20):
        theta = gd_inner_loop(ds, subset, theta, eta=eta, m_steps=1)
        cur = mean_loss(theta)
        assert cur <= prev + 1e-12
        prev = cur


def test_inner_loop_divergence_guard():
    ds = Dataset(X=np.array([[10.0], [10.0]]), y=np.array([1.0, 1.0]))
    with pytest.raises(DivergenceError):
        gd_inner_loop(ds, np.arange(2), np.array([1.0]), eta=10.0, m_steps=200)


def test_largest_curvature_matches_eigenvalue():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((80, 5))
    ds = Dataset(X=X, y=np.zeros(80))
    est = largest_curvature(ds, np.arange(80), iterations=200)
    exact = float(np.linalg.eigvalsh(X.T @ X / 80).max())
    assert est == pytest.approx(exact, rel=1e-6)


def two_component_instance(seed=2):
    spec = MixtureSpec(d=3, m=2,
                       components=[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
                       weights=[0.5, 0.5])
    corr = CorruptionSpec(gamma_star=0.05, adversary="oblivious-random", magnitude=2.0)
    return generate_mlrc(spec, corr, n=400, seed=seed)


def test_matches_exact_alternation_with_many_inner_steps():
    ds, truth = two_component_instance()
    theta0 = np.array([0.6, 0.0, 0.0])
    exact = ilts_run(ds, theta0, IltsConfig(tau=0.4, max_rounds=30, tol=1e-11),
                     truth=truth)
    gd = gd_ilts_run(ds, theta0, GdConfig(tau=0.4, m_steps=500, max_rounds=30,
                                          tol=1e-11), truth=truth)
    assert gd.converged
    tol = 1e-4 * (1.0 + np.linalg.norm(exact.final))
    assert np.linalg.norm(gd.final - exact.final) <= tol


def test_gd_trace_records_inner_steps():
    ds, truth = two_component_instance()
    cfg = GdConfig(tau=0.4, m_steps=50, max_rounds=20, tol=1e-9)
    trace = gd_ilts_run(ds, np.array([0.6, 0.0, 0.0]), cfg, truth=truth)
    assert trace.inner_steps is not None
    assert len(trace.inner_steps) == trace.rounds_used
    assert all(m == 50 for m in trace.inner_steps)


def test_adaptive_schedule_takes_more_steps_as_movement_shrinks():
    ds, truth = two_component_instance()
    cfg = GdConfig(tau=0.4, schedule="adaptive", w=10.0, max_rounds=40, tol=1e-10)
    trace = gd_ilts_run(ds, np.array([0.6, 0.0, 0.0]), cfg, truth=truth)
    assert trace.converged
    first = trace.inner_steps[0]
    # the opening round uses the cheapest count; later rounds never go below
    # it and the stalled final rounds use strictly more
    assert first == stopping_steps(1.0 / math.e, 10.0)
    assert all(m >= first for m in trace.inner_steps)
    assert trace.inner_steps[-1] > first


def test_gd_config_validation():
    with pytest.raises(ValueError):
        GdConfig(tau=0.4, eta=-1.0)
    with pytest.raises(ValueError):
        GdConfig(tau=0.4, schedule="linear")
    with pytest.raises(ValueError):
        GdConfig(tau=0.4, m_steps=0)
    with pytest.raises(ValueError):
        GdConfig(tau=1.5)
