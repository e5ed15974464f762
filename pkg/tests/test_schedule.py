from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from texro.errors import ScheduleError, ShapeMismatch
from texro.schedule import (
    StepPlan,
    adaptive_noise,
    build_schedule,
    ddim_step,
    forward_diffuse,
    resolution_plan,
    schedule_from_betas,
    step_timestep,
)

# Independent oracles computed with a plain Python product loop over the
# default linear ramp (0.00085 -> 0.012, 1000 steps).
ALPHA_BAR_1000 = 0.0015789629305514416
SQRT_RATIO_10_2 = 0.04835301616571345


@pytest.fixture(scope="module")
def sched():
    return build_schedule()


def test_constant_beta_products():
    s = build_schedule(4, 0.1, 0.1, 4)
    np.testing.assert_allclose(s.alpha_bars, [0.9, 0.81, 0.729, 0.6561], rtol=1e-14)


def test_reduced_mapping(sched):
    assert sched.reduced_to_full[9] == 1000
    assert sched.reduced_to_full[4] == 500
    assert sched.alpha_bar(0) == 1.0


def test_default_alpha_bar_final(sched):
    assert sched.alpha_bar(10) < 1e-2
    assert sched.alpha_bar(10) == pytest.approx(ALPHA_BAR_1000, rel=1e-12)


def test_schedule_invariants(sched):
    assert (np.diff(sched.alpha_bars) < 0).all()
    assert all(b > a for a, b in zip(sched.reduced_to_full, sched.reduced_to_full[1:]))


def test_invalid_ranges():
    with pytest.raises(ScheduleError):
        build_schedule(1000, 0.02, 0.01)
    with pytest.raises(ScheduleError):
        build_schedule(1000, 0.0, 0.01)
    with pytest.raises(ScheduleError):
        schedule_from_betas([0.1, 0.1], reduced_to_full=(2, 1))


def test_forward_zero_noise(sched):
    x0 = np.linspace(0, 1, 12).reshape(3, 4)
    out = forward_diffuse(x0, 6, np.zeros_like(x0), sched)
    np.testing.assert_array_equal(out, math.sqrt(sched.alpha_bar(6)) * x0)


def test_forward_limit_is_noise():
    s = build_schedule(1000, 0.05, 0.2, 10)
    eps = np.random.default_rng(0).standard_normal(100)
    out = forward_diffuse(np.ones(100), 10, eps, s)
    np.testing.assert_allclose(out, eps, atol=1e-6)


def test_forward_shape_mismatch(sched):
    with pytest.raises(ShapeMismatch):
        forward_diffuse(np.zeros(3), 1, np.zeros(4), sched)
    with pytest.raises(ScheduleError):
        forward_diffuse(np.zeros(3), 11, np.zeros(3), sched)


def test_forward_variance_monte_carlo(sched):
    eps = np.random.default_rng(7).standard_normal(100_000)
    for t in (1, 5, 10):
        var = forward_diffuse(np.zeros_like(eps), t, eps, sched).var()
        assert abs(var / (1 - sched.alpha_bar(t)) - 1) < 0.02


def test_adaptive_identity_bit_exact(sched):
    z = np.random.default_rng(1).standard_normal((8, 8, 3)).astype(np.float32)
    out = adaptive_noise(z, 4, 4, np.ones_like(z), sched)
    assert out.tobytes() == z.tobytes()


def test_adaptive_rejects_denoising(sched):
    with pytest.raises(ScheduleError):
        adaptive_noise(np.zeros(2), 5, 3, np.zeros(2), sched)


def test_adaptive_coefficient_matches_product(sched):
    z = np.array([1.0])
    out = adaptive_noise(z, 2, 10, np.zeros(1), sched)
    assert out[0] == pytest.approx(SQRT_RATIO_10_2, abs=1e-12)


def test_adaptive_composition_matches_forward(sched):
    g = np.random.default_rng(3)
    n = 100_000
    x0 = np.full(n, 0.3)
    for t1, tn in ((2, 10), (2, 5), (4, 8)):
        a = adaptive_noise(adaptive_noise(x0, 0, t1, g.standard_normal(n), sched), t1, tn, g.standard_normal(n), sched)
        b = forward_diffuse(x0, tn, g.standard_normal(n), sched)
        assert abs(a.var() / (1 - sched.alpha_bar(tn)) - 1) < 0.02
        assert abs(a.mean() - b.mean()) < 0.02 * max(abs(b.mean()), math.sqrt(1 - sched.alpha_bar(tn)))


def test_ddim_identity(sched):
    g = np.random.default_rng(2)
    x0 = g.uniform(size=(4, 4))
    eps_true = g.standard_normal((4, 4))
    i = 7
    x_i = forward_diffuse(x0, i, eps_true, sched)
    eps_pred = (x_i - math.sqrt(sched.alpha_bar(i)) * x0) / math.sqrt(1 - sched.alpha_bar(i))
    out = ddim_step(x_i, eps_pred, i, 0.0, None, sched)
    want = math.sqrt(sched.alpha_bar(i - 1)) * x0 + math.sqrt(1 - sched.alpha_bar(i - 1)) * eps_pred
    assert np.abs(out - want).max() <= 1e-10


def test_ddim_noop_when_alpha_bar_repeats():
    # betas of 1e-9 make consecutive alpha bars equal to within 1e-9
    s = build_schedule(10, 1e-9, 1e-9, 10)
    x = np.random.default_rng(0).standard_normal(5)
    out = ddim_step(x, np.zeros(5), 2, 0.0, None, s)
    np.testing.assert_allclose(out, x, atol=1e-8)


def test_ddim_sigma_precondition(sched):
    with pytest.raises(ScheduleError):
        ddim_step(np.zeros(2), np.zeros(2), 1, 0.5, np.zeros(2), sched)
    with pytest.raises(ScheduleError):
        ddim_step(np.zeros(2), np.zeros(2), 5, 0.1, None, sched)


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-6), (np.float32, 1e-4)])
def test_ddim_chain_recovers_target(sched, dtype, tol):
    g = np.random.default_rng(4)
    x0 = g.uniform(size=(32, 32, 3)).astype(dtype)
    for tn in range(5, 11):
        x = forward_diffuse(x0, tn, g.standard_normal(x0.shape).astype(dtype), sched)
        for i in range(tn, 0, -1):
            ab = sched.alpha_bar(i)
            eps = ((x - dtype(math.sqrt(ab)) * x0) / dtype(math.sqrt(1 - ab))).astype(dtype)
            x = ddim_step(x, eps, i, 0.0, None, sched)
        assert x.dtype == dtype
        assert np.abs(x - x0).max() < tol


@pytest.mark.parametrize("n,want", [(1, 8), (2, 5), (3, 5), (4, 5), (5, 5)])
def test_step_timestep(n, want):
    assert step_timestep(n, 2.5) == want


def test_step_timestep_rules():
    assert step_timestep(1, 1.0) == 9
    assert step_timestep(1, 0.5) == 10  # 9.5 rounds half up
    with pytest.raises(ScheduleError):
        step_timestep(0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5.0))
def test_step_timestep_nonincreasing(slope):
    vals = [step_timestep(n, slope) for n in range(1, 12)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert all(5 <= v <= 10 for v in vals)


def test_resolution_plan():
    assert resolution_plan() == [307, 460, 690, 1035, 1552]
    assert resolution_plan(100, 2, 3) == [100, 200, 400]
    assert resolution_plan(1035, 1.5, 2)[1] == 1552


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 2000), st.floats(1.01, 3.0), st.integers(1, 6))
def test_resolution_plan_increasing(base, factor, n):
    try:
        plan = resolution_plan(base, factor, n)
    except ScheduleError:
        # only possible when floor(factor * r) == r, i.e. factor * r < r + 1
        assert factor * base < base + 1
        return
    assert all(b > a for a, b in zip(plan, plan[1:]))


def test_step_plan_entries():
    entries = StepPlan().entries()
    assert [e.resolution for e in entries] == [307, 460, 690, 1035, 1552]
    assert [e.t_n for e in entries] == [8, 5, 5, 5, 5]
    for e in entries:
        assert e.t1 == 2 and e.t2 == e.t_n - 1
        assert e.t1 < e.t2 < e.t_n
