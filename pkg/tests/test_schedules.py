"""Time-grid construction and its scaling properties."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interpolant_lab import GammaSchedule, make_schedule
from interpolant_lab.errors import ConfigError
from interpolant_lab.schedules import ScheduleKind, refine_schedule


def test_geometric_vp_example():
    s = make_schedule("geometric-vp", 0.5, delta_end=0.1)
    assert np.allclose(s.times, [0.0, 0.5, 0.75, 0.875, 0.9375])


def test_geometric_mid_example():
    s = make_schedule("geometric-mid", 0.5, 0.125, 0.125)
    assert np.allclose(s.times, [0.125, 0.25, 0.5, 0.75, 0.875])


def test_uniform_example():
    s = make_schedule("uniform", 0.49, 0.01, 0.01)
    assert np.allclose(s.times, [0.01, 0.5, 0.99])


@pytest.mark.parametrize("kind", ["geometric-mid", "geometric-vp", "uniform"])
def test_strictly_increasing(kind):
    s = make_schedule(kind, 0.07, 1e-3, 1e-3)
    assert np.all(np.diff(s.times) > 0)


def test_geometric_mid_clamps_endpoints():
    s = make_schedule("geometric-mid", 0.13, 0.004, 0.002)
    assert s.t0 == 0.004
    assert s.t_end == 1 - 0.002


def test_geometric_vp_starts_at_zero_and_stops_late():
    s = make_schedule("geometric-vp", 0.3, delta_end=1e-3)
    assert s.t0 == 0.0
    assert 1 - s.t_end <= 1e-3
    # previous point is still short of the cutoff
    assert 1 - s.times[-2] > 1e-3


@pytest.mark.parametrize("h,delta", [(0.2, 1e-2), (0.1, 1e-2), (0.05, 1e-2),
                                     (0.2, 1e-3), (0.1, 1e-3), (0.05, 1e-3)])
def test_step_count_scaling(h, delta):
    # N = Theta(h^-1 log(1/delta)): the normalized ratio stays near 1
    s = make_schedule("geometric-mid", h, delta, delta)
    ratio = s.n_steps * h / np.log(1 / delta)
    assert 0.8 < ratio < 2.5


def test_doubling_resolution_roughly_doubles_steps():
    for kind in ("geometric-mid", "geometric-vp"):
        n_coarse = make_schedule(kind, 0.1, 1e-3, 1e-3).n_steps
        n_fine = make_schedule(kind, 0.05, 1e-3, 1e-3).n_steps
        assert 1.8 < n_fine / n_coarse < 2.3


def test_geometric_mid_step_proportional_to_gamma_sq():
    # h_k / inf gamma^2 over the step is bounded by a constant multiple of h,
    # uniformly in k (the clamped first/last steps may only be shorter)
    gamma = GammaSchedule()
    for h in (0.2, 0.05):
        s = make_schedule("geometric-mid", h, 1e-3, 1e-3)
        gbar = s.gamma_bar(gamma)
        ratio = s.step_sizes / gbar**2
        assert ratio.max() < 2.0 * h
        # interior steps are genuinely proportional, not just bounded
        interior = ratio[1:-1]
        assert interior.max() / interior.min() < 3.0


@given(h=st.floats(0.01, 0.8), delta=st.floats(1e-6, 0.4))
@settings(max_examples=60, deadline=None)
def test_geometric_mid_bounds_hold(h, delta):
    s = make_schedule("geometric-mid", h, delta, delta)
    assert s.t0 == delta
    assert s.t_end == 1 - delta
    assert np.all(np.diff(s.times) > 0)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.7])
def test_bad_h_rejected(bad):
    with pytest.raises(ConfigError):
        make_schedule("uniform", bad)


@pytest.mark.parametrize("bad", [0.0, 0.5, 0.9, -1e-3])
def test_bad_delta_rejected(bad):
    with pytest.raises(ConfigError):
        make_schedule("geometric-mid", 0.1, bad, 1e-2)


def test_refine_schedule():
    s = make_schedule("uniform", 0.25, 0.1, 0.1)
    r = refine_schedule(s, 4)
    assert r.n_steps == 4 * s.n_steps
    assert np.allclose(r.times[::4], s.times)
    assert r.kind is ScheduleKind.UNIFORM
