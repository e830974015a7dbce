"""Integrator steps, trajectories, ensembles, and density tracking."""

import numpy as np
import pytest

from interpolant_lab import (
    EULER,
    HEUN,
    ConstantField,
    InterpolantSpec,
    IntegratorKind,
    LinearField,
    MixtureVelocityField,
    VelocityField,
    default_grid,
    diffeo_check,
    euler_step,
    euler_step_jacobian,
    heun_step,
    heun_step_jacobian,
    integrate,
    isotropic_mixture,
    make_schedule,
    push_ensemble,
    reference_solution,
    tv_histogram,
)
from interpolant_lab.errors import ConfigError, IntegrationError
from interpolant_lab.metrics import fit_loglog_slope
from interpolant_lab.numdiff import jacobian as fd_jacobian
from interpolant_lab.schedules import Schedule, ScheduleKind

BB = InterpolantSpec()
STD1 = isotropic_mixture(np.zeros((1, 1)), 1.0)
BIMODAL = isotropic_mixture(np.array([[-1.5], [1.5]]), 0.25)


class TimeOnlyField(VelocityField):
    """b(t, x) = t * ones; Heun integrates this exactly."""

    dim = 1

    def velocity(self, t, x):
        return np.full_like(np.asarray(x, dtype=float), t)

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (1, 1))


class TailNaNField(VelocityField):
    """Goes non-finite beyond a threshold; exercises the drop policy."""

    def __init__(self, threshold):
        self.dim = 1
        self.threshold = threshold

    def velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[np.abs(x) > self.threshold] = np.nan
        return out

    def jacobian(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (1, 1))


def uniform_schedule(t0, t1, n):
    return Schedule(np.linspace(t0, t1, n + 1), ScheduleKind.UNIFORM, (t1 - t0) / n)


def test_euler_step_examples():
    two = ConstantField(np.array([2.0]))
    assert euler_step(two, 0.0, 0.1, np.array([0.0]))[0] == pytest.approx(0.2)
    lin = LinearField(np.array([[1.0]]))
    assert euler_step(lin, 0.0, 0.1, np.array([1.0]))[0] == pytest.approx(1.1)


def test_heun_step_examples():
    lin = LinearField(np.array([[1.0]]))
    assert heun_step(lin, 0.0, 0.1, np.array([1.0]))[0] == pytest.approx(1.105)
    two = ConstantField(np.array([2.0]))
    assert heun_step(two, 0.3, 0.45, np.array([1.0]))[0] == pytest.approx(1.3)
    tfield = TimeOnlyField()
    got = heun_step(tfield, 0.2, 0.5, np.array([1.0]))[0]
    assert got == pytest.approx(1.0 + 0.15 * (0.2 + 0.5))


def test_step_jacobian_examples():
    two = ConstantField(np.array([2.0]))
    assert euler_step_jacobian(two, 0.0, 0.3, np.array([0.0]))[0, 0] == 1.0
    assert heun_step_jacobian(two, 0.0, 0.3, np.array([0.0]))[0, 0] == 1.0
    lin = LinearField(np.array([[1.0]]))
    assert euler_step_jacobian(lin, 0.0, 0.1, np.array([1.0]))[0, 0] == pytest.approx(1.1)
    assert heun_step_jacobian(lin, 0.0, 0.1, np.array([1.0]))[0, 0] == pytest.approx(1.105)


def test_step_jacobians_match_fd_on_mixture_field():
    field = MixtureVelocityField(STD1, BIMODAL, BB)
    t, h, x = 0.4, 0.05, np.array([0.25])
    ej = euler_step_jacobian(field, t, h, x)
    ej_fd = fd_jacobian(lambda y: euler_step(field, t, h, y), x)
    assert np.all(np.abs(ej - ej_fd) <= np.maximum(1e-6, 1e-5 * np.abs(ej_fd)))
    hj = heun_step_jacobian(field, t, t + h, x)
    hj_fd = fd_jacobian(lambda y: heun_step(field, t, t + h, y), x)
    assert np.all(np.abs(hj - hj_fd) <= np.maximum(1e-6, 1e-5 * np.abs(hj_fd)))


@pytest.mark.parametrize("kind", [EULER, HEUN])
def test_integrate_constant_field_exact(kind):
    two = ConstantField(np.array([2.0]))
    sched = make_schedule("geometric-mid", 0.2, 0.1, 0.1)
    res = integrate(two, sched, np.array([1.0]), kind, track_logdet=True)
    assert res.terminal[0] == pytest.approx(1.0 + 2.0 * (0.9 - 0.1), abs=1e-14)
    assert res.logdet_sum == 0.0


def test_integrate_euler_first_order_in_h():
    lin = LinearField(np.array([[1.0]]))
    errs = []
    for n in (10, 20, 40):
        res = integrate(lin, uniform_schedule(0.0, 1.0, n), np.array([1.0]), EULER)
        errs.append((1.0 / n, abs(res.terminal[0] - np.e)))
    fit = fit_loglog_slope(errs)
    assert 0.9 < fit.slope < 1.1


def test_heun_exact_on_time_linear_field():
    sched = uniform_schedule(0.1, 0.9, 7)
    res = integrate(TimeOnlyField(), sched, np.array([0.5]), HEUN)
    assert res.terminal[0] == pytest.approx(0.5 + (0.9**2 - 0.1**2) / 2, abs=1e-14)


def test_local_orders_on_mixture_field():
    # one step against the fine reference: Euler O(h^2), Heun O(h^3)
    field = MixtureVelocityField(STD1, BIMODAL, BB)
    t, x = 0.35, np.array([0.2])
    hs = [2.0**-k for k in range(3, 9)]
    errs_e, errs_h = [], []
    for h in hs:
        ref = reference_solution(field, t, t + h, x, 256)
        errs_e.append((h, float(np.abs(euler_step(field, t, h, x) - ref)[0])))
        errs_h.append((h, float(np.abs(heun_step(field, t, t + h, x) - ref)[0])))
    slope_e = fit_loglog_slope(errs_e).slope
    slope_h = fit_loglog_slope(errs_h).slope
    assert 1.8 <= slope_e <= 2.2, errs_e
    assert 2.8 <= slope_h <= 3.2, errs_h


def test_logdet_accumulation_linear_1d():
    # Euler on b=x: per-step logdet is log(1+h) and the pushed density of
    # N(0,1) matches the analytic change of variables
    lin = LinearField(np.array([[1.0]]))
    n = 16
    sched = uniform_schedule(0.0, 1.0, n)
    h = 1.0 / n
    x0 = np.array([0.37])
    res = integrate(lin, sched, x0, EULER, track_logdet=True)
    assert res.logdet_sum == pytest.approx(n * np.log(1 + h), abs=1e-12)
    scale = (1 + h) ** n
    log_rho0 = -0.5 * x0[0] ** 2 - 0.5 * np.log(2 * np.pi)
    pushed_log_density = log_rho0 - res.logdet_sum
    exact = -0.5 * (res.terminal[0] / scale) ** 2 - 0.5 * np.log(2 * np.pi) - np.log(scale)
    assert pushed_log_density == pytest.approx(exact, abs=1e-10)


def test_integrate_reports_failure_step():
    field = TailNaNField(threshold=0.5)
    sched = uniform_schedule(0.0, 1.0, 4)
    with pytest.raises(IntegrationError) as err:
        integrate(field, sched, np.array([1.0]), EULER)
    assert err.value.step_index == 0


def test_reference_solution_examples():
    two = ConstantField(np.array([2.0]))
    got = reference_solution(two, 0.1, 0.9, np.array([0.0]), 64)
    assert got[0] == pytest.approx(1.6, abs=1e-14)
    lin = LinearField(np.array([[1.0]]))
    got = reference_solution(lin, 0.0, 1.0, np.array([1.0]), 256)
    assert got[0] == pytest.approx(np.e, abs=1e-5)
    # Richardson consistency: halving the subdivision behaves second order
    r128 = reference_solution(lin, 0.0, 1.0, np.array([1.0]), 128)
    r256 = reference_solution(lin, 0.0, 1.0, np.array([1.0]), 256)
    r512 = reference_solution(lin, 0.0, 1.0, np.array([1.0]), 512)
    ratio = abs(r256[0] - r128[0]) / abs(r512[0] - r256[0])
    assert 3.0 < ratio < 5.0


def test_reference_subdivision_minimum():
    with pytest.raises(ConfigError):
        reference_solution(ConstantField(np.array([1.0])), 0.0, 1.0, np.array([0.0]), 8)


def test_push_ensemble_symmetric_null():
    field = MixtureVelocityField(STD1, STD1, BB)
    sched = make_schedule("geometric-mid", 0.1, 1e-2, 1e-2)
    ens = push_ensemble(field, sched, 100_000, EULER, seed=2, track_logdet=True)
    assert ens.n_dropped == 0
    exact = field.marginal(sched.t_end).sample(
        100_000, np.random.default_rng(99)
    )
    grid = default_grid(exact, bins_per_dim=50)
    tv = tv_histogram(ens.terminal_points, exact, grid)
    assert tv.value < 0.02


def test_push_ensemble_straight_transport_mean():
    shift = isotropic_mixture(np.array([[2.0]]), 1.0)
    field = MixtureVelocityField(STD1, shift, BB)
    sched = make_schedule("geometric-mid", 0.05, 1e-2, 1e-2)
    n = 50_000
    ens = push_ensemble(field, sched, n, HEUN, seed=3)
    expected = 2.0 * sched.t_end
    assert abs(ens.terminal_points.mean() - expected) < 4.0 / np.sqrt(n)


def test_push_ensemble_worker_count_invariance():
    field = MixtureVelocityField(STD1, BIMODAL, BB)
    sched = make_schedule("geometric-mid", 0.2, 1e-2, 1e-2)
    a = push_ensemble(field, sched, 10_000, HEUN, seed=7, track_logdet=True, threads=1)
    b = push_ensemble(field, sched, 10_000, HEUN, seed=7, track_logdet=True, threads=8)
    assert np.array_equal(a.terminal_points, b.terminal_points)
    assert np.array_equal(a.log_det_sums, b.log_det_sums)


def test_push_ensemble_drop_budget():
    sched = uniform_schedule(0.0, 1.0, 3)
    # threshold 3: ~0.27% of N(0,1) draws go non-finite -> budget breach
    with pytest.raises(IntegrationError):
        push_ensemble(TailNaNField(3.0), sched, 50_000, EULER, seed=0)
    # threshold 5: drops are rare enough to be recorded, not fatal
    ens = push_ensemble(TailNaNField(5.0), sched, 50_000, EULER, seed=0)
    assert ens.n_dropped <= 5
    assert len(ens.terminal_points) == 50_000 - ens.n_dropped


def test_diffeo_check_constant_field():
    rep = diffeo_check(ConstantField(np.array([1.0, -1.0])),
                       make_schedule("uniform", 0.1, 0.1, 0.1), probes=100, seed=0)
    assert rep.max_dev == 0.0
    assert rep.condition_ok


def test_diffeo_check_linear_boundary():
    # b = Lx with h = 1/(2L): Euler deviation hits exactly 1/2
    L = 2.0
    field = LinearField(np.array([[L]]))
    sched = uniform_schedule(0.0, 1 / (2 * L), 1)
    rep = diffeo_check(field, sched, probes=10, seed=0)
    assert rep.max_dev == pytest.approx(0.5, abs=1e-12)
    assert rep.step_condition_holds
    assert rep.condition_ok


def test_diffeo_check_mixture_field():
    from interpolant_lab import lipschitz_probe

    field = MixtureVelocityField(STD1, BIMODAL, BB)
    trial = make_schedule("geometric-mid", 0.05, 1e-2, 1e-2)
    l_hat = lipschitz_probe(field, trial, 256, 0)
    h = min(0.05, 1.0 / (2.5 * l_hat) * 2.0)  # max geometric step is h/2
    sched = make_schedule("geometric-mid", h, 1e-2, 1e-2)
    rep = diffeo_check(field, sched, probes=1000, seed=1)
    assert rep.step_condition_holds
    assert rep.condition_ok
    assert rep.max_dev <= 0.5


def test_integrator_kind_validation():
    with pytest.raises(ConfigError):
        IntegratorKind("rk4")
    with pytest.raises(ConfigError):
        IntegratorKind("reference-fine", 4)
    assert IntegratorKind.parse("reference-fine:32").subdivision == 32
