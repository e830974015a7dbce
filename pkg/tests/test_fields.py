"""Closed-form velocity, score, Jacobian: oracle and finite-difference checks."""

import numpy as np
import pytest

from interpolant_lab import (
    ConstantField,
    GammaKind,
    GammaSchedule,
    InterpolantMode,
    InterpolantSpec,
    LinearField,
    MixtureVelocityField,
    PerturbMode,
    isotropic_mixture,
    lipschitz_probe,
    make_schedule,
    oracle_velocity_mc,
    perturb_field,
    velocity,
)
from interpolant_lab.errors import DomainError
from interpolant_lab.numdiff import gradient as fd_gradient, jacobian as fd_jacobian

BB = InterpolantSpec()
VP = InterpolantSpec(InterpolantMode.ONE_SIDED_VP, GammaSchedule(GammaKind.VARIANCE_PRESERVING))

STD1 = isotropic_mixture(np.zeros((1, 1)), 1.0)
SHIFT1 = isotropic_mixture(np.array([[2.0]]), 1.0)
BIMODAL = isotropic_mixture(np.array([[-1.5], [1.5]]), 0.25)


def random_mixture(rng, dim, k):
    means = rng.normal(scale=1.2, size=(k, dim))
    weights = rng.dirichlet(np.ones(k))
    comps = []
    from interpolant_lab import GaussianComponent, GaussianMixture

    for w, m in zip(weights, means):
        a = rng.normal(scale=0.4, size=(dim, dim))
        comps.append(GaussianComponent(w, m, a @ a.T + 0.5 * np.eye(dim)))
    return GaussianMixture(comps)


def test_symmetric_field_is_null():
    # A_ij cancels exactly up to roundoff, the marginal stays N(0, I)
    for t in (0.21, 0.5, 0.83):
        ev = velocity(STD1, STD1, BB, t, np.array([0.9]),
                      jacobian=True, score=True)
        assert abs(ev.b[0]) <= 1e-12
        assert abs(ev.jacobian[0, 0]) <= 1e-12
        assert ev.score[0] == pytest.approx(-0.9, abs=1e-12)


def test_straight_transport_is_constant_two():
    for t, x in [(0.2, -1.0), (0.5, 0.3), (0.9, 4.0)]:
        ev = velocity(STD1, SHIFT1, BB, t, np.array([x]), jacobian=True)
        assert ev.b[0] == pytest.approx(2.0, abs=1e-12)
        assert abs(ev.jacobian[0, 0]) <= 1e-12


def test_oracle_symmetric_case():
    est = oracle_velocity_mc(STD1, STD1, BB, 0.4, np.array([0.5]), 10**5, 0)
    assert abs(est.b_hat[0]) <= 3 * est.stderr[0]


def test_oracle_straight_transport():
    est = oracle_velocity_mc(STD1, SHIFT1, BB, 0.35, np.array([0.2]), 10**5, 1)
    assert abs(est.b_hat[0] - 2.0) <= 3 * est.stderr[0]


def test_closed_form_within_oracle_errors_on_mixtures():
    rng = np.random.default_rng(8)
    rho1 = BIMODAL
    field = MixtureVelocityField(STD1, rho1, BB)
    for i in range(20):
        t = float(rng.uniform(0.15, 0.85))
        x = field.marginal(t).sample(1, rng)[0]
        est = oracle_velocity_mc(STD1, rho1, BB, t, x, 10**5, 100 + i)
        b = field.velocity(t, x)
        assert np.all(np.abs(b - est.b_hat) <= 4 * est.stderr), (t, x)


def test_oracle_preconditions():
    with pytest.raises(DomainError):
        oracle_velocity_mc(STD1, STD1, BB, 0.5, np.array([0.0]), 100, 0)


@pytest.mark.parametrize("dim,k0,k1,seed", [(1, 1, 2, 0), (2, 2, 3, 1), (3, 2, 2, 2)])
def test_jacobian_and_score_match_fd(dim, k0, k1, seed):
    rng = np.random.default_rng(seed)
    rho0 = random_mixture(rng, dim, k0)
    rho1 = random_mixture(rng, dim, k1)
    field = MixtureVelocityField(rho0, rho1, BB)
    for _ in range(5):
        t = float(rng.uniform(0.15, 0.85))
        x = field.marginal(t).sample(1, rng)[0]
        jac = field.jacobian(t, x)
        jac_fd = fd_jacobian(lambda y: field.velocity(t, y), x)
        assert np.all(np.abs(jac - jac_fd) <= np.maximum(1e-6, 1e-5 * np.abs(jac_fd)))

        marg = field.marginal(t)
        s = field.score(t, x)
        s_fd = fd_gradient(lambda y: float(marg.logpdf(y[None, :])[0]), x)
        assert np.all(np.abs(s - s_fd) <= np.maximum(1e-6, 1e-5 * np.abs(s_fd)))


def test_divergence_equals_trace():
    rng = np.random.default_rng(4)
    field = MixtureVelocityField(random_mixture(rng, 2, 2), random_mixture(rng, 2, 2), BB)
    for _ in range(10):
        t = float(rng.uniform(0.1, 0.9))
        x = field.marginal(t).sample(1, rng)
        res = field.evaluate(t, x, want_divergence=True)
        jac = field.jacobian(t, x[0])
        assert abs(float(res["divergence"][0]) - float(np.trace(jac))) < 1e-10


def test_vp_field_evaluates_at_zero():
    rho1 = isotropic_mixture(np.array([[1.0], [3.0]]), 0.5)
    field = MixtureVelocityField(None, rho1, VP)
    b = field.velocity(0.0, np.array([0.0]))
    assert b[0] == pytest.approx(2.0)  # mean of the target mixture


def test_decomposition_velocity_minus_score_term():
    # two-sided symmetric case: b = 0 and gamma*gamma_dot*s = -gdg*x, so the
    # deterministic part v = b - gdg*s = gdg*x
    t, x = 0.3, np.array([0.7])
    ev = velocity(STD1, STD1, BB, t, x, score=True)
    gdg = float(BB.gamma.gamma_dgamma(t))
    v = ev.b - gdg * ev.score
    assert v[0] == pytest.approx(gdg * 0.7, abs=1e-12)


def test_far_tail_returns_finite():
    field = MixtureVelocityField(STD1, BIMODAL, BB)
    res = field.evaluate(0.5, np.array([[1e6]]))
    assert np.all(np.isfinite(res["b"]))
    assert res["far_tail"][0]


def test_lipschitz_probe_constant_and_linear():
    sched = make_schedule("uniform", 0.1, 0.1, 0.1)
    assert lipschitz_probe(ConstantField(np.array([3.0, 1.0])), sched, 50, 0) == 0.0
    m = np.array([[1.0, 2.0], [0.0, -1.0]])
    got = lipschitz_probe(LinearField(m), sched, 50, 0)
    assert got == pytest.approx(np.sqrt((m**2).sum()))


def test_lipschitz_probe_upper_bounds_fd_quotient():
    rng = np.random.default_rng(9)
    field = MixtureVelocityField(STD1, BIMODAL, BB)
    sched = make_schedule("geometric-mid", 0.1, 1e-2, 1e-2)
    l_hat = lipschitz_probe(field, sched, 400, 3)
    worst = 0.0
    for _ in range(1000):
        t = float(rng.choice(sched.times))
        x = field.marginal(t).sample(2, rng)
        if np.linalg.norm(x[0] - x[1]) < 1e-9:
            continue
        q = np.linalg.norm(field.velocity(t, x[0]) - field.velocity(t, x[1]))
        worst = max(worst, q / np.linalg.norm(x[0] - x[1]))
    assert worst <= l_hat * 1.05


def test_perturb_identity_at_zero_magnitude():
    field = MixtureVelocityField(STD1, BIMODAL, BB)
    assert perturb_field(field, 0.0, PerturbMode.CONSTANT_SHIFT) is field


def test_perturb_constant_shift():
    base = ConstantField(np.array([2.0]))
    pert = perturb_field(base, 0.25, PerturbMode.CONSTANT_SHIFT)
    assert np.allclose(pert.velocity(0.5, np.array([[1.0]])), 2.25)
    assert np.allclose(pert.jacobian(0.5, np.array([[1.0]])), 0.0)


def test_perturb_sinusoidal_jacobian_consistent():
    field = MixtureVelocityField(STD1, BIMODAL, BB)
    pert = perturb_field(field, 0.3, PerturbMode.SINUSOIDAL_IN_X)
    x = np.array([0.4])
    jac = pert.jacobian(0.6, x)
    jac_fd = fd_jacobian(lambda y: pert.velocity(0.6, y), x)
    assert np.all(np.abs(jac - jac_fd) <= np.maximum(1e-6, 1e-5 * np.abs(jac_fd)))
    # disturbance is bounded by the magnitude everywhere
    xs = np.linspace(-30, 30, 301)[:, None]
    gap = pert.velocity(0.6, xs) - field.velocity(0.6, xs)
    assert np.max(np.abs(gap)) <= 0.3 + 1e-12
