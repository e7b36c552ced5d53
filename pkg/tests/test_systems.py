import math

import numpy as np
import pytest

from koopmap import systems as sy
from koopmap.dataset import central_difference_field
from koopmap.exceptions import FixedPointError, ParameterError, SamplingError


def test_irrational_embedding_at_origin():
    ts, ang = sy.generate(sy.irrational2(), 5, 0.1)
    np.testing.assert_allclose(ts.samples[0], [1.5, 0.0, 0.0], atol=1e-14)


def test_variable_speed_orbit_starts_at_origin():
    _, ang = sy.generate(sy.variable_speed2(), 10, 0.05)
    np.testing.assert_allclose(ang[0], [0.0, 0.0], atol=1e-14)


def test_embedding_ring_constraint():
    # x1^2 + x2^2 equals (1 + R cos th2)^2 for the doughnut embedding
    spec = sy.variable_speed2()
    ts, ang = sy.generate(spec, 500, 0.07)
    ring = 1.0 + spec.R * np.cos(ang[:, 1])
    np.testing.assert_allclose(
        ts.samples[:, 0] ** 2 + ts.samples[:, 1] ** 2, ring**2, atol=1e-12
    )
    np.testing.assert_allclose(ts.samples[:, 2], spec.R * np.sin(ang[:, 1]), atol=1e-12)


def test_embedding_x3_unscaled_switch():
    spec = sy.irrational2(x3_scaled_by_R=False)
    ts, ang = sy.generate(spec, 50, 0.3)
    np.testing.assert_allclose(ts.samples[:, 2], np.sin(ang[:, 1]), atol=1e-12)


def test_rk4_matches_closed_form_orbit():
    # fixed-step RK4 at substep dt/10 vs the exact variable-speed orbit
    spec = sy.variable_speed2()
    dt = 2 * np.pi / 500
    n = int(100.0 / dt) + 1
    _, exact = sy.generate(spec, n, dt)

    def rhs(th):
        return sy.variable_speed_field(spec, th)

    th = np.zeros((1, 2))
    h = dt / 10
    path = np.empty((n, 2))
    path[0] = th[0]
    for i in range(1, n):
        for _ in range(10):
            k1 = rhs(th)
            k2 = rhs(th + 0.5 * h * k1)
            k3 = rhs(th + 0.5 * h * k2)
            k4 = rhs(th + h * k3)
            th = th + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        path[i] = th[0]
    assert np.max(np.abs(path - exact)) < 1e-6


def test_psi_at_origin_matches_termwise_sum():
    kmax = 20
    oracle = 1.0 + sum(math.exp(-k) / k * 2 * (2 * k + 1) for k in range(1, kmax + 1))
    assert abs(sy.psi_mixing(np.array([0.0, 0.0, 0.0]), kmax) - oracle) < 1e-12


def test_psi_torus_average_is_one():
    rng = np.random.default_rng(0)
    th = rng.uniform(0, 2 * np.pi, size=(200000, 3))
    assert abs(sy.psi_mixing(th, 20).mean() - 1.0) < 5e-3


def test_psi_truncation_tail_bound():
    rng = np.random.default_rng(1)
    th = rng.uniform(0, 2 * np.pi, size=(500, 3))
    for kmax in (1, 3, 6):
        diff = np.max(np.abs(sy.psi_mixing(th, kmax) - sy.psi_mixing(th, kmax + 10)))
        assert diff <= sy.psi_mixing_tail_bound(kmax)


def test_psi_lower_bound_holds():
    # the series is bounded below by 1 minus the full tail bound (the bound
    # is not positive for decay 1, which is why generation uses decay 1.8)
    rng = np.random.default_rng(2)
    th = rng.uniform(0, 2 * np.pi, size=(20000, 3))
    for decay in (1.0, 1.8):
        lo = 1.0 - sy.psi_mixing_tail_bound(0, decay=decay)
        assert np.min(sy.psi_mixing(th, 20, decay=decay)) >= lo
    assert np.min(sy.psi_mixing(th, 20, decay=1.8)) > 0


def test_mixing_speed_profile():
    spec = sy.mixing3()
    ts, ang = sy.generate(spec, 8000, 0.01)
    est = central_difference_field(ts)
    assert est.speeds.max() / est.speeds.min() > 10
    pred = math.sqrt(16.0) / sy.psi_mixing(ang[1:-1], spec.psi_kmax, spec.psi_decay)
    assert np.max(np.abs(est.speeds - pred) / pred) < 0.04


def test_oxtoby_divergence_free():
    # d(v1)/d(th1) + d(v2)/d(th2) vanishes identically
    alpha = math.sqrt(20.0)
    rng = np.random.default_rng(3)
    th = rng.uniform(0, 2 * np.pi, size=(200, 2))
    u = th[:, 0] - th[:, 1]
    div = alpha * np.sin(u) + alpha * np.sin(u) * (-1.0)
    assert np.max(np.abs(div)) < 1e-12


def test_oxtoby_fixed_point_rejected():
    with pytest.raises(FixedPointError):
        sy.generate(sy.oxtoby2(initial_angles=(0.0, 0.0)), 10, 0.01)


def test_invariant_density_variable_speed():
    # beta = 1 degenerates to the constant-speed flow
    rng = np.random.default_rng(4)
    th = rng.uniform(0, 2 * np.pi, size=(100, 2))
    np.testing.assert_allclose(sy.invariant_density_variable_speed(th, 1.0), 1.0, atol=1e-14)

    contrast = sy.invariant_density_variable_speed(
        np.array([[np.pi, np.pi / 2]]), 0.5
    ) / sy.invariant_density_variable_speed(np.array([[0.0, -np.pi / 2]]), 0.5)
    assert abs(contrast[0] - 34.0) < 1.0

    g = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    t1, t2 = np.meshgrid(g, g, indexing="ij")
    grid = np.stack([t1.ravel(), t2.ravel()], axis=1)
    avg = sy.invariant_density_variable_speed(grid, 0.5).mean()
    assert abs(avg - 1.0) < 1e-6


def test_von_mises_density_basics():
    spec = sy.DensitySpec(locations=(1.0, 2.0), concentration=0.0)
    rng = np.random.default_rng(5)
    th = rng.uniform(0, 2 * np.pi, size=(50, 2))
    np.testing.assert_allclose(sy.von_mises_density(spec, th), 1.0, atol=1e-14)

    spec = sy.DensitySpec(locations=(1.0, 2.0), concentration=7.0)
    peak = sy.von_mises_density(spec, np.array([[1.0, 2.0]]))
    assert np.all(sy.von_mises_density(spec, th) <= peak + 1e-12)

    g = np.linspace(0, 2 * np.pi, 1024, endpoint=False)
    t1, t2 = np.meshgrid(g, g, indexing="ij")
    grid = np.stack([t1.ravel(), t2.ravel()], axis=1)
    assert abs(sy.von_mises_density(spec, grid).mean() - 1.0) < 1e-8


def test_von_mises_invariant_reference():
    flow = sy.variable_speed2()
    dens = sy.DensitySpec(locations=(np.pi, np.pi), concentration=3.0, reference="invariant")
    th = np.array([[0.3, 5.1], [2.2, 0.7]])
    haar = sy.von_mises_density(sy.DensitySpec((np.pi, np.pi), 3.0), th)
    inv = sy.von_mises_density(dens, th, flow=flow)
    np.testing.assert_allclose(inv * sy.invariant_density(flow, th), haar, rtol=1e-12)
    with pytest.raises(ParameterError):
        sy.von_mises_density(dens, th)


def test_irrational_oracles_basics():
    out = sy.irrational_oracles((0, 0), math.sqrt(30), 0.5, 30.0, np.array([0.0]))
    assert out["eigenvalue"] == 0
    assert out["dirichlet_energy"] == 0

    out = sy.irrational_oracles((1, 0), math.sqrt(30), 0.5, 30.0, np.array([0.0]))
    assert abs(out["dirichlet_energy"] - 0.75 ** (-1.5)) < 1e-12

    from scipy.special import ive

    r1 = ive(1, 30.0) / ive(0, 30.0)
    expected = r1 + 0.5 * r1**2  # R/2 cross-term prefactor, R = 1/2
    assert abs(out["mean_forecast"][0] - expected) < 1e-12


def test_ensemble_matches_closed_form_irrational():
    alpha, R, kappa = math.sqrt(30), 0.5, 30.0
    flow = sy.irrational2(alpha=alpha, R=R)
    dens = sy.DensitySpec(locations=(0.0, 0.0), concentration=kappa)
    times = np.linspace(0.0, 4 * np.pi, 100)
    n_particles = 4000
    fc = sy.ensemble_forecast(flow, dens, n_particles, times, [sy.embedding_observable(flow, 0)], seed=11)
    oracle = sy.irrational_oracles((1, 0), alpha, R, kappa, times)["mean_forecast"]
    mc_err = fc.stds[0] / math.sqrt(n_particles)
    assert np.all(np.abs(fc.means[0] - oracle) < 3.0 * mc_err + 1e-4)


def test_ensemble_t0_is_sample_mean():
    flow = sy.oxtoby2()
    dens = sy.DensitySpec(locations=(np.pi, np.pi), concentration=5.0)
    obs = sy.embedding_observable(flow, 0)
    fc = sy.ensemble_forecast(flow, dens, 500, [0.0], [obs], seed=2)
    draws = sy.sample_von_mises(dens, 500, 2, seed=2)
    np.testing.assert_allclose(fc.means[0, 0], obs(draws).mean(), atol=1e-12)


@pytest.mark.slow
def test_ensemble_mixing_approaches_ergodic_mean():
    # the pushed-forward measure relaxes toward the invariant one; the
    # relaxation is oscillatory (near-recurrences of the quasi-periodic base
    # flow), so the robust statistic is the time-averaged forecast mean
    spec = sy.mixing3()
    dens = sy.DensitySpec(locations=(np.pi, np.pi, np.pi), concentration=30.0)
    obs = sy.embedding_observable(spec, 0)
    times = np.linspace(100.0, 500.0, 17)
    fc = sy.ensemble_forecast(spec, dens, 600, times, [obs], seed=6, max_step=0.05)
    ergodic = math.exp(-spec.psi_decay) / 2.0  # first-harmonic content of the time change
    initial = sy.ensemble_forecast(spec, dens, 600, [0.0], [obs], seed=6)
    assert abs(initial.means[0, 0] - ergodic) > 0.8
    assert abs(fc.means[0].mean() - ergodic) < 0.1


def test_rejection_sampling_bounded_attempts():
    dens = sy.DensitySpec(locations=(0.0, 0.0), concentration=40.0)
    with pytest.raises(SamplingError):
        sy.sample_von_mises(dens, 200000, 2, seed=0, max_batches=1)
