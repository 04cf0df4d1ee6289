from __future__ import annotations

import math

import numpy as np
import pytest

from nonlocal_diffusion import (
    AtomicMeasure,
    CoefficientField,
    SemigroupEvolver,
    UniformBallDensity,
    build_exhaustion,
    build_operator,
    builtin_operator,
    estimate_expectation,
    estimate_invariant,
    evolve,
    simulate_paths,
)
from nonlocal_diffusion.errors import NumericalError
from nonlocal_diffusion.montecarlo import BLOCK, ParticleEnsemble, return_distribution_test
from nonlocal_diffusion.resolvent import cell_average

OU = builtin_operator("ou")
D2 = AtomicMeasure.dirac([2.0])


def _field(a_val, drift):
    return CoefficientField(
        1,
        lambda x: np.full((len(x), 1, 1), a_val),
        drift,
        lambda x: np.ones(len(x)),
        "test",
    )


def test_frozen_dynamics(half_line):
    ens = simulate_paths(_field(0.0, np.zeros_like), D2, half_line, [2.0], 1.0, 0.01, 100, 1)
    assert np.all(ens.positions == 2.0) and ens.hits.sum() == 0


def test_deterministic_flow_hits_at_log2(half_line):
    dt = 1e-4
    ens = simulate_paths(_field(0.0, lambda x: -x), D2, half_line, [2.0], 0.7, dt, 10, 1, record_jumps=True)
    assert np.all(np.abs(ens.first_hit - math.log(2)) <= 2 * dt)
    np.testing.assert_allclose(ens.jumps_x, 2.0)
    np.testing.assert_allclose(ens.jumps_z, 1.0)


def test_negative_diffusion_aborts(half_line):
    with pytest.raises(NumericalError) as info:
        simulate_paths(_field(-1.0, np.zeros_like), D2, half_line, [2.0], 0.1, 0.01, 10, 1)
    assert "location" in info.value.diagnostics


def test_bad_inputs(half_line):
    with pytest.raises(ValueError):
        simulate_paths(OU, D2, half_line, [0.5], 0.1, 0.01, 10, 1)
    with pytest.raises(ValueError):
        simulate_paths(OU, D2, half_line, [2.0], 0.1, 0.0, 10, 1)


def test_reproducible_and_job_independent(half_line):
    kw = dict(t=0.2, dt=0.01, N=BLOCK + 100, seed=99)
    a = simulate_paths(OU, D2, half_line, [2.0], **kw)
    b = simulate_paths(OU, D2, half_line, [2.0], **kw)
    c = simulate_paths(OU, D2, half_line, [2.0], jobs=2, **kw)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.positions, c.positions)
    d = simulate_paths(OU, D2, half_line, [2.0], **{**kw, "seed": 100})
    assert not np.array_equal(a.positions, d.positions)


def test_particles_stay_inside(half_line, exterior2d):
    ens = simulate_paths(OU, D2, half_line, [1.2], 1.0, 0.01, 2000, 3)
    assert np.all(ens.positions > 1.0)
    ens = simulate_paths(builtin_operator("ou", 2), AtomicMeasure.radial(2.0, 2), exterior2d, [1.2, 0.0], 1.0, 0.01, 2000, 3)
    assert np.all(np.linalg.norm(ens.positions, axis=1) > 1.0)


def _ensemble(X):
    n = len(X)
    return ParticleEnsemble(X, 0.0, 0, 0.1, np.zeros(n), np.full(n, np.nan), np.abs(X[:, 0]), {})


def test_estimate_expectation_examples(rng):
    X = rng.uniform(1.5, 2.5, size=(100_000, 1))
    ens = _ensemble(X)
    e = estimate_expectation(ens, lambda x: np.full(len(x), 3.0))
    assert e.mean == 3.0 and e.se == 0.0
    assert estimate_expectation(ens, lambda x: ((x[:, 0] >= 1.5) & (x[:, 0] <= 2.5)).astype(float)).mean == 1.0
    assert estimate_expectation(ens, lambda x: np.tanh(x[:, 0] - 2)).se <= 1 / math.sqrt(len(X))
    with pytest.raises(ValueError):
        estimate_expectation(_ensemble(X[:1]), np.sin)


def test_pde_cross_check(half_line):
    op = build_operator(half_line, OU, D2, 8, 0.01)
    f = lambda x: ((x[:, 0] >= 1.5) & (x[:, 0] <= 2.5)).astype(float)
    u = evolve(SemigroupEvolver(op, 0.002), cell_average(op.grid, f), 0.5)
    pde = u.values[op.grid.nearest_node(np.array([2.0]))]
    e = estimate_expectation(simulate_paths(OU, D2, half_line, [2.0], 0.5, 0.002, 8000, 11), f)
    assert e.agrees(pde, 3.0)


def test_generator_consistency(half_line):
    f = lambda x: np.exp(-((x[:, 0] - 3) ** 2))
    t = 0.05
    e = estimate_expectation(simulate_paths(OU, D2, half_line, [3.0], t, 0.001, 40000, 5), f)
    # A f(3) = -2 and A^2 f(3) = -2 for the OU generator
    assert abs((e.mean - 1.0) / t - (-2.0)) <= 3 * e.se / t + t * 2.0


def test_dt_refinement_stable(half_line):
    f = lambda x: ((x[:, 0] >= 1.5) & (x[:, 0] <= 2.5)).astype(float)
    est = [estimate_expectation(simulate_paths(OU, D2, half_line, [2.0], 0.5, dt, 8000, 21), f) for dt in (0.004, 0.002)]
    assert abs(est[0].mean - est[1].mean) <= 3 * math.hypot(est[0].se, est[1].se)


def test_return_law_atomic(half_line):
    ens = simulate_paths(OU, D2, half_line, [1.5], 1.0, 0.01, 2000, 4, record_jumps=True)
    assert len(ens.jumps_z) > 100
    assert return_distribution_test(D2, ens.jumps_z, ens.jumps_x).passed
    wrong = ens.jumps_x + 0.01
    assert not return_distribution_test(D2, ens.jumps_z, wrong).passed


def test_return_law_mixture(exterior2d):
    from nonlocal_diffusion.measures import Atom

    spec = AtomicMeasure((Atom(0.3, scale=2.0), Atom(0.7, scale=3.0)), 2)
    ens = simulate_paths(builtin_operator("ou", 2), spec, exterior2d, [1.5, 0.0], 1.0, 0.01, 2000, 4, record_jumps=True)
    assert return_distribution_test(spec, ens.jumps_z, ens.jumps_x).passed


def test_return_law_density(half_line, rng):
    spec = UniformBallDensity(0.5, center=(2.0,))
    ens = simulate_paths(OU, spec, half_line, [1.5], 1.0, 0.01, 2000, 4, record_jumps=True)
    assert return_distribution_test(spec, ens.jumps_z, ens.jumps_x).passed
    skewed = 1.5 + rng.beta(2, 1, size=(len(ens.jumps_z), 1))
    assert not return_distribution_test(spec, ens.jumps_z, skewed).passed


def test_zero_noise_cycle_occupation(half_line):
    grid = build_exhaustion(half_line, 3, 0.05)
    occ = estimate_invariant(_field(0.0, lambda x: -x), D2, half_line, grid, [2.0], 1.0, 4.0, 0.001, 16, 3)
    x = grid.points[:, 0]
    assert occ.masses[(x < 0.975) | (x > 2.025)].sum() == 0
    # time on the cycle 2 -> 1 spent below sqrt(2) is half of ln 2
    assert occ.masses[x <= math.sqrt(2)].sum() == pytest.approx(0.5, abs=0.05)


def test_brownian_occupation_does_not_settle(half_line):
    grid = build_exhaustion(half_line, 6, 0.1)
    occ = estimate_invariant(builtin_operator("brownian"), D2, half_line, grid, [2.0], 1.0, 16.0, 0.01, 1000, 3,
                             window_radius=3.0)
    assert not occ.stabilizes
    assert occ.escapes > 0
