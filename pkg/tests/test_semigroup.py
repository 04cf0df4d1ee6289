from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_diffusion import AtomicMeasure, SemigroupEvolver, build_operator, builtin_operator, evolve, markov_defect, solve_resolvent
from nonlocal_diffusion.semigroup import (
    chapman_kolmogorov_residual,
    generator_consistency,
    kernel_row,
    laplace_consistency,
    lipschitz_modulus,
    strong_feller_diagnostic,
    trajectory,
)

OU = builtin_operator("ou")
D2 = AtomicMeasure.dirac([2.0])


@pytest.fixture(scope="module")
def ev(ou_op):
    return SemigroupEvolver(ou_op, 0.01)


def test_zero_and_identity(ev, rng):
    assert np.all(evolve(ev, np.zeros(ev.grid.size), 0.5).values == 0)
    f = rng.uniform(-1, 1, ev.grid.size)
    assert np.array_equal(evolve(ev, f, 0.0).values, f)


def test_time_off_lattice_rejected(ev):
    with pytest.raises(ValueError):
        evolve(ev, np.ones(ev.grid.size), 0.015)
    with pytest.raises(ValueError):
        SemigroupEvolver(ev.op, 0.0)


def test_markov_constant(ev):
    u = evolve(ev, np.ones(ev.grid.size), 1.0)
    assert np.max(np.abs(u.window(3.0) - 1)) <= 1e-6


def test_markov_defect_ordering(half_line, ev):
    small = SemigroupEvolver(build_operator(half_line, OU, D2, 2, 0.05), 0.01)
    big = markov_defect(ev, 1.0, 3.0)
    assert big <= 1e-4
    assert markov_defect(small, 1.0, 3.0) > big
    assert markov_defect(small, 0.02, 3.0) >= markov_defect(small, 0.01, 3.0)


def test_sub_markov_and_kernel_rows(ev):
    one = evolve(ev, np.ones(ev.grid.size), 2.0).values
    assert one.max() <= 1 + 1e-9
    for x in (1.05, 2.0, 4.0, 6.5):
        node = ev.grid.nearest_node(np.array([x]))
        row = kernel_row(ev, node, 0.5)
        assert row.min() >= -1e-12 and row.sum() <= 1 + 1e-9


def test_trajectory_matches_evolve(ev, rng):
    f = rng.uniform(0, 1, ev.grid.size)
    snaps = trajectory(ev, f, [0.1, 0.3])
    np.testing.assert_array_equal(snaps[1].values, evolve(ev, f, 0.3).values)


def test_chapman_kolmogorov_examples(ev, rng):
    for _ in range(100):
        f = rng.uniform(-1, 1, ev.grid.size)
        assert chapman_kolmogorov_residual(ev, f, 0.04, 0.04) <= 1e-12
    one = np.ones(ev.grid.size)
    assert chapman_kolmogorov_residual(ev, one, 0.04, 0.04) <= 1e-12


def test_generator_consistency_first_order(ou_op):
    f = solve_resolvent(ou_op, 1.0, np.ones(ou_op.size)).values
    res = [generator_consistency(SemigroupEvolver(ou_op, tau), f, 1.0, 3.0) for tau in (0.02, 0.01, 0.005)]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-2] / res[-1] == pytest.approx(2.0, rel=0.2)
    ev = SemigroupEvolver(ou_op, 0.01)
    assert generator_consistency(ev, f, 0.0) == 0.0
    assert generator_consistency(ev, np.ones(ou_op.size), 1.0, 3.0) <= 1e-6


def test_laplace_consistency(ou_op):
    f = np.exp(-((ou_op.grid.points[:, 0] - 2) ** 2))
    res = [laplace_consistency(SemigroupEvolver(ou_op, tau), f, 1.0, 3.0) for tau in (0.02, 0.01)]
    assert res[1] < res[0] and res[1] <= 0.05
    with pytest.raises(ValueError):
        laplace_consistency(SemigroupEvolver(ou_op, 0.2), f, 1.0)


def test_strong_feller(half_line):
    rep = strong_feller_diagnostic(half_line, OU, D2, 6, 0.04, ([1.5], [2.5]), 1.0, 0.01, window_radius=3.0)
    assert rep.stabilizes
    rep0 = strong_feller_diagnostic(half_line, OU, D2, 6, 0.04, ([1.5], [2.5]), 0.0, 0.01, window_radius=3.0)
    assert not rep0.stabilizes and rep0.ratios[-1] == pytest.approx(2.0, rel=0.1)


def test_continuous_data_bounded_modulus(half_line):
    moduli = []
    for h in (0.04, 0.02, 0.01):
        op = build_operator(half_line, OU, D2, 6, h)
        f = np.tanh(op.grid.points[:, 0] - 2)
        for t in (0.0, 0.5):
            moduli.append(lipschitz_modulus(evolve(SemigroupEvolver(op, 0.01), f, t), 3.0))
    assert max(moduli) <= 1.0 + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_one_step_positive_contractive(ev, seed):
    f = np.random.default_rng(seed).uniform(-1, 1, ev.grid.size)
    v = ev.step(f)
    assert np.abs(v).max() <= np.abs(f[ev.op.interior]).max() * (1 + 1e-9)
    assert ev.step(np.abs(f)).min() >= -1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 6), j=st.integers(1, 6))
def test_chapman_kolmogorov_property(ev, seed, k, j):
    f = np.random.default_rng(seed).uniform(-1, 1, ev.grid.size)
    assert chapman_kolmogorov_residual(ev, f, k * ev.tau, j * ev.tau) <= 1e-12
