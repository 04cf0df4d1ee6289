from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonlocal_diffusion import AtomicMeasure, DomainSpec, ParetoDensity, UniformBallDensity, build_exhaustion
from nonlocal_diffusion.errors import DivergentIntegralError
from nonlocal_diffusion.measures import (
    Atom,
    check_monotone,
    concentration_check,
    continuity_diagnostic,
    discretize_measure,
    measure_from_config,
    second_moment_sup,
    truncate_measure,
)

UNIFORM = UniformBallDensity(0.5, center=(2.0,))  # uniform on (1.5, 2.5)
Z1 = np.array([1.0])


def _row(spec, grid, z=Z1):
    idx, w, deficit = discretize_measure(spec, z, grid)
    return dict(zip(grid.points[idx, 0].round(12), w)), deficit


def test_atom_on_node(half_line):
    row, deficit = _row(AtomicMeasure.dirac([2.0]), build_exhaustion(half_line, 3, 0.5))
    assert row == {2.0: pytest.approx(1.0)} and deficit == 0


def test_atom_between_nodes(half_line):
    row, _ = _row(AtomicMeasure.dirac([2.25]), build_exhaustion(half_line, 3, 0.5))
    assert row == {2.0: pytest.approx(0.5), 2.5: pytest.approx(0.5)}


def test_atom_outside_grid_recorded_as_deficit(half_line):
    row, deficit = _row(AtomicMeasure.dirac([7.0]), build_exhaustion(half_line, 2, 0.5))
    assert not row and deficit == 1.0


@pytest.mark.parametrize("h", [0.25, 0.125, 0.0625])
def test_uniform_density_total(half_line, h):
    row, _ = _row(UNIFORM, build_exhaustion(half_line, 3, h))
    assert abs(sum(row.values()) - 1.0) <= h
    assert all(w >= 0 for w in row.values())


def test_truncated_atom_inside(half_line):
    for n in (2, 3, 5):
        g = build_exhaustion(half_line, n, 0.5)
        tm = truncate_measure(AtomicMeasure.dirac([2.0]), n, g)
        assert tm.masses.tolist() == pytest.approx([1.0])


@pytest.mark.parametrize("n", [2, 3, 4])
def test_truncated_atom_on_ramp(half_line, n):
    g = build_exhaustion(half_line, n, 0.5)
    tm = truncate_measure(AtomicMeasure.dirac([n + 0.5]), n, g)
    assert tm.masses[0] == pytest.approx(0.5)


def test_artificial_rows_zero(exterior2d):
    g = build_exhaustion(exterior2d, 2, 0.25)
    tm = truncate_measure(AtomicMeasure.radial(2.0, 2), 2, g)
    full = tm.full_matrix()
    assert full[np.flatnonzero(g.artificial)].nnz == 0
    assert set(tm.boundary_nodes) == set(np.flatnonzero(g.physical))
    assert np.all(tm.masses <= 1 + 1e-12) and np.all(tm.rows.data >= 0)


def _pair(domain, spec, n, h=0.5):
    g0, g1 = build_exhaustion(domain, n, h), build_exhaustion(domain, n + 1, h)
    return truncate_measure(spec, n, g0), truncate_measure(spec, n + 1, g1)


def test_monotone_identical_rows(half_line):
    t2, t3 = _pair(half_line, AtomicMeasure.dirac([2.0]), 2)
    rep = check_monotone(t2, t3)
    assert rep.passed and rep.worst_excess == 0.0


@pytest.mark.parametrize("n, w_n, w_next", [(1, 0.0, 0.5), (2, 0.5, 1.0)])
def test_monotone_ramp(half_line, n, w_n, w_next):
    tn, tnext = _pair(half_line, AtomicMeasure.dirac([2.5]), n)
    assert tn.masses.sum() == pytest.approx(w_n) and tnext.masses.sum() == pytest.approx(w_next)
    assert check_monotone(tn, tnext).passed


def test_monotone_detects_corruption(half_line):
    t2, t3 = _pair(half_line, AtomicMeasure.dirac([2.0]), 2)
    bad = t3.rows.copy()
    bad.data[0] -= 0.1
    rep = check_monotone(t2, dataclasses.replace(t3, rows=bad))
    assert not rep.passed and rep.worst_excess == pytest.approx(0.1)


def test_monotone_grid_mismatch(half_line):
    a = truncate_measure(AtomicMeasure.dirac([2.0]), 2, build_exhaustion(half_line, 2, 0.5))
    b = truncate_measure(AtomicMeasure.dirac([2.0]), 3, build_exhaustion(half_line, 3, 0.25))
    with pytest.raises(ValueError):
        check_monotone(a, b)


def test_concentration_examples(half_line):
    rep = concentration_check(AtomicMeasure.dirac([2.0]), half_line, 2, 1.0)
    assert rep.passed and rep.min_mass == 1.0
    rep = concentration_check(UNIFORM, half_line, 2, 0.5)
    assert rep.passed and rep.min_mass == pytest.approx(1.0)
    assert rep.smallest_n_half == 1


def test_concentration_fails_for_far_atom(half_line):
    rep = concentration_check(AtomicMeasure.dirac([5.0]), half_line, 2, 0.5)
    assert not rep.passed and rep.smallest_n_half == 5  # open ball B_{N+1} must contain 5


def test_second_moments(half_line):
    assert second_moment_sup(AtomicMeasure.dirac([2.0]), half_line) == pytest.approx(4.0)
    assert second_moment_sup(UNIFORM, half_line) == pytest.approx((2.5**3 - 1.5**3) / 3)
    assert second_moment_sup(ParetoDensity(3.0), half_line) == pytest.approx(3.0)
    with pytest.raises(DivergentIntegralError):
        second_moment_sup(ParetoDensity(1.5), half_line)


def test_measure_validation(half_line):
    with pytest.raises(ValueError):
        AtomicMeasure((Atom(0.5, point=(2.0,)),))
    with pytest.raises(ValueError):
        AtomicMeasure.dirac([0.5]).validate(half_line)
    spec = measure_from_config({"density": {"name": "uniform-ball", "radius": 0.5, "center": [2.0]}}, 1)
    assert spec == UNIFORM


def test_continuity_diagnostic_decreases(exterior2d):
    jumps = continuity_diagnostic(AtomicMeasure.radial(2.0, 2), exterior2d)
    assert all(b < a for a, b in zip(jumps, jumps[1:]))


@settings(max_examples=40, deadline=None)
@given(x=st.floats(1.01, 3.99), n=st.integers(1, 3), h=st.sampled_from([0.5, 0.25, 0.1]))
def test_rows_nonnegative_mass_at_most_one(x, n, h):
    dom = DomainSpec.half_line(1.0)
    g = build_exhaustion(dom, n, h)
    tm = truncate_measure(AtomicMeasure.dirac([x]), n, g)
    assert np.all(tm.rows.data >= 0) and np.all(tm.masses <= 1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1.2, 3.5), n=st.integers(1, 3))
def test_truncation_monotone_property(scale, n):
    dom = DomainSpec.ball_exterior(1.0, 2)
    t0, t1 = _pair(dom, AtomicMeasure.radial(scale, 2), n, 0.5)
    assert check_monotone(t0, t1).passed
