"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line."""

from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from nonlocal_diffusion import (
    AtomicMeasure,
    MeasureVector,
    SemigroupEvolver,
    build_operator,
    builtin_operator,
    exhaust_resolvent,
    markov_defect,
    simulate_paths,
    solve_resolvent,
    tv_distance,
)
from nonlocal_diffusion.domain import build_exhaustion
from nonlocal_diffusion.invariant import abel_invariant, abel_sequence, convergence_study, rebin, stationary_solve
from nonlocal_diffusion.lyapunov import modify_lyapunov, quadratic_lyapunov, verify_invariant_lyapunov, verify_uniqueness_lyapunov
from nonlocal_diffusion.montecarlo import estimate_expectation, return_distribution_test
from nonlocal_diffusion.resolvent import cell_average, dense_resolvent, resolvent_identity_residual
from nonlocal_diffusion.semigroup import chapman_kolmogorov_residual, trajectory
from nonlocal_diffusion.workflows import _occupation
from nonlocal_diffusion.workflows import test_functions as probe_functions

LAMBDAS = (0.25, 0.5, 1.0, 2.0, 4.0)


def report(number: int, title: str, passed: bool, detail: str):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert passed, line


@pytest.fixture(scope="module")
def ou1d_op(ou1d_ctx):
    return ou1d_ctx.operator()


@pytest.fixture(scope="module")
def ou1d_stationary(ou1d_op, ou1d_ctx):
    return stationary_solve(ou1d_op, tau=ou1d_ctx.num["tau"])


def test_criterion_01_contraction_positivity(ou1d_ctx, ou2d_ctx):
    start = time.perf_counter()
    worst_c, worst_p = -math.inf, math.inf
    for ctx in (ou1d_ctx, ou2d_ctx):
        op = ctx.operator()
        rng = np.random.default_rng(ctx.cfg.seed)
        for _ in range(200):
            f = rng.uniform(-1, 1, op.size)
            for lam in LAMBDAS:
                u = solve_resolvent(op, lam, f, check=False).values
                up = solve_resolvent(op, lam, np.abs(f), check=False).values
                worst_c = max(worst_c, lam * np.abs(u).max() / np.abs(f[op.interior]).max() - 1)
                worst_p = min(worst_p, float(up.min()))
    elapsed = time.perf_counter() - start
    ok = worst_c <= 1e-9 and worst_p >= -1e-12 and elapsed < 60
    report(1, "resolvent contraction and positivity", ok,
           f"max ||lam R f||/||f|| - 1 = {worst_c:.2e} (<= 1e-9), min R|f| = {worst_p:.2e} (>= -1e-12), "
           f"{elapsed:.1f} s (< 60 s)")


def test_criterion_02_pseudoresolvent(ou1d_op, half_line):
    rng = np.random.default_rng(2)
    f = rng.uniform(-1, 1, ou1d_op.size)
    worst = max(resolvent_identity_residual(ou1d_op, a, b, f) / np.abs(f).max()
                for a, b in itertools.permutations(LAMBDAS, 2))
    small = build_operator(half_line, builtin_operator("ou"), AtomicMeasure.dirac([2.0]), 2, 0.1)
    dense_err = 0.0
    for lam in LAMBDAS:
        R = dense_resolvent(small, lam)
        for _ in range(10):
            g = rng.uniform(-1, 1, small.size)
            dense_err = max(dense_err, float(np.abs(solve_resolvent(small, lam, g).values - R @ g).max()))
    ok = worst <= 1e-8 and dense_err <= 1e-12 and small.size <= 50
    report(2, "pseudoresolvent identity", ok,
           f"relative residual {worst:.2e} (<= 1e-8), dense oracle on {small.size} nodes {dense_err:.2e} (<= 1e-12)")


def test_criterion_03_monotone_exhaustion(ou1d_ctx):
    ctx = ou1d_ctx
    f = lambda x: np.exp(-((x[:, 0] - 2.5) ** 2)) + 0.5 * (x[:, 0] > 4)
    res = exhaust_resolvent(ctx.domain, ctx.coeff, ctx.spec, 1.0, f, ctx.num["h"], ctx.window_radius, 1e-8,
                            min_steps=8)
    n0 = res.ns[0]
    ok = min(res.min_increments) >= -1e-12 and res.ns[-1] >= n0 + 8 and res.increments[-1] < 1e-8
    report(3, "monotone exhaustion", ok,
           f"n = {n0}..{res.ns[-1]}, min increment {min(res.min_increments):.2e} (>= -1e-12), "
           f"final sup increment {res.increments[-1]:.2e} (< 1e-8)")


def _truncated_closed_form(n: int):
    """u = 1 + A e^x + B e^-x with u(n + 1) = 0 and u(1) = u(2): the continuum solution on the truncation."""
    L = n + 1.0
    M = np.array([[math.exp(L), math.exp(-L)], [math.e - math.e**2, math.exp(-1) - math.exp(-2)]])
    A, B = np.linalg.solve(M, [-1.0, 0.0])
    return lambda x: 1 + A * np.exp(x) + B * np.exp(-x)


def test_criterion_04_closed_form(half_line):
    bm, d2 = builtin_operator("brownian"), AtomicMeasure.dirac([2.0])
    spacings = (0.1, 0.05, 0.025)
    sup_err = []
    for h in spacings:
        res = exhaust_resolvent(half_line, bm, d2, 1.0, 1.0, h, 3.0)
        sup_err.append(float(np.abs(res.values - 1).max()))
    bound_ok = all(e <= 1.0 * h for e, h in zip(sup_err, spacings))
    n = 3
    exact = _truncated_closed_form(n)
    disc = []
    for h in spacings:
        op = build_operator(half_line, bm, d2, n, h)
        u = solve_resolvent(op, 1.0, np.ones(op.size)).values
        m = op.grid.window_mask(3.0)
        disc.append(float(np.abs(u[m] - exact(op.grid.points[m, 0])).max()))
    orders = [math.log2(a / b) for a, b in zip(disc, disc[1:])]
    ok = bound_ok and min(orders) >= 1
    report(4, "closed-form solve u = 1", ok,
           f"||u_h - 1|| = {', '.join(f'{e:.1e}' for e in sup_err)} (<= h), "
           f"observed order {', '.join(f'{o:.2f}' for o in orders)} (>= 1)")


def test_criterion_05_markov_under_lyapunov(ou1d_ctx, ou2d_ctx):
    details, ok = [], True
    V = quadratic_lyapunov()
    for name, ctx in (("1D", ou1d_ctx), ("2D", ou2d_ctx)):
        op = ctx.operator()
        h = ctx.num["h"]
        grids = [build_exhaustion(ctx.domain, k, h) for k in (op.grid.n - 1, op.grid.n)]
        uniq = verify_uniqueness_lyapunov(V, ctx.coeff, 1.0, grids)
        tau = ctx.num["tau"]
        defect = markov_defect(SemigroupEvolver(op, tau), 1.0, ctx.window_radius)
        small = build_operator(ctx.domain, ctx.coeff, ctx.spec, ctx.n0, h, ctx.window_radius)
        frozen = markov_defect(SemigroupEvolver(small, tau), 1.0, ctx.window_radius)
        ok &= uniq.passed and defect <= 1e-3 and frozen > defect
        details.append(f"{name}: Lyapunov r={uniq.radius:.3f} {'ok' if uniq.passed else 'fails'}, "
                       f"defect n={op.grid.n} {defect:.1e} (<= 1e-3) < frozen n={ctx.n0} {frozen:.1e}")
    report(5, "Markov property under Lyapunov", ok, "; ".join(details))


def test_criterion_06_chapman_kolmogorov(ou1d_op, ou1d_ctx):
    ev = SemigroupEvolver(ou1d_op, ou1d_ctx.num["tau"])
    rng = np.random.default_rng(6)
    worst = max(chapman_kolmogorov_residual(ev, rng.uniform(-1, 1, ou1d_op.size), 4 * ev.tau, 4 * ev.tau)
                for _ in range(100))
    report(6, "Chapman-Kolmogorov exactness", worst <= 1e-12, f"max residual over 100 draws {worst:.2e} (<= 1e-12)")


def test_criterion_07_invariant_triple(ou1d_ctx, ou1d_op, ou1d_stationary):
    ctx = ou1d_ctx
    lams = abel_sequence(ctx.num["abel_kmax"])
    ab0 = abel_invariant(ou1d_op, ctx.x0("x0"), lams, ctx.num["tv_tol"], ctx.window_radius)
    ab1 = abel_invariant(ou1d_op, ctx.x0("x1"), lams, ctx.num["tv_tol"], ctx.window_radius)
    bin_grid, occ = _occupation(ctx, ou1d_op)
    budget = ctx.num["particles"] * (ctx.task["burn_in"] + ctx.task["horizon"])
    abel_b, stat_b = rebin(ab0.limit, bin_grid).masses, rebin(ou1d_stationary.measure, bin_grid).masses
    tv_as = tv_distance(ab0.limit, ou1d_stationary.measure)
    tv_am = tv_distance(abel_b, occ.masses)
    tv_sm = tv_distance(stat_b, occ.masses)
    tv_x = tv_distance(ab0.limit, ab1.limit)
    ok = max(tv_as, tv_am, tv_sm) <= 0.05 and tv_x <= 2e-3 and budget >= 1e5
    report(7, "invariant measure triple agreement", ok,
           f"TV abel/stationary {tv_as:.1e}, abel/MC {tv_am:.3f}, stationary/MC {tv_sm:.3f} (<= 0.05); "
           f"abel x0 vs x1 {tv_x:.1e} (<= 2e-3); MC budget {budget:.0e} particle-time units")


def test_criterion_08_tv_convergence(ou1d_ctx, ou1d_op, ou1d_stationary):
    ctx = ou1d_ctx
    ev = SemigroupEvolver(ou1d_op, ctx.num["tau"])
    horizon = float(ctx.task["horizon"])
    times = [round(horizon * k / 16 / ev.tau) * ev.tau for k in range(1, 17)]
    node = ou1d_op.grid.nearest_node(ctx.x0("x0"))
    rep = convergence_study(ev, MeasureVector.dirac(ou1d_op.grid, node), ou1d_stationary.measure, times)
    ok = rep.final_tv < 1e-2 and rep.nonincreasing_after is not None
    report(8, "TV convergence to the invariant measure", ok,
           f"TV at t={times[-1]:g}: {rep.final_tv:.1e} (< 1e-2), nonincreasing from t={rep.nonincreasing_after}")


def test_criterion_09_negative_control(bm1d_ctx):
    ctx = bm1d_ctx
    op = ctx.operator()
    V = quadratic_lyapunov()
    inv = verify_invariant_lyapunov(V, ctx.coeff, ctx.spec, ctx.domain)
    gen = V.generator(ctx.coeff, op.grid.points)
    ab = abel_invariant(op, ctx.x0("x0"), [1.0, 2.0**-10], window_radius=ctx.window_radius)
    _, occ = _occupation(ctx, op)
    grids = [build_exhaustion(ctx.domain, k, ctx.num["h"]) for k in (op.grid.n - 1, op.grid.n)]
    uniq = verify_uniqueness_lyapunov(V, ctx.coeff, 1.0, grids)
    defect = markov_defect(SemigroupEvolver(op, ctx.num["tau"]), 1.0, ctx.window_radius)
    ok = (not inv.passed and not inv.conditions["drift"][0] and np.allclose(gen, 2 * ctx.domain.dim)
          and ab.window_masses[1] < ab.window_masses[0] and not occ.stabilizes and uniq.passed and defect <= 1e-3)
    report(9, "negative control (Brownian motion)", ok,
           f"invariant Lyapunov {'fails' if not inv.passed else 'passes'} (A V = {gen[0]:g}), "
           f"Abel window mass {ab.window_masses[0]:.3f} -> {ab.window_masses[1]:.3f}, "
           f"MC occupation stabilizes={occ.stabilizes} (window mass per segment "
           f"{', '.join(f'{m:.3f}' for m in occ.segment_window_mass)}), uniqueness r={uniq.radius:.2f}, "
           f"Markov defect {defect:.1e}")


def test_criterion_10_oracle_cross_check(ou1d_ctx, ou1d_op):
    ctx = ou1d_ctx
    x0 = ctx.x0("x0")
    node = ou1d_op.grid.nearest_node(x0)
    times = [0.5, 1.0, 2.0]
    ev = SemigroupEvolver(ou1d_op, ctx.num["tau"])
    ens = simulate_paths(ctx.coeff, ctx.spec, ctx.domain, x0, times[-1], ctx.num["dt"], ctx.num["particles"],
                         ctx.cfg.seed, snapshot_times=times, record_jumps=True)
    worst_z, fails = 0.0, 0
    for name, f in probe_functions(1).items():
        for t, u in zip(times, trajectory(ev, cell_average(ou1d_op.grid, f), times)):
            e = estimate_expectation(ens, f, t)
            z = abs(u.values[node] - e.mean) / e.se
            worst_z = max(worst_z, z)
            fails += not e.agrees(u.values[node], 3.0)
    ret = return_distribution_test(ctx.spec, ens.jumps_z, ens.jumps_x)
    ok = fails == 0 and ret.passed
    report(10, "PDE versus Monte Carlo", ok,
           f"15 comparisons, worst |PDE - MC| = {worst_z:.2f} SE (<= 3), return-law test p={ret.pvalue:.2f} "
           f"over {ret.samples} jumps")


def test_criterion_11_modified_lyapunov(ou1d_ctx):
    ctx = ou1d_ctx
    mod = modify_lyapunov(ctx.spec, ctx.domain)
    inv = verify_invariant_lyapunov(mod.spec, ctx.coeff, ctx.spec, ctx.domain)
    top = mod.M + 1
    chain_ok = all(lhs <= top * (1 + 1e-12) and abs(vz - top) <= 1e-12 for lhs, _, vz in mod.chain)
    ok = inv.passed and mod.chain_holds and chain_ok
    worst = max(lhs for lhs, _, _ in mod.chain)
    report(11, "modified Lyapunov function", ok,
           f"M={mod.M:g}, eps={mod.eps:g}, max int V~ dmu(z) = {worst:g} <= M+1 = V~(z) = {top:g} "
           f"at {len(mod.chain)} boundary samples, conditions: "
           + ", ".join(f"{k} {'ok' if v[0] else 'fails'}" for k, v in inv.conditions.items()))
