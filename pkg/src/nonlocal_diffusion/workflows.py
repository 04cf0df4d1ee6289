"""Config-driven workflows behind the CLI subcommands.

Each ``run_*`` function writes its artifacts into ``out`` and returns a
report dictionary with a boolean ``passed`` entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .domain import DomainSpec, build_exhaustion
from .expressions import compile_expression
from .invariant import (
    MeasureVector,
    abel_invariant,
    abel_sequence,
    convergence_study,
    rebin,
    stationary_solve,
    tv_distance,
)
from .io import provenance, write_json, write_table
from .lyapunov import modify_lyapunov, quadratic_lyapunov, verify_invariant_lyapunov, verify_uniqueness_lyapunov
from .measures import BoundaryMeasureSpec, check_monotone, concentration_check, truncate_measure
from .montecarlo import estimate_expectation, estimate_invariant, return_distribution_test, simulate_paths
from .operators import CoefficientField, check_ellipticity
from .resolvent import (
    DiscreteOperator,
    ExhaustionResult,
    GridFunction,
    build_operator,
    cell_average,
    condition_estimate,
    default_n0,
    exhaust_resolvent,
    resolvent_identity_residual,
)
from .semigroup import SemigroupEvolver, markov_defect, trajectory

logger = logging.getLogger(__name__)


@dataclass
class Context:
    cfg: RunConfig
    domain: DomainSpec
    coeff: CoefficientField
    spec: BoundaryMeasureSpec
    _op: DiscreteOperator | None = field(default=None, repr=False)
    _exhaustion: ExhaustionResult | None = field(default=None, repr=False)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> Context:
        return cls(cfg, cfg.build_domain(), cfg.build_operator(), cfg.build_measure())

    @property
    def num(self) -> dict:
        return self.cfg.numerics

    @property
    def task(self) -> dict:
        return self.cfg.task

    @property
    def n0(self) -> int:
        return default_n0(self.domain, self.spec)

    @property
    def window_radius(self) -> float:
        w = self.num["window_radius"]
        return float(self.n0 + 1 if w is None else w)

    def header(self, producer: str) -> str:
        return provenance(producer, self.cfg.config_hash(), self.cfg.seed)

    def json(self, path, producer: str, payload: dict):
        write_json(path, producer, self.cfg.config_hash(), self.cfg.seed, payload)

    def operator(self) -> DiscreteOperator:
        """Largest truncation: fixed ``numerics.n`` or the end of the exhaustion of ``R(1) 1``."""
        if self._op is None:
            n = self.num["n"]
            if n is not None:
                self._op = build_operator(self.domain, self.coeff, self.spec, n, self.num["h"], self.window_radius)
            else:
                self._exhaustion = exhaust_resolvent(
                    self.domain, self.coeff, self.spec, 1.0, 1.0, self.num["h"], self.window_radius,
                    self.num["tol"], max_n=self.num["max_n"],
                )
                self._op = self._exhaustion.operator
        return self._op

    def x0(self, key: str = "x0") -> np.ndarray:
        """Configured start point snapped to the nearest interior node."""
        op = self.operator()
        p = self.task[key]
        if p is None:
            p = self.domain.radius * np.eye(self.domain.dim)[0] * 2.0
        return op.grid.points[op.grid.nearest_node(np.asarray(p, dtype=float))]


def initial_callable(ctx: Context):
    t = ctx.task
    if t["initial"] == "constant":
        c = float(t["value"])
        return lambda x: np.full(len(x), c)
    if t["initial"] == "indicator":
        if t["box"] is None:
            raise ValueError("task.box is required for indicator initial data")
        lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in t["box"])
        return lambda x: np.all((x >= lo) & (x <= hi), axis=1).astype(float)
    return compile_expression(t["expression"], ctx.domain.dim, key="task.expression")


def test_functions(dim: int) -> dict:
    """Bounded test dictionary used for PDE versus Monte Carlo comparisons."""
    if dim == 1:
        return {
            "ind_mid": lambda x: ((x[:, 0] >= 1.5) & (x[:, 0] <= 2.5)).astype(float),
            "gauss": lambda x: np.exp(-((x[:, 0] - 2.0) ** 2)),
            "inv_r": lambda x: 1.0 / np.abs(x[:, 0]),
            "tanh": lambda x: np.tanh(x[:, 0] - 2.0),
            "ind_near": lambda x: (x[:, 0] <= 1.5).astype(float),
        }
    return {
        "ind_box": lambda x: ((np.abs(x[:, 0] - 2.0) <= 0.5) & (np.abs(x[:, 1]) <= 0.5)).astype(float),
        "gauss": lambda x: np.exp(-((x[:, 0] - 2.0) ** 2 + x[:, 1] ** 2)),
        "inv_r": lambda x: 1.0 / np.linalg.norm(x, axis=1),
        "tanh": lambda x: np.tanh(x[:, 0]),
        "ind_near": lambda x: (np.linalg.norm(x, axis=1) <= 1.5).astype(float),
    }


def _point_rows(grid, values: dict, mask=None):
    idx = np.arange(grid.size) if mask is None else np.flatnonzero(mask)
    for i in idx:
        yield [int(i), *(float(c) for c in grid.points[i]), *(float(v[i]) for v in values.values())]


def _coords(dim):
    return ["x", "y"][:dim]


# --------------------------------------------------------------------------- grid


def run_grid(ctx: Context, out: Path) -> dict:
    n = ctx.num["n"] or ctx.n0
    h = ctx.num["h"]
    grid = build_exhaustion(ctx.domain, n, h, ctx.window_radius)
    nxt = build_exhaustion(ctx.domain, n + 1, h, ctx.window_radius)
    tm, tm1 = truncate_measure(ctx.spec, n, grid), truncate_measure(ctx.spec, n + 1, nxt)
    ell = check_ellipticity(ctx.coeff, grid)
    mono = check_monotone(tm, tm1)
    conc = concentration_check(ctx.spec, ctx.domain, n, 0.5)
    nested = all(nxt.index_of(k) is not None for k in grid.keys)
    grid.to_csv(out / "grid.csv", ctx.header("domain.build_exhaustion"))
    tm.to_csv(out / "measure.csv", ctx.header("measures.truncate_measure"))
    report = {
        "n": n,
        "h": h,
        "nodes": grid.size,
        "interior": int(grid.interior.sum()),
        "physical": int(grid.physical.sum()),
        "artificial": int(grid.artificial.sum()),
        "nested_in_next": nested,
        "ellipticity": {"passed": ell.passed, "margin": ell.margin, "min_eta": ell.min_eta, "reason": ell.reason},
        "measure_monotone": {"passed": mono.passed, "worst_excess": mono.worst_excess},
        "measure_masses": {"min": float(tm.masses.min(initial=1.0)), "max": float(tm.masses.max(initial=0.0))},
        "concentration": {"passed": conc.passed, "min_mass": conc.min_mass, "smallest_n_half": conc.smallest_n_half},
    }
    report["passed"] = bool(nested and ell.passed and mono.passed)
    ctx.json(out / "grid.json", "domain.build_exhaustion", report)
    return report


# --------------------------------------------------------------------------- solve


def run_solve(ctx: Context, out: Path) -> dict:
    lam = float(ctx.task["lambda"])
    f = initial_callable(ctx)
    res = exhaust_resolvent(
        ctx.domain, ctx.coeff, ctx.spec, lam, f, ctx.num["h"], ctx.window_radius, ctx.num["tol"], max_n=ctx.num["max_n"]
    )
    op, u = res.operator, res.solution
    fv = GridFunction.from_callable(op.grid, f).values
    interior_res = float(np.max(np.abs((lam * u.values - op.apply(u) - fv)[op.interior])))
    bnd_res = float(np.max(np.abs(op.boundary_residual(u)[~op.interior]), initial=0.0))
    report = {
        "lambda": lam,
        "ns": res.ns,
        "increments": res.increments,
        "min_increments": res.min_increments,
        "converged": res.converged,
        "interior_residual": interior_res,
        "boundary_residual": bnd_res,
        "condition_estimate": condition_estimate(op, lam),
        "resolvent_identity_residual": resolvent_identity_residual(op, lam, 2 * lam, fv),
        "window_sup": float(np.max(np.abs(res.values))),
    }
    report["passed"] = bool(res.converged and min(res.min_increments, default=0.0) >= -1e-12 and interior_res <= 1e-8)
    write_table(
        out / "solution.csv", ctx.header("resolvent.exhaust_resolvent"), ["node", *_coords(ctx.domain.dim), "value"],
        ([k, *map(float, p), float(v)] for k, (p, v) in enumerate(zip(res.points, res.values))),
    )
    ctx.json(out / "solve.json", "resolvent.exhaust_resolvent", report)
    return report


# --------------------------------------------------------------------------- evolve


def run_evolve(ctx: Context, out: Path) -> dict:
    op = ctx.operator()
    ev = SemigroupEvolver(op, ctx.num["tau"])
    f = cell_average(op.grid, initial_callable(ctx))
    times = sorted(set([0.0, *ctx.task["times"]]))
    snaps = trajectory(ev, f, times)
    mask = op.grid.window_mask(ctx.window_radius)
    write_table(
        out / "evolve.csv", ctx.header("semigroup.evolve"), ["node", *_coords(ctx.domain.dim), *[f"t={t:g}" for t in times]],
        _point_rows(op.grid, {t: s.values for t, s in zip(times, snaps)}, mask),
    )
    defect = markov_defect(ev, ctx.task["t"], ctx.window_radius)
    sup = [float(np.max(np.abs(s.values))) for s in snaps]
    report = {"n": op.grid.n, "tau": ev.tau, "times": times, "sup_norms": sup, "markov_defect": defect,
              "t": ctx.task["t"]}
    report["passed"] = bool(all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(sup, sup[1:])))
    ctx.json(out / "evolve.json", "semigroup.evolve", report)
    return report


# --------------------------------------------------------------------------- lyapunov


def run_lyapunov(ctx: Context, out: Path) -> dict:
    op = ctx.operator()
    n = op.grid.n
    grids = [build_exhaustion(ctx.domain, k, ctx.num["h"]) for k in sorted({max(ctx.n0, n - 2), max(ctx.n0, n - 1), n})]
    V = quadratic_lyapunov()
    uniq = verify_uniqueness_lyapunov(V, ctx.coeff, float(ctx.task["lambda"]), grids)
    inv = verify_invariant_lyapunov(V, ctx.coeff, ctx.spec, ctx.domain)
    report = {
        "uniqueness": {"passed": uniq.passed, "radius": uniq.radius, "radii": uniq.radii, "reason": uniq.reason},
        "invariant_V": {k: {"passed": v[0], "detail": v[1]} for k, v in inv.conditions.items()},
    }
    try:
        mod = modify_lyapunov(ctx.spec, ctx.domain)
        inv_mod = verify_invariant_lyapunov(mod.spec, ctx.coeff, ctx.spec, ctx.domain)
        report["modified"] = {
            "M": mod.M, "eps": mod.eps, "band": list(mod.band), "chain_holds": mod.chain_holds,
            "chain": [list(c) for c in mod.chain],
            "conditions": {k: {"passed": v[0], "detail": v[1]} for k, v in inv_mod.conditions.items()},
            "passed": inv_mod.passed,
        }
        chain_ok = mod.chain_holds
    except ValueError as exc:
        report["modified"] = {"error": str(exc), "passed": False}
        chain_ok = True
    report["invariant_measure_criterion"] = bool(report["modified"].get("passed", False))
    report["passed"] = bool(uniq.passed and chain_ok)
    ctx.json(out / "lyapunov.json", "lyapunov.verify", report)
    return report


# --------------------------------------------------------------------------- invariant


def run_invariant(ctx: Context, out: Path) -> dict:
    op = ctx.operator()
    mode = ctx.task["mode"]
    lams = abel_sequence(ctx.num["abel_kmax"])
    report, columns = {"n": op.grid.n}, {}
    ok = True
    if mode in ("abel", "all", "evolve-compare"):
        ab = abel_invariant(op, ctx.x0("x0"), lams, ctx.num["tv_tol"], ctx.window_radius)
        columns["abel"] = ab.limit.masses
        report["abel"] = {"lambdas": lams, "window_masses": ab.window_masses, "tv_steps": ab.tv_steps,
                          "converged": ab.converged}
        if ctx.task["x1"] is not None:
            ab1 = abel_invariant(op, ctx.x0("x1"), lams, ctx.num["tv_tol"], ctx.window_radius)
            report["abel"]["tv_between_starts"] = tv_distance(ab.limit, ab1.limit)
        ok &= all(m <= 1 + 1e-9 for m in ab.window_masses)
    if mode in ("stationary", "all", "evolve-compare"):
        st = stationary_solve(op, tau=ctx.num["tau"])
        columns["stationary"] = st.measure.masses
        report["stationary"] = {"rate": st.rate, "eigenvalue": st.eigenvalue, "reliable": st.reliable,
                                "iterations": st.iterations}
        if "abel" in columns:
            report["tv_abel_stationary"] = tv_distance(columns["abel"], st.measure.masses)
    if mode in ("evolve-compare", "all") and "stationary" in columns:
        ev = SemigroupEvolver(op, ctx.num["tau"])
        node = op.grid.nearest_node(ctx.x0("x0"))
        horizon = float(ctx.task["horizon"])
        times = [horizon * k / 8 for k in range(1, 9)]
        times = [round(t / ev.tau) * ev.tau for t in times]
        cs = convergence_study(ev, MeasureVector.dirac(op.grid, node), MeasureVector(op.grid, columns["stationary"]),
                               times, {"one": np.ones(op.size)}, ctx.window_radius)
        report["convergence"] = {"times": cs.times, "tv": cs.tv, "nonincreasing_after": cs.nonincreasing_after,
                                 "markov_deviation": cs.deviations["one"]}
    write_table(out / "invariant.csv", ctx.header("invariant.abel_invariant"),
                ["node", *_coords(ctx.domain.dim), *columns], _point_rows(op.grid, columns))
    report["passed"] = bool(ok)
    ctx.json(out / "invariant.json", "invariant.abel_invariant", report)
    return report


# --------------------------------------------------------------------------- Monte Carlo


def _occupation(ctx: Context, op: DiscreteOperator):
    bin_grid = build_exhaustion(ctx.domain, op.grid.n, ctx.num["bin_h"], ctx.window_radius)
    N = ctx.num["particles"]
    occ = estimate_invariant(
        ctx.coeff, ctx.spec, ctx.domain, bin_grid, ctx.x0("x0"), ctx.task["burn_in"], ctx.task["horizon"],
        ctx.num["dt_invariant"], N, ctx.cfg.seed + 1, ctx.task["segments"], window_radius=ctx.window_radius,
        jobs=ctx.num["jobs"],
    )
    return bin_grid, occ


def run_simulate(ctx: Context, out: Path) -> dict:
    op = ctx.operator()
    x0 = ctx.x0("x0")
    times = sorted(ctx.task["times"])
    ens = simulate_paths(ctx.coeff, ctx.spec, ctx.domain, x0, times[-1], ctx.num["dt"], ctx.num["particles"],
                         ctx.cfg.seed, snapshot_times=times, record_jumps=True, jobs=ctx.num["jobs"])
    est = {name: {f"t={t:g}": vars(estimate_expectation(ens, f, t)) for t in times}
           for name, f in test_functions(ctx.domain.dim).items()}
    ret = return_distribution_test(ctx.spec, ens.jumps_z, ens.jumps_x) if ens.jumps_z is not None else None
    bin_grid, occ = _occupation(ctx, op)
    write_table(out / "occupation.csv", ctx.header("montecarlo.estimate_invariant"),
                ["node", *_coords(ctx.domain.dim), "mass"], _point_rows(bin_grid, {"mass": occ.masses}))
    report = {
        "x0": x0, "particles": ens.size, "dt": ens.dt, "estimates": est,
        "boundary_hits": int(ens.hits.sum()), "escapes": ens.escapes(op.grid.n + 1.0),
        "return_test": None if ret is None else vars(ret),
        "occupation": {"outside_fraction": occ.outside_fraction, "segment_window_mass": occ.segment_window_mass,
                       "segment_tv": occ.segment_tv, "escapes": occ.escapes, "max_radius": occ.max_radius,
                       "stabilizes": occ.stabilizes},
    }
    report["passed"] = bool(ret is None or ret.passed)
    ctx.json(out / "simulate.json", "montecarlo.simulate_paths", report)
    return report


def run_compare(ctx: Context, out: Path) -> dict:
    """PDE versus Monte Carlo: expectations at several times, invariant measure, return law."""
    op = ctx.operator()
    x0 = ctx.x0("x0")
    node = op.grid.nearest_node(x0)
    times = sorted(ctx.task["times"])
    ev = SemigroupEvolver(op, ctx.num["tau"])
    ens = simulate_paths(ctx.coeff, ctx.spec, ctx.domain, x0, times[-1], ctx.num["dt"], ctx.num["particles"],
                         ctx.cfg.seed, snapshot_times=times, record_jumps=True, jobs=ctx.num["jobs"])
    rows = []
    for name, f in test_functions(ctx.domain.dim).items():
        snaps = trajectory(ev, cell_average(op.grid, f), times)
        for t, u in zip(times, snaps):
            e = estimate_expectation(ens, f, t)
            pde = float(u.values[node])
            rows.append([name, t, pde, e.mean, e.se, abs(pde - e.mean) / e.se if e.se > 0 else 0.0,
                         "pass" if e.agrees(pde) else "fail"])
    ret = return_distribution_test(ctx.spec, ens.jumps_z, ens.jumps_x) if ens.jumps_z is not None else None
    st = stationary_solve(op, tau=ctx.num["tau"])
    bin_grid, occ = _occupation(ctx, op)
    tv = tv_distance(rebin(st.measure, bin_grid).masses, occ.masses)
    write_table(out / "compare.csv", ctx.header("workflows.run_compare"),
                ["function", "t", "pde", "mc_mean", "mc_se", "z", "verdict"], rows)
    report = {
        "rows": [dict(zip(["function", "t", "pde", "mc_mean", "mc_se", "z", "verdict"], r)) for r in rows],
        "invariant_tv": tv,
        "return_test": None if ret is None else vars(ret),
    }
    report["passed"] = bool(all(r[-1] == "pass" for r in rows) and tv <= 0.05 and (ret is None or ret.passed))
    ctx.json(out / "compare.json", "workflows.run_compare", report)
    return report
