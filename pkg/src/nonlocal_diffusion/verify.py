"""Property suite run by ``verify``: every structural invariant on one configuration.

Checks of kind ``"invariant"`` must hold for any valid configuration and
decide the exit status.  Checks of kind ``"finding"`` (Lyapunov verdicts,
for instance) describe the model and are reported without failing the run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .domain import ARTIFICIAL, INTERIOR, build_exhaustion, cutoff_rho
from .errors import PropertyViolation
from .invariant import MeasureVector, abel_invariant, tv_distance
from .lyapunov import modify_lyapunov, quadratic_lyapunov, verify_invariant_lyapunov, verify_uniqueness_lyapunov
from .measures import check_monotone, concentration_check, truncate_measure
from .montecarlo import simulate_paths
from .operators import check_ellipticity, drift_balance
from .resolvent import (
    GridFunction,
    exhaust_resolvent,
    maximum_principle_check,
    resolvent_identity_residual,
    solve_resolvent,
)
from .semigroup import SemigroupEvolver, chapman_kolmogorov_residual, evolve, kernel_row, markov_defect

LAMBDAS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    kind: str = "invariant"
    detail: str = ""


def run_property_suite(ctx, draws: int = 20) -> list[CheckResult]:
    """All checks on the configuration held by a workflow ``Context``."""
    rng = np.random.default_rng(ctx.cfg.seed)
    out: list[CheckResult] = []
    add = lambda *a, **k: out.append(CheckResult(*a, **k))
    dom, coeff, spec, h = ctx.domain, ctx.coeff, ctx.spec, ctx.num["h"]
    n0 = ctx.n0

    # geometry and measures
    x = rng.uniform(0, 3 * (n0 + 2), size=(200, dom.dim))
    worst = float(np.max(cutoff_rho(n0, x) - cutoff_rho(n0 + 1, x)))
    add("cutoff monotone in n", worst <= 0, worst, 0.0)
    g0, g1 = build_exhaustion(dom, n0, h), build_exhaustion(dom, n0 + 1, h)
    shared = [(i, g1.index_of(k)) for i, k in enumerate(g0.keys)]
    nested = all(j is not None for _, j in shared)
    demoted = sum(1 for i, j in shared if j is not None and g0.kind[i] == INTERIOR and g1.kind[j] != INTERIOR)
    add("grid nesting", nested and demoted == 0, float(demoted), 0.0)
    art_r = g0.radii[g0.kind == ARTIFICIAL]
    gap = float(np.max(np.abs(art_r - (n0 + 1)), initial=0.0))
    add("artificial nodes near the outer sphere", gap <= h / 2 + 1e-12, gap, h / 2)
    ell = check_ellipticity(coeff, g0)
    add("ellipticity", ell.passed, ell.margin, 0.0, detail=ell.reason)
    V = quadratic_lyapunov()
    pts = g0.points
    err = float(np.max(np.abs(V.generator(coeff, pts) - 2 * drift_balance(coeff, pts)) / (1 + np.abs(V.generator(coeff, pts)))))
    add("A|x|^2 = 2 drift balance", err <= 1e-12, err, 1e-12)
    t0, t1 = truncate_measure(spec, n0, g0), truncate_measure(spec, n0 + 1, g1)
    mono = check_monotone(t0, t1)
    add("truncated measures monotone", mono.passed, mono.worst_excess, 1e-12)
    masses = t0.masses
    add("truncated masses in [0, 1]", bool(np.all((masses >= 0) & (masses <= 1 + 1e-12))), float(masses.max(initial=0)), 1.0)
    conc = concentration_check(spec, dom, n0, 0.5)
    add("concentration at n0", conc.passed, conc.min_mass, 0.5)

    # resolvent
    op = ctx.operator()
    m = op.size
    worst_c, worst_p, failures = 0.0, 0.0, 0
    for _ in range(draws):
        for lam in LAMBDAS:
            f = rng.uniform(-1, 1, m)
            fp = np.abs(f)
            try:
                u = solve_resolvent(op, lam, f).values
                up = solve_resolvent(op, lam, fp).values
            except PropertyViolation:
                failures += 1
                continue
            fn = np.max(np.abs(f[op.interior]))
            worst_c = max(worst_c, lam * np.max(np.abs(u)) / fn - 1)
            worst_p = min(worst_p, float(up.min()))
    add("resolvent contraction", failures == 0 and worst_c <= 1e-9, worst_c, 1e-9)
    add("resolvent positivity", failures == 0 and worst_p >= -1e-12, worst_p, -1e-12)
    f = rng.uniform(-1, 1, m)
    worst_r = max(
        resolvent_identity_residual(op, a, b, f) / np.max(np.abs(f)) for a in LAMBDAS for b in LAMBDAS if a != b
    )
    add("resolvent identity", worst_r <= 1e-8, worst_r, 1e-8)
    verdicts = [maximum_principle_check(op, 1.0, -solve_resolvent(op, 1.0, rng.uniform(0, 1, m)).values) for _ in range(5)]
    add("maximum principle", all(v == "pass" for v in verdicts), float(verdicts.count("fail")), 0.0)
    u = solve_resolvent(op, 1.0, f).values
    back = (u - op.apply(u))[op.interior]
    rt = float(np.max(np.abs(back - f[op.interior])))
    add("round trip (lam - A) R f = f", rt <= 1e-10, rt, 1e-10)
    x0 = ctx.x0("x0")
    bump = lambda p: np.exp(-np.sum((p - x0) ** 2, axis=1))
    ex = exhaust_resolvent(dom, coeff, spec, 1.0, bump, h, ctx.window_radius, ctx.num["tol"], max_n=ctx.num["max_n"])
    mi = min(ex.min_increments, default=0.0)
    add("exhaustion monotone", mi >= -1e-12, mi, -1e-12)

    # semigroup
    ev = SemigroupEvolver(op, ctx.num["tau"])
    one = evolve(ev, np.ones(m), 4 * ev.tau).values
    add("sub-Markov T(t)1 <= 1", float(one.max()) <= 1 + 1e-9, float(one.max()), 1 + 1e-9)
    node = op.grid.nearest_node(x0)
    row = kernel_row(ev, node, 4 * ev.tau)
    add("kernel rows nonnegative, mass <= 1", bool(row.min() >= -1e-12 and row.sum() <= 1 + 1e-9), float(row.sum()), 1.0)
    ck = max(chapman_kolmogorov_residual(ev, rng.uniform(-1, 1, m), 4 * ev.tau, 4 * ev.tau) for _ in range(10))
    add("Chapman-Kolmogorov", ck <= 1e-12, ck, 1e-12)

    # Lyapunov and invariant measures
    grids = [build_exhaustion(dom, k, h) for k in sorted({max(n0, op.grid.n - 1), op.grid.n})]
    uniq = verify_uniqueness_lyapunov(V, coeff, 1.0, grids)
    add("uniqueness Lyapunov V=|x|^2", uniq.passed, uniq.radius or float("nan"), float("nan"), "finding", uniq.reason)
    defect = markov_defect(ev, float(ctx.task["t"]), ctx.window_radius)
    add("Markov defect", defect <= 1e-3, defect, 1e-3, "invariant" if uniq.passed else "finding")
    inv = verify_invariant_lyapunov(V, coeff, spec, dom)
    add("invariant-measure Lyapunov V=|x|^2", inv.passed, float("nan"), float("nan"), "finding",
        "; ".join(f"{k}: {'ok' if v[0] else 'fails'}" for k, v in inv.conditions.items()))
    try:
        mod = modify_lyapunov(spec, dom)
        add("modified Lyapunov chain", mod.chain_holds, max(a for a, _, _ in mod.chain), mod.M + 1)
        inv_mod = verify_invariant_lyapunov(mod.spec, coeff, spec, dom)
        add("invariant-measure Lyapunov V~", inv_mod.passed, float("nan"), float("nan"), "finding",
            "; ".join(f"{k}: {'ok' if v[0] else 'fails'}" for k, v in inv_mod.conditions.items()))
    except ValueError as exc:
        add("modified Lyapunov chain", True, float("nan"), float("nan"), "finding", str(exc))
    ab = abel_invariant(op, x0, [1.0, 0.25, 1 / 16])
    tot = max(mu.total for mu in ab.measures)
    add("Abel masses <= 1", tot <= 1 + 1e-9, tot, 1 + 1e-9)
    worst_t = 0.0
    for _ in range(draws):
        p = [rng.dirichlet(np.ones(5)) for _ in range(3)]
        d = lambda a, b: tv_distance(a, b)
        worst_t = max(worst_t, d(p[0], p[2]) - d(p[0], p[1]) - d(p[1], p[2]), abs(d(p[0], p[1]) - d(p[1], p[0])))
    add("TV metric axioms", worst_t <= 1e-15, worst_t, 1e-15)

    # Monte Carlo reproducibility
    runs = [simulate_paths(coeff, spec, dom, x0, 0.1, ctx.num["dt"] if ctx.num["dt"] <= 0.1 else 0.1, 64, ctx.cfg.seed)
            for _ in range(2)]
    same = bool(np.array_equal(runs[0].positions, runs[1].positions))
    add("Monte Carlo reproducible", same, float(same), 1.0)
    return out


def suite_passed(results) -> bool:
    return all(r.passed for r in results if r.kind == "invariant")


def run_verify(ctx, out: Path) -> dict:
    results = run_property_suite(ctx)
    table = [asdict(r) for r in results]
    report = {"checks": table, "passed": suite_passed(results)}
    ctx.json(out / "verify.json", "verify.run_property_suite", report)
    return report
