"""Implicit-Euler evolution of the semigroup and its structural diagnostics.

One step is ``u -> lam * R(lam) u`` with ``lam = 1 / tau``, i.e. exactly the
scaled resolvent of the discrete operator, so positivity, sup-norm
contraction and the semigroup law carry over from the elliptic solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainSpec
from .errors import PropertyViolation
from .measures import BoundaryMeasureSpec
from .operators import CoefficientField
from .resolvent import SOLVER_TOL, DiscreteOperator, GridFunction, _values, build_operator, indicator, solve_resolvent

DEFAULT_TAU = 0.01


@dataclass(eq=False)
class SemigroupEvolver:
    """Cached one-step map ``(I - tau A_h)^{-1}`` with boundary rows."""

    op: DiscreteOperator
    tau: float = DEFAULT_TAU
    check: bool = True
    _lu: object = field(default=None, repr=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        self._lu = self.op.factor(self.lam)

    @property
    def lam(self) -> float:
        return 1.0 / self.tau

    @property
    def grid(self):
        return self.op.grid

    def steps(self, t: float) -> int:
        """Number of steps for horizon ``t``; rejects ``t`` off the ``tau`` lattice."""
        k = round(t / self.tau)
        if t < 0 or abs(k * self.tau - t) > 1e-9 * max(self.tau, abs(t)):
            raise ValueError(f"t={t} is not a nonnegative multiple of tau={self.tau}")
        return int(k)

    def step(self, u: np.ndarray) -> np.ndarray:
        rhs = np.where(self.op.interior, self.lam * u, 0.0)
        v = self._lu.solve(rhs)
        if self.check:
            un = np.max(np.abs(u[self.op.interior]), initial=0.0)
            if np.max(np.abs(v)) > un * (1 + SOLVER_TOL) + 1e-300:
                raise PropertyViolation("evolution step is not contractive")
            if np.all(u[self.op.interior] >= 0) and v.min() < -SOLVER_TOL * un:
                raise PropertyViolation("evolution step is not positive")
        return v

    def adjoint_step(self, nu: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`step` acting on node masses."""
        return np.where(self.op.interior, self.lam * self._lu.solve(nu, trans="T"), 0.0)


def evolve(ev: SemigroupEvolver, f, t: float) -> GridFunction:
    """``(I - tau A_h)^{-t/tau} f``; ``t = 0`` returns ``f`` unchanged."""
    u = _values(f, ev.grid).copy()
    for _ in range(ev.steps(t)):
        u = ev.step(u)
    return GridFunction(ev.grid, u)


def trajectory(ev: SemigroupEvolver, f, times) -> list[GridFunction]:
    """Snapshots of :func:`evolve` at increasing ``times``, sharing the steps."""
    ks = [ev.steps(t) for t in times]
    if any(b < a for a, b in zip(ks, ks[1:])):
        raise ValueError("times must be nondecreasing")
    u = _values(f, ev.grid).copy()
    out, done = [], 0
    for k in ks:
        for _ in range(k - done):
            u = ev.step(u)
        done = k
        out.append(GridFunction(ev.grid, u.copy()))
    return out


def evolve_measure(ev: SemigroupEvolver, nu, t: float) -> np.ndarray:
    """Adjoint evolution of node masses ``nu`` over ``[0, t]``."""
    nu = np.asarray(nu, dtype=float).copy()
    for _ in range(ev.steps(t)):
        nu = ev.adjoint_step(nu)
    return nu


def kernel_row(ev: SemigroupEvolver, node: int, t: float) -> np.ndarray:
    """Discrete transition kernel ``K(t, x_node, .)`` as node masses."""
    e = np.zeros(ev.grid.size)
    e[node] = 1.0
    return evolve_measure(ev, e, t)


def markov_defect(ev: SemigroupEvolver, t: float, window_radius: float | None = None) -> float:
    """``||1 - T(t) 1||_inf`` over the interior window nodes."""
    u = evolve(ev, np.ones(ev.grid.size), t).values
    mask = ev.grid.window_mask(window_radius) & ev.op.interior
    return float(np.max(np.abs(1.0 - u[mask])))


def chapman_kolmogorov_residual(ev: SemigroupEvolver, f, t: float, s: float) -> float:
    """``||T(t+s) f - T(t) T(s) f||_inf``; zero up to roundoff by construction."""
    lhs = evolve(ev, f, t + s).values
    rhs = evolve(ev, evolve(ev, f, s), t).values
    return float(np.max(np.abs(lhs - rhs)))


def generator_consistency(ev: SemigroupEvolver, f, t: float, window_radius: float | None = None) -> float:
    """``|| trapz_0^t T(s) A_h f ds - (T(t) f - f) ||_inf`` on the interior window.

    ``f`` should satisfy the boundary rows (e.g. ``f = R(1) g``).  The
    trapezoid rule makes this a first-order consistency residual.
    """
    k = ev.steps(t)
    if k == 0:
        return 0.0
    fv = _values(f, ev.grid)
    g = ev.op.apply(fv)
    acc = 0.5 * g
    u = g.copy()
    for j in range(1, k + 1):
        u = ev.step(u)
        acc += u if j < k else 0.5 * u
    integral = ev.tau * acc
    diff = evolve(ev, fv, t).values - fv
    mask = ev.grid.window_mask(window_radius) & ev.op.interior
    return float(np.max(np.abs(integral - diff)[mask]))


def laplace_consistency(ev: SemigroupEvolver, f, lam: float, window_radius: float | None = None, cutoff: float = 1e-12) -> float:
    """``|| sum_k tau e^{-lam k tau} T(k tau) f - R(lam) f ||_inf`` on the interior window.

    The sum runs over ``k >= 1`` until the weight drops below ``cutoff``.
    """
    if lam * ev.tau > 0.1:
        raise ValueError("Laplace consistency needs lam * tau <= 0.1")
    fv = _values(f, ev.grid)
    kmax = int(math.ceil(-math.log(cutoff) / (lam * ev.tau)))
    u, acc = fv.copy(), np.zeros_like(fv)
    for k in range(1, kmax + 1):
        u = ev.step(u)
        acc += ev.tau * math.exp(-lam * k * ev.tau) * u
    r = solve_resolvent(ev.op, lam, fv).values
    mask = ev.grid.window_mask(window_radius) & ev.op.interior
    return float(np.max(np.abs(acc - r)[mask]))


def lipschitz_modulus(u: GridFunction, window_radius: float | None = None) -> float:
    """Max over adjacent node pairs in the window of ``|u(x) - u(x')| / |x - x'|``."""
    g = u.grid
    mask = g.window_mask(window_radius)
    best = 0.0
    for k in range(g.neighbors.shape[1]):
        j = g.neighbors[:, k]
        ok = mask & (j >= 0)
        ok[ok] &= mask[j[ok]]
        i = np.flatnonzero(ok)
        if len(i):
            dist = np.linalg.norm(g.points[j[i]] - g.points[i], axis=1)
            best = max(best, float(np.max(np.abs(u.values[j[i]] - u.values[i]) / dist)))
    return best


@dataclass(frozen=True)
class StrongFellerReport:
    spacings: list
    moduli: list
    ratios: list
    stabilizes: bool


def strong_feller_diagnostic(
    domain: DomainSpec,
    coeff: CoefficientField,
    spec: BoundaryMeasureSpec,
    n: int,
    h: float,
    box,
    t: float,
    tau: float = DEFAULT_TAU,
    levels: int = 3,
    window_radius: float | None = None,
) -> StrongFellerReport:
    """Lipschitz modulus of ``T(t) 1_box`` under ``h -> h/2 -> h/4``.

    A modulus that grows like ``1/h`` (ratio near 2) signals a discontinuity;
    ratios staying near 1 indicate a bounded limit.  Trend report only.
    """
    lo, hi = box
    spacings, moduli = [], []
    for k in range(levels):
        hk = h / 2**k
        op = build_operator(domain, coeff, spec, n, hk, window_radius)
        ev = SemigroupEvolver(op, tau)
        u = evolve(ev, indicator(op.grid, lo, hi), t)
        spacings.append(hk)
        moduli.append(lipschitz_modulus(u, window_radius))
    ratios = [b / a if a > 0 else math.inf for a, b in zip(moduli, moduli[1:])]
    return StrongFellerReport(spacings, moduli, ratios, bool(ratios and ratios[-1] < 1.5))
