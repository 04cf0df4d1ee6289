"""Lyapunov functions: verification of the uniqueness and invariant-measure criteria,
and the boundary-adapted modification ``V~ = phi(|x|^2)``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import DomainSpec, Grid
from .errors import DivergentIntegralError
from .measures import BoundaryMeasureSpec, second_moment_sup
from .operators import CoefficientField, radial_trend


@dataclass(frozen=True)
class LyapunovSpec:
    """``V`` with its gradient and Hessian, all vectorized over ``(m, d)`` points."""

    V: Callable
    grad: Callable
    hess: Callable
    name: str = "V"
    target: str = "uniqueness"

    def __call__(self, x) -> np.ndarray:
        return self.V(np.atleast_2d(np.asarray(x, dtype=float)))

    def generator(self, coeff: CoefficientField, x) -> np.ndarray:
        """``A V = tr(a Hess V) + b . grad V``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        a, b = coeff(x)
        return np.einsum("mij,mji->m", a, self.hess(x)) + np.einsum("mj,mj->m", b, self.grad(x))


def radial_lyapunov(phi, dphi, d2phi, name: str = "phi(|x|^2)", target: str = "uniqueness") -> LyapunovSpec:
    """``V = phi(|x|^2)`` with chain-rule derivatives."""

    def t(x):
        return np.sum(x**2, axis=1)

    def grad(x):
        return 2 * dphi(t(x))[:, None] * x

    def hess(x):
        d = x.shape[1]
        tt = t(x)
        return 2 * dphi(tt)[:, None, None] * np.eye(d) + 4 * d2phi(tt)[:, None, None] * np.einsum("mi,mj->mij", x, x)

    return LyapunovSpec(lambda x: phi(t(x)), grad, hess, name, target)


def quadratic_lyapunov(target: str = "uniqueness") -> LyapunovSpec:
    """``V(x) = |x|^2``."""
    return radial_lyapunov(lambda t: t, np.ones_like, np.zeros_like, "|x|^2", target)


def constant_lyapunov(c: float = 1.0) -> LyapunovSpec:
    return LyapunovSpec(
        lambda x: np.full(len(x), float(c)),
        np.zeros_like,
        lambda x: np.zeros((len(x), x.shape[1], x.shape[1])),
        f"const {c}",
    )


# --------------------------------------------------------------------------- uniqueness


@dataclass(frozen=True)
class UniquenessReport:
    passed: bool
    radius: float | None  # witness r: lam V - A V >= 0 at every node with |x| >= r
    radii: list  # witness per grid
    blows_up: bool
    bounded_on_bounded: bool
    reason: str = ""


def _witness_radius(V: LyapunovSpec, coeff, lam: float, grid: Grid) -> float | None:
    x = grid.points
    r = grid.radii
    ok = lam * V(x) - V.generator(coeff, x) >= -1e-12 * (1 + np.abs(V(x)))
    if not ok.any():
        return None
    bad = r[~ok]
    beyond = r[ok] if bad.size == 0 else r[ok & (r > bad.max())]
    return float(beyond.min()) if beyond.size else None


def verify_uniqueness_lyapunov(V: LyapunovSpec, coeff: CoefficientField, lam: float, grids) -> UniquenessReport:
    """Check ``V -> inf``, ``A V`` locally bounded and ``(lam - A) V >= 0`` outside some ``B_r``.

    ``r`` is the smallest node radius beyond which the inequality holds; it
    must exist on every grid and agree across grids to within the spacing.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    grids = list(grids)
    largest = max(grids, key=lambda g: g.n)
    trend = radial_trend(V, largest.domain)
    rad = largest.radii
    vals = V(largest.points)
    order = np.argsort(rad)
    tail = vals[order][len(order) // 2 :]
    blows_up = bool(trend.unbounded_above and tail[-1] > tail[0])
    bounded = all(np.all(np.isfinite(V.generator(coeff, g.points))) for g in grids)
    radii = [_witness_radius(V, coeff, lam, g) for g in grids]
    h = max(g.h for g in grids)
    stable = all(r is not None for r in radii) and (max(radii) - min(radii) <= h + 1e-12)
    reasons = []
    if not blows_up:
        reasons.append("V does not tend to infinity")
    if not bounded:
        reasons.append("A V not finite on a truncation")
    if not stable:
        reasons.append("no stable witness radius")
    r = radii[grids.index(largest)]
    return UniquenessReport(not reasons, r, radii, blows_up, bounded, "; ".join(reasons))


# --------------------------------------------------------------------------- invariant measure


@dataclass(frozen=True)
class InvariantLyapunovReport:
    conditions: dict  # name -> (passed, detail)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.conditions.values())


def verify_invariant_lyapunov(
    V: LyapunovSpec,
    coeff: CoefficientField,
    spec: BoundaryMeasureSpec,
    domain: DomainSpec,
    samples: int = 64,
    r_max: float = 1e3,
) -> InvariantLyapunovReport:
    """Conditions (i) ``V >= 0``, ``V -> inf``; (ii) ``A V -> -inf``; (iii) ``int V dmu(z) <= V(z)``."""
    trend_v = radial_trend(V, domain, r_max)
    nonneg = bool(np.all(trend_v.values >= 0))
    c1 = (nonneg and trend_v.unbounded_above, f"min V on rays {trend_v.values.min():.4g}")
    trend_a = radial_trend(lambda p: V.generator(coeff, p), domain, r_max)
    c2 = (trend_a.unbounded_below, f"A V at r={trend_a.radii[-1]:.3g}: {trend_a.values[:, -1].max():.4g}")
    worst, detail = -math.inf, ""
    try:
        for z in domain.boundary_points(samples):
            v0 = spec.integrate(z, V.V)
            gap = v0 - float(V(z)[0])
            if gap > worst:
                worst, detail = gap, f"v0={v0:.6g} vs V(z)={float(V(z)[0]):.6g} at z={np.round(z, 6).tolist()}"
        c3 = (worst <= 1e-10 * (1 + abs(worst)), detail)
    except DivergentIntegralError as exc:
        c3 = (False, f"V not integrable: {exc}")
    return InvariantLyapunovReport({"growth": c1, "drift": c2, "boundary": c3})


# --------------------------------------------------------------------------- V~


def smootherstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def _dsmoother(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 30 * s**2 * (1 - s) ** 2, 0.0)


def _d2smoother(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 60 * s * (1 - s) * (1 - 2 * s), 0.0)


@dataclass(frozen=True)
class ModifiedLyapunov:
    spec: LyapunovSpec
    M: float
    eps: float
    band: tuple  # (t0, t1) in the variable t = |x|^2
    chain: list = field(default_factory=list)  # per z: (int V~ dmu, (M+1) mu(S_eps) + M, M+1)

    @property
    def chain_holds(self) -> bool:
        return all(a <= b * (1 + 1e-12) and b <= c * (1 + 1e-12) for a, b, c in self.chain)


def modify_lyapunov(spec: BoundaryMeasureSpec, domain: DomainSpec, samples: int = 64, max_halvings: int = 20) -> ModifiedLyapunov:
    """Build ``V~ = phi(|x|^2)`` equal to ``M + 1`` on the boundary and to ``|x|^2`` away from it.

    ``M = sup_z int |x|^2 dmu(z)``.  The shell ``S_eps = {r0 < |x| < r0 + eps}``
    is shrunk by halving until ``mu(z, S_eps) <= 1 / (1 + 2M)`` at all sampled
    ``z``.  On the band ``t in [r0^2, (r0 + eps)^2]`` phi blends ``M + 1`` into
    ``t`` with a quintic smootherstep, which is C2 at both ends and keeps
    ``phi <= M + 1`` there.

    Raises
    ------
    ValueError
        If the second moment is infinite or no admissible ``eps`` is found.
    """
    try:
        M = second_moment_sup(spec, domain, samples)
    except DivergentIntegralError as exc:
        raise ValueError(f"second moment of the return measure is infinite: {exc}") from exc
    if not math.isfinite(M):
        raise ValueError("second moment of the return measure is infinite")
    r0 = domain.radius
    zs = domain.boundary_points(samples)
    bound = 1.0 / (1.0 + 2.0 * M)
    eps = 0.5
    for _ in range(max_halvings + 1):
        if (r0 + eps) ** 2 <= M + 1 and max(spec.mass_below(z, r0 + eps) for z in zs) <= bound:
            break
        eps /= 2
    else:
        raise ValueError(f"no admissible eps after {max_halvings} halvings")
    t0, t1 = r0**2, (r0 + eps) ** 2
    top = M + 1.0
    w = t1 - t0

    def phi(t):
        s = (t - t0) / w
        S = smootherstep(s)
        return np.where(t >= t1, t, (1 - S) * top + S * t)

    def dphi(t):
        s = (t - t0) / w
        return np.where(t >= t1, 1.0, _dsmoother(s) * (t - top) / w + smootherstep(s))

    def d2phi(t):
        s = (t - t0) / w
        return np.where(t >= t1, 0.0, _d2smoother(s) * (t - top) / w**2 + 2 * _dsmoother(s) / w)

    Vt = radial_lyapunov(phi, dphi, d2phi, "V~", "invariant")
    chain = []
    for z in zs:
        lhs = spec.integrate(z, Vt.V)
        mid = top * spec.mass_below(z, r0 + eps) + M
        chain.append((lhs, mid, float(Vt(z)[0])))
    return ModifiedLyapunov(Vt, M, eps, (t0, t1), chain)
