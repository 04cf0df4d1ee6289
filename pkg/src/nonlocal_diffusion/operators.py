"""Coefficient fields of second-order operators ``sum a_ij D_i D_j + sum b_j D_j``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import DomainSpec, Grid

Field = Callable[[np.ndarray], np.ndarray]

BUILTIN_OPERATORS = ("ou", "inverse-power", "polynomial", "brownian")


@dataclass(frozen=True)
class CoefficientField:
    """Vectorized coefficient callables.

    ``a(x)`` maps ``(m, d)`` points to ``(m, d, d)`` diffusion matrices,
    ``b(x)`` to ``(m, d)`` drifts and ``eta(x)`` to the ``(m,)`` ellipticity
    lower bound.
    """

    dim: int
    a: Field
    b: Field
    eta: Field
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.a(x), self.b(x)

    def is_diagonal(self, x) -> bool:
        a = self.a(np.atleast_2d(x))
        off = a - np.einsum("mii->mi", a)[:, :, None] * np.eye(self.dim)
        return bool(np.all(off == 0))


def _radius(x):
    return np.linalg.norm(x, axis=1)


def _isotropic(scale: Field, dim: int) -> Field:
    eye = np.eye(dim)
    return lambda x: scale(x)[:, None, None] * eye


def builtin_operator(name: str, dim: int = 1, alpha: float | None = None, beta: float | None = None) -> CoefficientField:
    """One of the exterior-domain example operators.

    ``ou``            a = I,            b = -x
    ``inverse-power`` a = |x|^-alpha I, b = -x
    ``polynomial``    a = |x|^alpha I,  b = -|x|^(beta-1) x, needs alpha > 0, beta > alpha - 1
    ``brownian``      a = I,            b = 0  (negative control, no confining drift)
    """
    if name == "ou":
        one = lambda x: np.ones(len(x))
        return CoefficientField(dim, _isotropic(one, dim), lambda x: -x, one, name)
    if name == "brownian":
        one = lambda x: np.ones(len(x))
        return CoefficientField(dim, _isotropic(one, dim), lambda x: np.zeros_like(x), one, name)
    if name == "inverse-power":
        if alpha is None or not alpha > 0:
            raise ValueError(f"inverse-power operator needs alpha > 0, got {alpha}")
        s = lambda x: _radius(x) ** (-alpha)
        return CoefficientField(dim, _isotropic(s, dim), lambda x: -x, s, name, {"alpha": alpha})
    if name == "polynomial":
        if alpha is None or beta is None:
            raise ValueError("polynomial operator needs alpha and beta")
        if not alpha > 0:
            raise ValueError(f"polynomial operator needs alpha > 0, got {alpha}")
        if not beta > alpha - 1:
            raise ValueError(f"polynomial operator needs beta > alpha - 1, got beta={beta}, alpha={alpha}")
        s = lambda x: _radius(x) ** alpha
        b = lambda x: -(_radius(x) ** (beta - 1))[:, None] * x
        return CoefficientField(dim, _isotropic(s, dim), b, s, name, {"alpha": alpha, "beta": beta})
    raise ValueError(f"unknown operator {name!r}; expected one of {BUILTIN_OPERATORS}")


@dataclass(frozen=True)
class EllipticityReport:
    passed: bool
    symmetric: bool
    margin: float  # min over nodes of (smallest eigenvalue of a) - eta
    min_eta: float
    worst_node: int
    reason: str = ""


def check_ellipticity(coeff: CoefficientField, grid: Grid, sym_tol: float = 1e-12) -> EllipticityReport:
    """Check ``xi^T a(x) xi >= eta(x) |xi|^2`` with ``eta > 0`` at every node.

    A non-symmetric ``a`` is reported as a structural failure before any
    eigenvalue is looked at.
    """
    if grid.size == 0:
        raise ValueError("empty grid")
    x = grid.points
    a = coeff.a(x)
    eta = np.asarray(coeff.eta(x), dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(coeff.b(x))) and np.all(np.isfinite(eta))):
        return EllipticityReport(False, True, -np.inf, float(np.nanmin(eta)), -1, "non-finite coefficients")
    asym = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2))
    if np.any(asym > sym_tol):
        i = int(np.argmax(asym))
        return EllipticityReport(False, False, np.nan, float(eta.min()), i, f"a is not symmetric at node {i}")
    lam_min = np.linalg.eigvalsh(a)[:, 0]
    gap = lam_min - eta
    i = int(np.argmin(gap))
    passed = bool(gap[i] >= -1e-14 and eta.min() > 0)
    reason = "" if passed else ("eta not positive" if eta.min() <= 0 else f"ellipticity fails at node {i}")
    return EllipticityReport(passed, True, float(gap[i]), float(eta.min()), i, reason)


def drift_balance(coeff: CoefficientField, x) -> np.ndarray:
    """``sum_j (a_jj(x) + b_j(x) x_j)``; equals half of the operator applied to ``|x|^2``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, b = coeff(x)
    return np.einsum("mjj->m", a) + np.einsum("mj,mj->m", b, x)


def radial_rays(domain: DomainSpec, radii, directions: int = 8) -> np.ndarray:
    """Points ``(len(directions), len(radii), d)`` on rays leaving the boundary."""
    radii = np.asarray(radii, dtype=float)
    if domain.dim == 1:
        dirs = np.array([[1.0]]) if domain.kind.value == "half-line-exterior" else np.array([[1.0], [-1.0]])
    else:
        th = 2 * np.pi * np.arange(directions) / directions
        dirs = np.column_stack([np.cos(th), np.sin(th)])
    return dirs[:, None, :] * radii[None, :, None]


@dataclass(frozen=True)
class RadialTrend:
    radii: np.ndarray
    values: np.ndarray  # (directions, radii)
    eventually_decreasing: bool
    eventually_increasing: bool
    unbounded_below: bool
    unbounded_above: bool


def radial_trend(func, domain: DomainSpec, r_max: float = 1e3, samples: int = 40) -> RadialTrend:
    """Sample ``func`` on geometric radii out to ``r_max`` along several rays.

    "Unbounded" is judged on the samples: the tail half must be strictly
    monotone and the last value must exceed the first value in magnitude by a
    factor 10 (plus one).  A heuristic, not a proof.
    """
    r0 = domain.radius
    radii = r0 * np.geomspace(1.0 + 1e-6, r_max / r0, samples)
    pts = radial_rays(domain, radii)
    vals = np.stack([np.asarray(func(p), dtype=float) for p in pts])
    tail = vals[:, samples // 2 :]
    dec = bool(np.all(np.diff(tail, axis=1) < 0))
    inc = bool(np.all(np.diff(tail, axis=1) > 0))
    scale = 10.0 * (np.abs(vals[:, 0]) + 1.0)
    return RadialTrend(
        radii,
        vals,
        dec,
        inc,
        bool(dec and np.all(vals[:, -1] < -scale)),
        bool(inc and np.all(vals[:, -1] > scale)),
    )


def drift_balance_trend(coeff: CoefficientField, domain: DomainSpec, r_max: float = 1e3) -> RadialTrend:
    """Flags whether the drift balance decreases without bound as ``|x|`` grows."""
    return radial_trend(lambda p: drift_balance(coeff, p), domain, r_max)
