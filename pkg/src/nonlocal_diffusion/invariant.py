"""Invariant measures of the discrete semigroup: Abel means, stationary vectors, TV convergence."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .domain import Grid
from .resolvent import DiscreteOperator, GridFunction
from .semigroup import SemigroupEvolver, evolve_measure, trajectory

logger = logging.getLogger(__name__)

TV_TOL = 1e-3


@dataclass(eq=False)
class MeasureVector:
    """Nonnegative node masses on a grid."""

    grid: Grid
    masses: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} masses, got shape {m.shape}")
        if m.min(initial=0.0) < -1e-12:
            raise ValueError(f"negative mass {m.min()}")
        self.masses = np.maximum(m, 0.0)
        if self.total > 1 + 1e-9:
            raise ValueError(f"total mass {self.total} exceeds 1")

    @classmethod
    def dirac(cls, grid: Grid, node: int) -> MeasureVector:
        m = np.zeros(grid.size)
        m[node] = 1.0
        return cls(grid, m)

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def window_mass(self, radius: float | None = None) -> float:
        return float(self.masses[self.grid.window_mask(radius)].sum())

    def normalized(self) -> MeasureVector:
        return MeasureVector(self.grid, self.masses / self.total)

    def integrate(self, f) -> float:
        return float(np.dot(self.masses, np.asarray(f, dtype=float)))

    def to_csv(self, path, header_comment: str | None = None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", *["x", "y"][: self.grid.dim], "mass"])
            for i, (p, v) in enumerate(zip(self.grid.points, self.masses)):
                w.writerow([i, *(repr(float(c)) for c in p), repr(float(v))])


def bin_to_grid(points: np.ndarray, weights: np.ndarray, grid: Grid) -> np.ndarray:
    """Aggregate point masses onto the nearest interior node of ``grid`` within ``h``.

    The last entry of the result collects mass with no interior node in range.
    """
    inner = np.flatnonzero(grid.interior)
    _, j = cKDTree(grid.points[inner]).query(np.atleast_2d(points), distance_upper_bound=grid.h * (1 + 1e-9))
    counts = np.bincount(j, weights=weights, minlength=len(inner) + 1)
    out = np.zeros(grid.size + 1)
    out[inner] = counts[:-1]
    out[-1] = counts[-1]
    return out


def rebin(nu: MeasureVector, grid: Grid) -> MeasureVector:
    """``nu`` transferred to a (coarser) grid by nearest interior node; mass out of range is dropped."""
    return MeasureVector(grid, bin_to_grid(nu.grid.points, nu.masses, grid)[:-1])


def tv_distance(nu1, nu2) -> float:
    """``0.5 * sum |m1 - m2|``."""
    if isinstance(nu1, MeasureVector) and isinstance(nu2, MeasureVector):
        if nu1.grid is not nu2.grid and nu1.grid.keys != nu2.grid.keys:
            raise ValueError("grid mismatch")
        a, b = nu1.masses, nu2.masses
    else:
        a, b = np.asarray(nu1, dtype=float), np.asarray(nu2, dtype=float)
        if a.shape != b.shape:
            raise ValueError("grid mismatch")
    return 0.5 * float(np.abs(a - b).sum())


def _adjoint_resolvent(op: DiscreteOperator, lam: float, nu: np.ndarray) -> np.ndarray:
    """``lam R(lam)' nu`` restricted to interior nodes."""
    return np.where(op.interior, lam * op.factor(lam).solve(nu, trans="T"), 0.0)


@dataclass
class AbelResult:
    lams: list
    measures: list
    window_masses: list
    tv_steps: list  # TV between successive measures
    converged: bool

    @property
    def limit(self) -> MeasureVector:
        return self.measures[-1]


def abel_sequence(k_max: int = 14) -> list[float]:
    return [2.0**-k for k in range(k_max + 1)]


def abel_invariant(
    op: DiscreteOperator,
    x0,
    lams=None,
    tol: float = TV_TOL,
    window_radius: float | None = None,
) -> AbelResult:
    """``nu_lam = lam R(lam)' delta_{x0}`` along a decreasing ``lam`` sequence.

    Converged when the last successive TV distance is below ``tol``.  The
    window mass per ``lam`` is the tightness proxy.
    """
    lams = abel_sequence() if lams is None else list(lams)
    if any(b >= a for a, b in zip(lams, lams[1:])) or min(lams) <= 0:
        raise ValueError("lambda sequence must be positive and strictly decreasing")
    node = op.grid.nearest_node(np.atleast_1d(np.asarray(x0, dtype=float)))
    e = np.zeros(op.size)
    e[node] = 1.0
    measures, wm, tvs = [], [], []
    for lam in lams:
        nu = MeasureVector(op.grid, _adjoint_resolvent(op, lam, e))
        if measures:
            tvs.append(tv_distance(measures[-1], nu))
        measures.append(nu)
        wm.append(nu.window_mass(window_radius))
        logger.debug("abel lam=%g window mass %.6f", lam, wm[-1])
    return AbelResult(lams, measures, wm, tvs, bool(tvs and tvs[-1] < tol))


@dataclass
class StationaryResult:
    measure: MeasureVector
    rate: float  # top eigenvalue of the reduced generator (<= 0); 0 means mass conserving
    eigenvalue: float  # of the adjoint one-step map at the reference step
    reliable: bool
    iterations: int


def _inverse_iteration(solve, n: int, start: np.ndarray, shift: float, tol: float, maxiter: int):
    nu = start / start.sum()
    mu = 1.0
    for it in range(1, maxiter + 1):
        w = shift * solve(nu)
        mu = w.sum()
        w /= mu
        done = 0.5 * np.abs(w - nu).sum() < tol
        nu = w
        if done:
            return nu, mu, it
    return nu, mu, maxiter


def stationary_solve(
    op: DiscreteOperator,
    shift: float = 1e-3,
    tol: float = 1e-13,
    maxiter: int = 200,
    tau: float = 0.01,
    eig_tol: float = 1e-6,
) -> StationaryResult:
    """Dominant nonnegative fixed vector of the adjoint by shifted inverse iteration.

    Iterates ``nu <- shift R(shift)' nu`` (normalized).  The mass ratio gives
    the top generator eigenvalue ``q``; the one-step adjoint eigenvalue at
    step ``tau`` is ``1 / (1 - tau q)``.  ``reliable`` is false when that
    eigenvalue is below ``1 - eig_tol`` (mass escapes at this truncation).
    """
    start = np.where(op.interior, 1.0, 0.0)
    nu, mu, it = _inverse_iteration(lambda v: op.factor(shift).solve(v, trans="T") * op.interior, op.size, start, shift, tol, maxiter)
    q = shift * (1.0 - 1.0 / mu)
    eig = 1.0 / (1.0 - tau * q)
    return StationaryResult(MeasureVector(op.grid, nu), float(q), float(eig), bool(eig >= 1 - eig_tol), it)


def stationary_from_generator(Q, shift: float = 1e-3, tol: float = 1e-14, maxiter: int = 500) -> np.ndarray:
    """Stationary probability row vector of a (sub-)Markov rate matrix ``Q``."""
    Q = sp.csc_matrix(Q)
    lu = spla.splu((shift * sp.identity(Q.shape[0]) - Q).T.tocsc())
    nu, _, _ = _inverse_iteration(lu.solve, Q.shape[0], np.ones(Q.shape[0]), shift, tol, maxiter)
    return nu


@dataclass
class ConvergenceReport:
    times: list
    tv: list
    deviations: dict  # name -> list of sup_window |T(t) f - <f, nu*>|
    nonincreasing_after: float | None  # first time after which tv is nonincreasing

    @property
    def final_tv(self) -> float:
        return self.tv[-1]


def convergence_study(
    ev: SemigroupEvolver,
    nu0: MeasureVector,
    nu_star: MeasureVector,
    times,
    dictionary: dict | None = None,
    window_radius: float | None = None,
    floor: float = 1e-10,
) -> ConvergenceReport:
    """TV distance of the adjoint-evolved ``nu0`` to ``nu_star`` at ``times``.

    Increases smaller than ``floor`` are roundoff around the accuracy of
    ``nu_star`` and do not break monotonicity.
    """
    times = list(times)
    tv, nu, done = [], nu0.masses.copy(), 0
    for t in times:
        nu = evolve_measure(ev, nu, t - done)
        done = t
        tv.append(tv_distance(nu, nu_star.masses))
    dev = {}
    mask = ev.grid.window_mask(window_radius) & ev.op.interior
    for name, f in (dictionary or {}).items():
        fv = f.values if isinstance(f, GridFunction) else np.asarray(f, dtype=float)
        target = nu_star.integrate(fv)
        snaps = trajectory(ev, fv, times)
        dev[name] = [float(np.max(np.abs(u.values[mask] - target))) for u in snaps]
    after = None
    for i in range(len(tv)):
        if all(b <= a + floor for a, b in zip(tv[i:], tv[i + 1 :])):
            after = times[i]
            break
    return ConvergenceReport(times, tv, dev, after)
