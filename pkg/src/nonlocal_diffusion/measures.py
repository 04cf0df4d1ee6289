"""Boundary return measures ``z -> mu(z, .)`` and their grid discretizations.

A measure spec is either atomic (finitely many weighted points, each either
fixed or moving radially with ``z``) or absolutely continuous.  On a grid the
measure becomes a nonnegative weight row per physical boundary node; the
truncated rows additionally carry the radial cutoff at the boundary point and
at every node, so their mass is at most one and grows with the truncation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy import integrate as spi

from .domain import ARTIFICIAL, INTERIOR, PHYSICAL, DomainSpec, Grid, cutoff_rho
from .errors import DivergentIntegralError

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def _as_point(z) -> np.ndarray:
    return np.atleast_1d(np.asarray(z, dtype=float))


class BoundaryMeasureSpec:
    """Interface shared by atomic and density return measures."""

    dim: int

    def mass_below(self, z, R: float) -> float:
        """``mu(z, {|x| < R})``."""
        raise NotImplementedError

    def integrate(self, z, g) -> float:
        """``int g dmu(z)`` for a vectorized ``g`` acting on ``(m, d)`` points."""
        raise NotImplementedError

    def sample(self, z, rng: np.random.Generator) -> np.ndarray:
        """One sample of ``mu(z_k)`` per row of ``z``."""
        raise NotImplementedError

    def support_radius(self, domain: DomainSpec) -> float:
        """Largest ``|x|`` charged by any ``mu(z)``; ``inf`` for unbounded support."""
        raise NotImplementedError

    def discretize(self, z, grid: Grid) -> tuple[np.ndarray, np.ndarray, float]:
        """Weight row of ``mu(z)`` on ``grid`` as ``(node indices, weights, mass deficit)``."""
        raise NotImplementedError

    def validate(self, domain: DomainSpec, samples: int = 64) -> None:
        """Raise ``ValueError`` unless every ``mu(z)`` is a probability measure on the domain."""
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


# --------------------------------------------------------------------------- atoms


@dataclass(frozen=True)
class Atom:
    """Point mass at ``point`` or, when ``scale`` is given, at ``scale * z``."""

    weight: float
    point: tuple | None = None
    scale: float | None = None

    def __post_init__(self):
        if (self.point is None) == (self.scale is None):
            raise ValueError("an atom needs exactly one of point or scale")
        if self.point is not None:
            object.__setattr__(self, "point", tuple(float(c) for c in np.atleast_1d(self.point)))
        if not self.weight >= 0:
            raise ValueError(f"atom weight must be nonnegative, got {self.weight}")

    def location(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if self.point is not None:
            return np.broadcast_to(np.asarray(self.point), z.shape).copy()
        return self.scale * z


@dataclass(frozen=True)
class AtomicMeasure(BoundaryMeasureSpec):
    atoms: tuple
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise ValueError("atomic measure needs at least one atom")
        total = sum(a.weight for a in self.atoms)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"atom weights must sum to 1, got {total}")
        for a in self.atoms:
            if a.point is not None and len(a.point) != self.dim:
                raise ValueError(f"atom {a.point} does not match dimension {self.dim}")

    @classmethod
    def dirac(cls, point, dim: int | None = None) -> AtomicMeasure:
        point = tuple(np.atleast_1d(point).astype(float))
        return cls((Atom(1.0, point=point),), dim or len(point))

    @classmethod
    def radial(cls, scale: float, dim: int) -> AtomicMeasure:
        return cls((Atom(1.0, scale=scale),), dim)

    @cached_property
    def _weights(self):
        return np.array([a.weight for a in self.atoms])

    def locations(self, z) -> np.ndarray:
        """``(len(z), n_atoms, d)`` atom locations."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.stack([a.location(z) for a in self.atoms], axis=1)

    def mass_below(self, z, R):
        loc = self.locations(_as_point(z))[0]
        return float(self._weights[np.linalg.norm(loc, axis=1) < R].sum())

    def integrate(self, z, g):
        loc = self.locations(_as_point(z))[0]
        return float(np.dot(self._weights, g(loc)))

    def sample(self, z, rng):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        k = np.searchsorted(np.cumsum(self._weights), rng.random(len(z)) * self._weights.sum(), side="right")
        k = np.minimum(k, len(self.atoms) - 1)
        return self.locations(z)[np.arange(len(z)), k]

    def atom_index(self, z, x) -> np.ndarray:
        """Index of the atom each post-jump point ``x[i]`` came from (nearest location)."""
        loc = self.locations(z)
        return np.argmin(np.linalg.norm(loc - np.asarray(x)[:, None, :], axis=2), axis=1)

    def support_radius(self, domain):
        z = domain.boundary_points()
        return float(np.linalg.norm(self.locations(z), axis=2).max())

    def validate(self, domain, samples=64):
        z = domain.boundary_points(samples)
        loc = self.locations(z).reshape(-1, self.dim)
        if not np.all(domain.contains(loc)):
            raise ValueError("atom locations must lie strictly inside the domain")

    def discretize(self, z, grid):
        z = _as_point(z)
        idx, wts, deficit = [], [], 0.0
        for atom, loc in zip(self.atoms, self.locations(z)[0]):
            i, w = _interpolate_point(loc, grid)
            if len(i) == 0:
                deficit += atom.weight
                continue
            idx.append(i)
            wts.append(atom.weight * w)
            deficit += atom.weight * (1.0 - w.sum())
        return _merge(idx, wts, deficit)

    def to_config(self):
        out = []
        for a in self.atoms:
            d = {"weight": a.weight}
            if a.point is not None:
                d["point"] = list(a.point)
            else:
                d["scale"] = a.scale
            out.append(d)
        return {"atoms": out}


def _merge(idx, wts, deficit):
    if not idx:
        return np.zeros(0, dtype=np.int64), np.zeros(0), float(deficit)
    idx = np.concatenate(idx)
    wts = np.concatenate(wts)
    uniq, inv = np.unique(idx, return_inverse=True)
    return uniq, np.bincount(inv, weights=wts), float(max(deficit, 0.0))


def _interpolate_point(x, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Linear (1D) or bilinear (2D) interpolation weights of a point onto grid nodes.

    Cell vertices missing because they lie beyond the truncation are dropped
    (their mass is cut off anyway); vertices missing because they lie outside
    the domain hand their weight to the remaining vertices.
    """
    x = np.asarray(x, dtype=float)
    if grid.dim == 1:
        order = np.argsort(grid.points[:, 0])
        xs = grid.points[order, 0]
        if x[0] < xs[0] - 1e-12 or x[0] > xs[-1] + 1e-12:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        j = int(np.searchsorted(xs, x[0]))
        if j < len(xs) and abs(xs[j] - x[0]) <= 1e-12 * max(1.0, abs(x[0])):
            return np.array([order[j]]), np.array([1.0])
        lo, hi = xs[j - 1], xs[j]
        t = (x[0] - lo) / (hi - lo)
        return np.array([order[j - 1], order[j]]), np.array([1.0 - t, t])

    h = grid.h
    base = np.floor(x / h).astype(np.int64)
    frac = x / h - base
    idx, wts, lost_inside = [], [], 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            w = (frac[0] if dx else 1 - frac[0]) * (frac[1] if dy else 1 - frac[1])
            if w <= 0:
                continue
            key = (int(base[0] + dx), int(base[1] + dy))
            i = grid.index_of(key)
            if i is not None:
                idx.append(i)
                wts.append(w)
            elif grid.domain.signed_distance(np.asarray(key, dtype=float) * h)[0] <= 0:
                lost_inside += w
    if not idx:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    wts = np.asarray(wts)
    if lost_inside > 0:
        wts = wts * (1.0 + lost_inside / wts.sum())
    return np.asarray(idx, dtype=np.int64), wts


# --------------------------------------------------------------------------- densities


class DensityMeasure(BoundaryMeasureSpec):
    """Absolutely continuous return measure; subclasses supply density and envelope."""

    def density(self, z, x) -> np.ndarray:
        raise NotImplementedError

    def envelope(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Bounding box ``(lo, hi)`` of the support of ``mu(z)``; the density is bounded there."""
        raise NotImplementedError

    def density_max(self, z) -> float:
        raise NotImplementedError

    def sample(self, z, rng):
        # rejection against the uniform density on the envelope box
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        todo = np.arange(len(z))
        while len(todo):
            lo, hi = zip(*(self.envelope(zi) for zi in z[todo]))
            lo, hi = np.array(lo), np.array(hi)
            cand = lo + (hi - lo) * rng.random(lo.shape)
            fmax = np.array([self.density_max(zi) for zi in z[todo]])
            dens = np.array([self.density(zi, c[None, :])[0] for zi, c in zip(z[todo], cand)])
            ok = rng.random(len(todo)) * fmax <= dens
            out[todo[ok]] = cand[ok]
            todo = todo[~ok]
        return out

    def discretize(self, z, grid, sub: int = 4):
        """Dual-cell midpoint quadrature on lattice nodes with ``sub`` points per axis."""
        z = _as_point(z)
        h, d = grid.h, grid.dim
        lattice = grid.is_lattice() & (grid.kind != PHYSICAL)
        lo, hi = self.envelope(z)
        near = np.all((grid.points >= lo - h) & (grid.points <= hi + h), axis=1)
        cand = np.flatnonzero(lattice & near)
        offs = (np.arange(sub) + 0.5) / sub - 0.5
        cell = np.stack(np.meshgrid(*([offs] * d), indexing="ij"), axis=-1).reshape(-1, d) * h
        pts = grid.points[cand][:, None, :] + cell[None]
        vals = self.density(z, pts.reshape(-1, d)).reshape(len(cand), -1)
        w = vals.mean(axis=1) * h**d
        # dual cells of boundary lattice nodes hand their mass to an interior neighbour
        extra_idx, extra_w = [], []
        for i in np.flatnonzero(grid.is_lattice() & (grid.kind == PHYSICAL) & near):
            p = grid.points[i][None, :] + cell
            m = self.density(z, p).mean() * h**d
            if m > 0:
                extra_idx.append(_interior_neighbour(grid, i))
                extra_w.append(m)
        idx = np.concatenate([cand, np.asarray(extra_idx, dtype=np.int64)])
        wts = np.concatenate([w, np.asarray(extra_w)])
        keep = wts > 0
        idx, wts = idx[keep], wts[keep]
        total = self.mass_below(z, np.inf)
        i, w, _ = _merge([idx], [wts], 0.0)
        return i, w, float(max(total - w.sum(), 0.0))


def _interior_neighbour(grid: Grid, i: int) -> int:
    p = grid.points[i]
    for dvec in np.vstack([np.eye(grid.dim), -np.eye(grid.dim)]):
        j = grid.index_of(tuple(int(v) for v in grid.lattice_index(p + grid.h * dvec)))
        if j is not None and grid.kind[j] == INTERIOR:
            return j
    return grid.nearest_node(p)


@dataclass(frozen=True)
class UniformBallDensity(DensityMeasure):
    """Uniform law on the ball of ``radius`` centred at ``scale * z`` (or at ``center``)."""

    radius: float
    scale: float | None = None
    center: tuple | None = None
    dim: int = 1

    def __post_init__(self):
        if (self.scale is None) == (self.center is None):
            raise ValueError("uniform-ball density needs exactly one of scale or center")
        if not self.radius > 0:
            raise ValueError("uniform-ball radius must be positive")
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    def centre(self, z) -> np.ndarray:
        z = _as_point(z)
        return np.asarray(self.center) if self.center is not None else self.scale * z

    @property
    def volume(self):
        return 2 * self.radius if self.dim == 1 else math.pi * self.radius**2

    def density(self, z, x):
        x = np.atleast_2d(x)
        inside = np.linalg.norm(x - self.centre(z), axis=1) < self.radius
        return inside / self.volume

    def density_max(self, z):
        return 1.0 / self.volume

    def envelope(self, z):
        c = self.centre(z)
        return c - self.radius, c + self.radius

    def sample(self, z, rng):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        c = np.array([self.centre(zi) for zi in z])
        if self.dim == 1:
            return c + self.radius * (2 * rng.random(c.shape) - 1)
        # rejection from the bounding square; the envelope density is flat
        out = np.empty_like(c)
        todo = np.arange(len(c))
        while len(todo):
            y = 2 * rng.random((len(todo), 2)) - 1
            ok = np.sum(y**2, axis=1) < 1
            out[todo[ok]] = c[todo[ok]] + self.radius * y[ok]
            todo = todo[~ok]
        return out

    def mass_below(self, z, R):
        c, rho = self.centre(z), self.radius
        if not math.isfinite(R):
            return 1.0
        if self.dim == 1:
            lo, hi = c[0] - rho, c[0] + rho
            return max(0.0, min(hi, R) - max(lo, -R)) / (2 * rho)
        return _lens_area(np.linalg.norm(c), rho, R) / self.volume

    def integrate(self, z, g):
        c, rho = self.centre(z), self.radius
        if self.dim == 1:
            x = c[0] + rho * _GL_X
            return float(0.5 * np.dot(_GL_W, g(x[:, None])))
        # polar Gauss-Legendre in r, trapezoid in angle
        r = 0.5 * rho * (_GL_X + 1)
        wr = 0.5 * rho * _GL_W * r
        th = 2 * np.pi * np.arange(128) / 128
        pts = c + np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], axis=-1)
        vals = g(pts.reshape(-1, 2)).reshape(len(r), len(th))
        return float((wr @ vals).sum() * (2 * np.pi / 128) / self.volume)

    def pit(self, z, x) -> np.ndarray:
        """Coordinates that are i.i.d. uniform on ``[0, 1)`` under ``mu(z)``."""
        c = np.array([self.centre(zi) for zi in np.atleast_2d(z)])
        y = (np.asarray(x) - c) / self.radius
        if self.dim == 1:
            return (y + 1) / 2
        return np.column_stack([np.sum(y**2, axis=1), (np.arctan2(y[:, 1], y[:, 0]) / (2 * np.pi)) % 1.0])

    def support_radius(self, domain):
        z = domain.boundary_points()
        return float(max(np.linalg.norm(self.centre(zi)) for zi in z) + self.radius)

    def validate(self, domain, samples=64):
        for zi in domain.boundary_points(samples):
            c = self.centre(zi)
            if domain.signed_distance(c[None])[0] < self.radius - 1e-12:
                raise ValueError("uniform-ball support must lie inside the domain")

    def to_config(self):
        d = {"name": "uniform-ball", "radius": self.radius}
        if self.scale is not None:
            d["scale"] = self.scale
        else:
            d["center"] = list(self.center)
        return {"density": d}


def _lens_area(dist: float, rho: float, R: float) -> float:
    """Area of ``B(c, rho) ∩ B(0, R)`` with ``|c| = dist``."""
    if dist >= rho + R:
        return 0.0
    if dist <= abs(R - rho):
        return math.pi * min(rho, R) ** 2
    a1 = rho**2 * math.acos((dist**2 + rho**2 - R**2) / (2 * dist * rho))
    a2 = R**2 * math.acos((dist**2 + R**2 - rho**2) / (2 * dist * R))
    a3 = 0.5 * math.sqrt((-dist + rho + R) * (dist + rho - R) * (dist - rho + R) * (dist + rho + R))
    return a1 + a2 - a3


@dataclass(frozen=True)
class ParetoDensity(DensityMeasure):
    """Heavy-tailed 1D return law with density ``k |z|^k |x|^(-k-1)`` on the side of ``z``.

    For ``k <= 2`` the second moment is infinite.
    """

    k: float
    dim: int = 1

    def __post_init__(self):
        if self.dim != 1:
            raise ValueError("Pareto return density is one-dimensional")
        if not self.k > 0:
            raise ValueError("Pareto exponent must be positive")

    def density(self, z, x):
        z0 = abs(float(_as_point(z)[0]))
        s = np.sign(_as_point(z)[0])
        y = s * np.atleast_2d(x)[:, 0]
        with np.errstate(divide="ignore"):
            return np.where(y > z0, self.k * z0**self.k * np.abs(y) ** (-self.k - 1), 0.0)

    def density_max(self, z):
        return self.k / abs(float(_as_point(z)[0]))

    def envelope(self, z):
        z0 = float(_as_point(z)[0])
        return (np.array([z0]), np.array([np.inf])) if z0 > 0 else (np.array([-np.inf]), np.array([z0]))

    def sample(self, z, rng):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        u = 1.0 - rng.random(len(z))
        return z * u[:, None] ** (-1.0 / self.k)

    def pit(self, z, x):
        z0 = np.abs(np.atleast_2d(z)[:, 0])
        return 1.0 - (z0 / np.abs(np.asarray(x)[:, 0])) ** self.k

    def mass_below(self, z, R):
        z0 = abs(float(_as_point(z)[0]))
        return 0.0 if R <= z0 else 1.0 - (z0 / R) ** self.k

    def integrate(self, z, g, rtol: float = 1e-10, max_doublings: int = 60):
        """Integrate over doubling shells; raise if the partial sums do not settle."""
        z0 = float(_as_point(z)[0])
        s = math.copysign(1.0, z0)
        f = lambda y: float(g(np.array([[s * y]]))[0]) * self.k * abs(z0) ** self.k * y ** (-self.k - 1)
        total, lo = 0.0, abs(z0)
        for _ in range(max_doublings):
            part, _err = spi.quad(f, lo, 2 * lo, limit=200)
            total += part
            lo *= 2
            if abs(part) <= rtol * max(abs(total), 1e-300):
                return total
        raise DivergentIntegralError(f"integral against the Pareto(k={self.k}) return law does not converge")

    def support_radius(self, domain):
        return math.inf

    def validate(self, domain, samples=64):
        for zi in domain.boundary_points(samples):
            if not domain.contains(zi[None] * 1.0000001)[0]:
                raise ValueError("Pareto support must lie inside the domain")

    def to_config(self):
        return {"density": {"name": "pareto", "k": self.k}}


def measure_from_config(cfg: dict, dim: int) -> BoundaryMeasureSpec:
    """Build a measure spec from ``{"atoms": [...]}`` or ``{"density": {...}}``."""
    if "atoms" in cfg:
        atoms = tuple(
            Atom(float(a["weight"]), point=a.get("point"), scale=a.get("scale")) for a in cfg["atoms"]
        )
        return AtomicMeasure(atoms, dim)
    dens = dict(cfg["density"])
    name = dens.pop("name")
    if name == "uniform-ball":
        return UniformBallDensity(float(dens["radius"]), dens.get("scale"), dens.get("center"), dim)
    if name == "pareto":
        return ParetoDensity(float(dens["k"]), dim)
    raise ValueError(f"unknown density {name!r}")


# --------------------------------------------------------------------------- truncation


def discretize_measure(spec: BoundaryMeasureSpec, z, grid: Grid):
    """Weight row of ``mu(z)`` on ``grid``: ``(node indices, weights, recorded mass deficit)``."""
    return spec.discretize(z, grid)


@dataclass(frozen=True, eq=False)
class TruncatedMeasure:
    """Cutoff-truncated measure rows at the physical boundary nodes of a grid.

    ``rows[k]`` is the weight row of boundary node ``boundary_nodes[k]``;
    artificial boundary nodes implicitly carry a zero row.
    """

    grid: Grid
    spec: BoundaryMeasureSpec
    boundary_nodes: np.ndarray
    rows: sp.csr_matrix
    deficits: np.ndarray

    @property
    def masses(self) -> np.ndarray:
        return np.asarray(self.rows.sum(axis=1)).ravel()

    def full_matrix(self) -> sp.csr_matrix:
        """Weights as a ``(size, size)`` matrix indexed by node."""
        m = self.grid.size
        coo = self.rows.tocoo()
        return sp.csr_matrix((coo.data, (self.boundary_nodes[coo.row], coo.col)), shape=(m, m))

    def to_csv(self, path, header_comment: str | None = None):
        coo = self.rows.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z_node", "node", "weight"])
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                w.writerow([int(self.boundary_nodes[r]), int(c), repr(float(v))])


def truncate_measure(spec: BoundaryMeasureSpec, n: int, grid: Grid) -> TruncatedMeasure:
    """Rows ``rho_n(z) * w(z, x) * rho_n(x)`` at the physical boundary nodes of ``grid``."""
    bnodes = np.flatnonzero(grid.kind == PHYSICAL)
    rho_nodes = cutoff_rho(n, grid.points)
    data, cols, rptr, deficits = [], [], [0], []
    for z in grid.points[bnodes]:
        idx, w, deficit = spec.discretize(z, grid)
        w = cutoff_rho(n, z) * w * rho_nodes[idx]
        keep = w > 0
        data.append(w[keep])
        cols.append(idx[keep])
        rptr.append(rptr[-1] + int(keep.sum()))
        deficits.append(deficit)
    rows = sp.csr_matrix(
        (np.concatenate(data) if data else np.zeros(0), np.concatenate(cols) if cols else np.zeros(0, int), rptr),
        shape=(len(bnodes), grid.size),
    )
    return TruncatedMeasure(grid, spec, bnodes, rows, np.asarray(deficits))


@dataclass(frozen=True)
class MonotoneReport:
    passed: bool
    worst_excess: float  # max over shared entries of w_n - w_{n+1}


def check_monotone(t_n: TruncatedMeasure, t_next: TruncatedMeasure, tol: float = 1e-12) -> MonotoneReport:
    """Entrywise ``mu_n(z) <= mu_{n+1}(z)`` on shared nodes (missing entries count as 0)."""
    g0, g1 = t_n.grid, t_next.grid
    if g0.domain != g1.domain or g0.h != g1.h or t_n.spec != t_next.spec:
        raise ValueError("grid-mismatch: truncations must share domain, spacing and measure spec")
    worst = -np.inf
    for k, zi in enumerate(t_n.boundary_nodes):
        j_z = g1.index_of(g0.keys[zi])
        if j_z is None:
            raise ValueError("grid-mismatch: boundary node missing from the larger truncation")
        k1 = int(np.searchsorted(t_next.boundary_nodes, j_z))
        if k1 >= len(t_next.boundary_nodes) or t_next.boundary_nodes[k1] != j_z:
            raise ValueError("grid-mismatch: boundary node classified differently in the larger truncation")
        row0 = t_n.rows.getrow(k)
        row1 = t_next.rows.getrow(k1).toarray().ravel()
        for c, v in zip(row0.indices, row0.data):
            j = g1.index_of(g0.keys[c])
            other = row1[j] if j is not None else 0.0
            worst = max(worst, v - other)
    worst = 0.0 if worst == -np.inf else float(worst)
    return MonotoneReport(worst <= tol, worst)


@dataclass(frozen=True)
class ConcentrationReport:
    passed: bool
    min_mass: float
    witness: np.ndarray  # boundary point attaining the minimum
    smallest_n_half: int | None  # smallest N with mu(z, Omega_N) >= 1/2 for all sampled z


def _mass_in_truncation(spec, z, N):
    return spec.mass_below(z, N + 1.0)


def concentration_check(
    spec: BoundaryMeasureSpec, domain: DomainSpec, N: int, eps: float, samples: int = 64, n_search: int = 256
) -> ConcentrationReport:
    """Is ``mu(z, Omega_N) >= eps`` at every sampled boundary point?"""
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    zs = domain.boundary_points(samples)
    masses = np.array([_mass_in_truncation(spec, z, N) for z in zs])
    k = int(np.argmin(masses))
    smallest = None
    for M in range(max(1, int(math.floor(domain.radius))), n_search + 1):
        if M + 1 <= domain.radius:
            continue
        if min(_mass_in_truncation(spec, z, M) for z in zs) >= 0.5:
            smallest = M
            break
    return ConcentrationReport(bool(masses.min() >= eps), float(masses[k]), zs[k], smallest)


def second_moment_sup(spec: BoundaryMeasureSpec, domain: DomainSpec, samples: int = 64) -> float:
    """``sup_z int |x|^2 dmu(z)`` over sampled boundary points (raises if divergent)."""
    sq = lambda x: np.sum(np.atleast_2d(x) ** 2, axis=1)
    return max(spec.integrate(z, sq) for z in domain.boundary_points(samples))


def continuity_diagnostic(spec: BoundaryMeasureSpec, domain: DomainSpec, counts=(16, 32, 64, 128)) -> list[float]:
    """Max jump of ``<f, mu(z)>`` between adjacent sampled boundary points, per sampling level.

    The test dictionary holds a few smooth bounded functions; the sequence
    should tend to zero for a weakly continuous ``z -> mu(z)``.
    """
    dictionary = [
        lambda x: np.exp(-np.sum(x**2, axis=1) / 8),
        lambda x: np.tanh(x[:, 0]),
        lambda x: 1 / (1 + np.sum(x**2, axis=1)),
    ]
    if domain.dim == 2:
        dictionary.append(lambda x: np.sin(x[:, 1]))
    out = []
    for c in counts:
        zs = domain.boundary_points(c)
        vals = np.array([[spec.integrate(z, f) for f in dictionary] for z in zs])
        jumps = np.abs(vals - np.roll(vals, 1, axis=0)) if len(zs) > 1 else np.zeros_like(vals)
        out.append(float(jumps.max()))
    return out
