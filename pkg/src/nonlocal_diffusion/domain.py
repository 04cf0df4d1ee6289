"""Exterior domains, their truncations and the tensor grids that discretize them.

Two domain families are supported: the half-line ``(c, inf)`` and the exterior
of a closed ball of radius ``r0`` in one or two dimensions.  The truncation
``Omega_n`` is the intersection with the open ball of radius ``n + 1``.

Grids are uniform lattices aligned to the origin, so the grids of consecutive
truncations nest exactly.  Near the physical boundary the arms of the stencil
are shortened so that boundary nodes sit exactly on the boundary; the
artificial boundary uses the first lattice points with ``|x| >= n + 1 - h/2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptyTruncationError

INTERIOR = 0
PHYSICAL = 1
ARTIFICIAL = 2

NODE_CLASS_NAMES = {INTERIOR: "interior", PHYSICAL: "physical-boundary", ARTIFICIAL: "artificial-boundary"}

# relative tolerance (in units of h) below which a lattice point counts as lying on the boundary
_SNAP = 1e-9


class DomainKind(str, Enum):
    HALF_LINE = "half-line-exterior"
    BALL = "ball-exterior"


@dataclass(frozen=True)
class DomainSpec:
    """An unbounded open set with compact boundary.

    ``radius`` is ``c`` for the half-line ``(c, inf)`` and ``r0`` for the
    exterior of the closed ball.
    """

    kind: DomainKind
    radius: float
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"domain radius must be positive and finite, got {self.radius}")
        if self.kind is DomainKind.HALF_LINE and self.dim != 1:
            raise ValueError("the half-line domain is one-dimensional")
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")

    @classmethod
    def half_line(cls, c: float = 1.0) -> DomainSpec:
        return cls(DomainKind.HALF_LINE, float(c), 1)

    @classmethod
    def ball_exterior(cls, r0: float = 1.0, dim: int = 2) -> DomainSpec:
        return cls(DomainKind.BALL, float(r0), dim)

    def signed_distance(self, x) -> np.ndarray:
        """Distance to the boundary, positive inside the domain."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind is DomainKind.HALF_LINE:
            return x[:, 0] - self.radius
        return np.linalg.norm(x, axis=1) - self.radius

    def contains(self, x) -> np.ndarray:
        return self.signed_distance(x) > 0

    def project_to_boundary(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind is DomainKind.HALF_LINE:
            return np.full_like(x, self.radius)
        r = np.linalg.norm(x, axis=1, keepdims=True)
        return x * (self.radius / r)

    def boundary_points(self, count: int = 64) -> np.ndarray:
        """Sample points on the boundary (all of it when it is finite)."""
        if self.kind is DomainKind.HALF_LINE:
            return np.array([[self.radius]])
        if self.dim == 1:
            return np.array([[-self.radius], [self.radius]])
        theta = 2 * np.pi * np.arange(count) / count
        return self.radius * np.column_stack([np.cos(theta), np.sin(theta)])

    def crossing_distance(self, p, direction, length: float) -> np.ndarray:
        """Distance along a ray from ``p`` (inside) to the first boundary crossing.

        ``direction`` is a unit vector (or one per point).  Returns ``inf`` where
        the boundary is not crossed within ``length``.
        """
        p = np.atleast_2d(np.asarray(p, dtype=float))
        e = np.broadcast_to(np.asarray(direction, dtype=float), p.shape)
        out = np.full(len(p), np.inf)
        if self.kind is DomainKind.HALF_LINE:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (self.radius - p[:, 0]) / e[:, 0]
        else:
            # |p + t e|^2 = r0^2, smaller root
            pe = np.einsum("ij,ij->i", p, e)
            disc = pe**2 - (np.einsum("ij,ij->i", p, p) - self.radius**2)
            with np.errstate(invalid="ignore"):
                t = np.where(disc > 0, -pe - np.sqrt(np.maximum(disc, 0.0)), np.inf)
        hit = (t > 0) & (t <= length)
        out[hit] = t[hit]
        return out


def cutoff_rho(n: int, x):
    """Continuous radial cutoff: 1 on ``|x| <= n``, 0 on ``|x| >= n + 1``, linear between.

    ``x`` is a scalar, a single point, or an ``(m, d)`` array of points.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return np.clip(n + 1.0 - np.linalg.norm(x, axis=1), 0.0, 1.0)
    return float(np.clip(n + 1.0 - np.linalg.norm(x), 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class Grid:
    """Discretization of ``Omega_n`` with node classification and stencil arms.

    ``neighbors[i, 2k]`` / ``neighbors[i, 2k+1]`` index the node reached from
    interior node ``i`` along ``-e_k`` / ``+e_k``; ``arms`` holds the lengths.
    Both are ``-1`` / ``nan`` for non-interior nodes.
    """

    domain: DomainSpec
    n: int
    h: float
    points: np.ndarray
    kind: np.ndarray
    keys: tuple
    neighbors: np.ndarray
    arms: np.ndarray
    window_radius: float
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.keys)})

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    @property
    def interior(self) -> np.ndarray:
        return self.kind == INTERIOR

    @property
    def physical(self) -> np.ndarray:
        return self.kind == PHYSICAL

    @property
    def artificial(self) -> np.ndarray:
        return self.kind == ARTIFICIAL

    def index_of(self, key):
        return self._index.get(key)

    def is_lattice(self) -> np.ndarray:
        return np.array([isinstance(k[0], (int, np.integer)) for k in self.keys])

    def window_mask(self, radius: float | None = None) -> np.ndarray:
        """Nodes of the closed window ``|x| <= radius`` that persist under exhaustion.

        Off-lattice artificial nodes never occur (artificial nodes are lattice
        points), so every returned node also exists in all larger truncations.
        """
        radius = self.window_radius if radius is None else radius
        return self.radii <= radius + 1e-12 * max(1.0, radius)

    def nearest_node(self, x, kinds=(INTERIOR,)) -> int:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        mask = np.isin(self.kind, kinds)
        cand = np.flatnonzero(mask)
        d = np.linalg.norm(self.points[cand] - x, axis=1)
        return int(cand[np.argmin(d)])

    def lattice_index(self, x) -> np.ndarray:
        return np.rint(np.asarray(x, dtype=float) / self.h).astype(np.int64)

    def to_csv(self, path, header_comment: str | None = None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            coords = ["x", "y"][: self.dim]
            w.writerow(["node", *coords, "class"])
            for i, (p, k) in enumerate(zip(self.points, self.kind)):
                w.writerow([i, *(repr(float(c)) for c in p), NODE_CLASS_NAMES[int(k)]])


def build_exhaustion(domain: DomainSpec, n: int, h: float, window_radius: float | None = None) -> Grid:
    """Grid of ``Omega_n = Omega ∩ B_{n+1}(0)`` with spacing ``h``.

    Raises
    ------
    EmptyTruncationError
        If ``n + 1 <= radius`` (the truncation is empty) or no lattice point of
        spacing ``h`` falls inside it.
    """
    if not h > 0:
        raise ValueError(f"spacing must be positive, got {h}")
    if n < 0 or int(n) != n:
        raise ValueError(f"truncation index must be a non-negative integer, got {n}")
    n = int(n)
    R = n + 1.0
    if R <= domain.radius:
        raise EmptyTruncationError(f"Omega_{n} is empty: n + 1 = {R} <= {domain.radius}")
    d = domain.dim
    snap = _SNAP * h

    K = int(math.ceil(R / h)) + 1
    axes = [np.arange(-K, K + 1)] * d
    if domain.kind is DomainKind.HALF_LINE:
        axes = [np.arange(int(math.floor(domain.radius / h)) - 1, K + 1)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    pts = idx * h
    sd = domain.signed_distance(pts)
    r = np.linalg.norm(pts, axis=1)
    interior = (sd > snap) & (r < R - 0.5 * h)
    if not interior.any():
        raise EmptyTruncationError(f"no lattice point of spacing {h} inside Omega_{n}")
    on_boundary = np.abs(sd) <= snap

    lattice_kind = {}
    for key in map(tuple, idx[interior].tolist()):
        lattice_kind[key] = INTERIOR

    int_idx = idx[interior]
    int_pts = pts[interior]
    m_int = len(int_idx)
    arm_target = np.empty((m_int, 2 * d), dtype=object)
    arm_len = np.empty((m_int, 2 * d))
    offlattice = {}  # key -> point
    bnd_lookup = set(map(tuple, idx[on_boundary].tolist()))

    for k in range(d):
        for s_i, s in enumerate((-1, 1)):
            col = 2 * k + s_i
            e = np.zeros(d)
            e[k] = s
            t = domain.crossing_distance(int_pts, e, h * (1 - _SNAP))
            q_idx = int_idx.copy()
            q_idx[:, k] += s
            q_pts = q_idx * h
            q_r = np.linalg.norm(q_pts, axis=1)
            for i in range(m_int):
                if np.isfinite(t[i]):
                    key = ("P", k, s, *int_idx[i].tolist())
                    offlattice[key] = domain.project_to_boundary(int_pts[i] + t[i] * e)[0]
                    arm_target[i, col] = key
                    arm_len[i, col] = t[i]
                    continue
                qk = tuple(q_idx[i].tolist())
                arm_len[i, col] = h
                arm_target[i, col] = qk
                if qk in lattice_kind:
                    continue
                if qk in bnd_lookup:
                    lattice_kind[qk] = PHYSICAL
                elif q_r[i] >= R - 0.5 * h:
                    lattice_kind[qk] = ARTIFICIAL
                else:  # pragma: no cover - geometry guarantees one of the above
                    raise EmptyTruncationError(f"lattice neighbour {qk} is neither interior nor boundary")

    lattice_keys = sorted(lattice_kind)
    keys = lattice_keys + sorted(offlattice)
    points = np.empty((len(keys), d))
    kind = np.empty(len(keys), dtype=np.int8)
    for i, key in enumerate(lattice_keys):
        p = np.asarray(key, dtype=float) * h
        if lattice_kind[key] == PHYSICAL:
            p = domain.project_to_boundary(p)[0]
        points[i] = p
        kind[i] = lattice_kind[key]
    for j, key in enumerate(sorted(offlattice), start=len(lattice_keys)):
        points[j] = offlattice[key]
        kind[j] = PHYSICAL

    index = {k: i for i, k in enumerate(keys)}
    neighbors = np.full((len(keys), 2 * d), -1, dtype=np.int64)
    arms = np.full((len(keys), 2 * d), np.nan)
    rows = np.array([index[tuple(k)] for k in int_idx.tolist()], dtype=np.int64)
    for col in range(2 * d):
        neighbors[rows, col] = [index[t] for t in arm_target[:, col]]
        arms[rows, col] = arm_len[:, col]

    return Grid(
        domain=domain,
        n=n,
        h=float(h),
        points=points,
        kind=kind,
        keys=tuple(keys),
        neighbors=neighbors,
        arms=arms,
        window_radius=float(R if window_radius is None else window_radius),
    )
