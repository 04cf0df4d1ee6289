"""Monte Carlo simulation of the diffusion with instantaneous return.

Particles follow Euler-Maruyama steps ``X += b dt + sqrt(2 a) sqrt(dt) xi``
inside the domain.  When a step leaves the domain the exit point ``z`` is
located on the step chord and the particle is moved to a sample of
``mu(z)``.  Near the boundary the step is split into ten substeps, and a
Brownian-bridge test catches crossings that happen between two interior
positions.

Randomness comes from counter-based Philox streams keyed by
``(seed, block)`` where particles are processed in fixed-size blocks, so
results do not depend on how many worker threads run the blocks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import chisquare

from .domain import DomainSpec, Grid
from .errors import NumericalError
from .measures import AtomicMeasure, BoundaryMeasureSpec
from .operators import CoefficientField

BLOCK = 4096
SUBSTEPS = 10


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _sqrt2a(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Symmetric square root of ``2 a`` per point; aborts on a negative eigenvalue."""
    if a.shape[1] == 1:
        v = 2 * a[:, 0, 0]
        if np.any(v < -1e-12 * np.maximum(1.0, np.abs(v))):
            i = int(np.argmin(v))
            raise NumericalError("diffusion matrix not positive semidefinite", location=x[i].tolist())
        return np.sqrt(np.maximum(v, 0.0))[:, None, None]
    w, Q = np.linalg.eigh(2 * a)
    if np.any(w < -1e-12 * np.maximum(1.0, np.abs(w).max(axis=1, keepdims=True))):
        i = int(np.argmin(w.min(axis=1)))
        raise NumericalError("diffusion matrix not positive semidefinite", location=x[i].tolist())
    return np.einsum("mij,mj,mkj->mik", Q, np.sqrt(np.maximum(w, 0.0)), Q)


@dataclass
class _Block:
    """Mutable per-block state; merged into a :class:`ParticleEnsemble`."""

    X: np.ndarray
    rng: np.random.Generator
    hits: np.ndarray
    first_hit: np.ndarray
    max_radius: np.ndarray
    jumps_z: list = field(default_factory=list)
    jumps_x: list = field(default_factory=list)


class _Stepper:
    def __init__(self, coeff, spec, domain, dt, substep, bridge, record_jumps):
        self.coeff, self.spec, self.domain = coeff, spec, domain
        self.dt, self.substep, self.bridge, self.record = dt, substep, bridge, record_jumps

    def _move(self, st: _Block, idx: np.ndarray, dt: float, t: float):
        X = st.X[idx]
        a, b = self.coeff(X)
        S = _sqrt2a(a, X)
        xi = st.rng.standard_normal(X.shape)
        Y = X + b * dt + math.sqrt(dt) * np.einsum("mij,mj->mi", S, xi)
        dY = self.domain.signed_distance(Y)
        exited = dY <= 0
        frac = np.ones(len(X))
        if np.any(exited):
            e = Y[exited] - X[exited]
            L = np.linalg.norm(e, axis=1)
            cross = self.domain.crossing_distance(X[exited], e / L[:, None], L)
            frac[exited] = np.where(np.isfinite(cross), cross / L, 1.0)
        if self.bridge:
            inside = ~exited
            dX = self.domain.signed_distance(X)
            nrm = self._normal(X)
            var = np.einsum("mi,mij,mj->m", nrm, 2 * a, nrm) * dt
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                p = np.where(var > 0, np.exp(-2 * np.maximum(dX, 0) * np.maximum(dY, 0) / var), 0.0)
            u = st.rng.random(len(X))
            bridged = inside & (u < p)
            if np.any(bridged):
                exited = exited | bridged
                frac[bridged] = 0.5
        if np.any(exited):
            chord = X[exited] + frac[exited, None] * (Y[exited] - X[exited])
            z = self.domain.project_to_boundary(chord)
            land = self.spec.sample(z, st.rng)
            Y[exited] = land
            gi = idx[exited]
            st.first_hit[gi] = np.where(np.isnan(st.first_hit[gi]), t + frac[exited] * dt, st.first_hit[gi])
            st.hits[gi] += 1
            if self.record:
                st.jumps_z.append(z)
                st.jumps_x.append(land)
        st.X[idx] = Y

    def step(self, st: _Block, t: float):
        if not self.substep:
            self._move(st, np.arange(len(st.X)), self.dt, t)
        else:
            a, _ = self.coeff(st.X)
            # a negative trace is left to _move, which aborts with the location
            zone = 3 * np.sqrt(np.maximum(2 * np.einsum("mjj->m", a), 0.0)) * math.sqrt(self.dt)
            near = self.domain.signed_distance(st.X) < zone
            far = np.flatnonzero(~near)
            if len(far):
                self._move(st, far, self.dt, t)
            close = np.flatnonzero(near)
            h = self.dt / SUBSTEPS
            for k in range(SUBSTEPS):
                if len(close):
                    self._move(st, close, h, t + k * h)
        np.maximum(st.max_radius, np.linalg.norm(st.X, axis=1), out=st.max_radius)

    def _normal(self, X):
        if self.domain.dim == 1 and self.domain.kind.value == "half-line-exterior":
            return np.ones_like(X)
        r = np.linalg.norm(X, axis=1, keepdims=True)
        return X / np.where(r > 0, r, 1.0)


@dataclass
class ParticleEnsemble:
    """Final particle state with the statistics gathered on the way."""

    positions: np.ndarray
    time: float
    seed: int
    dt: float
    hits: np.ndarray  # boundary hits per particle
    first_hit: np.ndarray  # time of first boundary hit (nan if none)
    max_radius: np.ndarray
    snapshots: dict  # time -> positions
    jumps_z: np.ndarray | None = None  # exit points of recorded jumps
    jumps_x: np.ndarray | None = None  # landing points
    occupation: np.ndarray | None = None  # per-node visit counts (estimate_invariant)

    @property
    def size(self) -> int:
        return len(self.positions)

    def escapes(self, radius: float) -> int:
        return int(np.sum(self.max_radius > radius))


def _steps(t, dt):
    k = round(t / dt)
    if abs(k * dt - t) > 1e-9 * max(dt, t):
        raise ValueError(f"time {t} is not a multiple of dt={dt}")
    return int(k)


def simulate_paths(
    coeff: CoefficientField,
    spec: BoundaryMeasureSpec,
    domain: DomainSpec,
    x0,
    t: float,
    dt: float,
    N: int,
    seed: int,
    snapshot_times=(),
    record_jumps: bool = False,
    substep: bool = True,
    bridge: bool = True,
    jobs: int = 1,
    occupation: tuple | None = None,
    start: np.ndarray | None = None,
) -> ParticleEnsemble:
    """Simulate ``N`` independent particles from ``x0`` up to time ``t``.

    ``start`` optionally gives one initial position per particle instead.

    ``occupation=(grid, burn_in)`` accumulates per-interior-node visit counts
    after ``burn_in`` (nearest interior node within ``h``; farther particles
    are not counted).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if N < 1:
        raise ValueError("N must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (domain.dim,) or not domain.contains(x0)[0]:
        raise ValueError(f"x0={x0.tolist()} is not a point of the domain")
    if start is None:
        start = np.tile(x0, (N, 1))
    elif start.shape != (N, domain.dim):
        raise ValueError("start must hold one position per particle")
    K = _steps(t, dt)
    snap_steps = {_steps(s, dt): s for s in snapshot_times}
    stepper = _Stepper(coeff, spec, domain, dt, substep, bridge, record_jumps)
    tree = burn = None
    if occupation is not None:
        grid, burn_in = occupation
        inner = np.flatnonzero(grid.interior)
        tree, burn = cKDTree(grid.points[inner]), _steps(burn_in, dt)

    def run(block: int):
        X = start[block * BLOCK : (block + 1) * BLOCK].copy()
        n = len(X)
        st = _Block(X, block_rng(seed, block), np.zeros(n, dtype=np.int64), np.full(n, np.nan), np.linalg.norm(X, axis=1))
        snaps, occ = {}, None
        if tree is not None:
            occ = np.zeros(tree.n + 1, dtype=np.int64)
        if 0 in snap_steps:
            snaps[snap_steps[0]] = st.X.copy()
        for k in range(1, K + 1):
            stepper.step(st, (k - 1) * dt)
            if k in snap_steps:
                snaps[snap_steps[k]] = st.X.copy()
            if occ is not None and k > burn:
                _, j = tree.query(st.X, distance_upper_bound=grid.h * (1 + 1e-9))
                occ += np.bincount(j, minlength=tree.n + 1)
        return st, snaps, occ

    blocks = range((N + BLOCK - 1) // BLOCK)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    cat = lambda xs: np.concatenate(xs) if xs else None
    snaps = {s: np.concatenate([r[1][s] for r in results]) for s in snap_steps.values()}
    jz = cat([z for r in results for z in r[0].jumps_z])
    jx = cat([x for r in results for x in r[0].jumps_x])
    occ = None
    if tree is not None:
        counts = sum(r[2] for r in results)
        occ = np.zeros(grid.size)
        occ[inner] = counts[:-1]
        occ = np.append(occ, counts[-1])  # last entry: samples outside the grid
    return ParticleEnsemble(
        np.concatenate([r[0].X for r in results]),
        K * dt,
        int(seed),
        dt,
        np.concatenate([r[0].hits for r in results]),
        np.concatenate([r[0].first_hit for r in results]),
        np.concatenate([r[0].max_radius for r in results]),
        snaps,
        jz,
        jx,
        occ,
    )


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float

    def agrees(self, value: float, k: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.mean - value) <= k * self.se + floor


def estimate_expectation(ens: ParticleEnsemble, f, time: float | None = None) -> Estimate:
    """Sample mean of ``f(X_t)`` and its standard error ``std / sqrt(N)``."""
    X = ens.positions if time is None else ens.snapshots[time]
    if len(X) < 2:
        raise ValueError("need at least two particles")
    v = np.asarray(f(X), dtype=float)
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))))


@dataclass
class OccupationResult:
    grid: Grid
    masses: np.ndarray  # normalized occupation over counted samples, per node
    outside_fraction: float  # samples farther than h from every interior node
    segment_window_mass: list  # window occupation fraction per time segment
    segment_tv: list  # TV between successive segment histograms
    escapes: int
    max_radius: float

    @property
    def stabilizes(self) -> bool:
        if len(self.segment_window_mass) < 2:
            return False
        a, b = self.segment_window_mass[-2:]
        return bool(self.segment_tv[-1] < 0.05 and self.outside_fraction < 1e-3 and abs(b - a) <= 0.02 * a)


def estimate_invariant(
    coeff: CoefficientField,
    spec: BoundaryMeasureSpec,
    domain: DomainSpec,
    grid: Grid,
    x0,
    burn_in: float,
    horizon: float,
    dt: float,
    N: int,
    seed: int,
    segments: int = 4,
    escape_radius: float | None = None,
    window_radius: float | None = None,
    jobs: int = 1,
) -> OccupationResult:
    """Time-averaged occupation of ``N`` particles over ``[burn_in, burn_in + horizon]``.

    The horizon is split into ``segments`` equal pieces; per-segment window
    masses and successive TV distances show whether the occupation settles.
    """
    seg = horizon / segments
    hists, wm = [], []
    ens = simulate_paths(coeff, spec, domain, x0, burn_in + seg, dt, N, seed, occupation=(grid, burn_in), jobs=jobs)
    hists.append(ens.occupation)
    reach = ens.max_radius
    for s in range(1, segments):
        # continue from the current ensemble with fresh streams
        ens = simulate_paths(coeff, spec, domain, x0, seg, dt, N, seed + 7919 * s,
                             occupation=(grid, 0.0), jobs=jobs, start=ens.positions)
        hists.append(ens.occupation)
        reach = np.maximum(reach, ens.max_radius)
    window = grid.window_mask(window_radius)
    for hcount in hists:
        total = hcount.sum()
        wm.append(float(hcount[:-1][window].sum() / total))
    norm = [h[:-1] / max(h[:-1].sum(), 1) for h in hists]
    tvs = [0.5 * float(np.abs(b - a).sum()) for a, b in zip(norm, norm[1:])]
    total = sum(hists)
    masses = total[:-1] / max(total[:-1].sum(), 1)
    R = grid.n + 1.0 if escape_radius is None else escape_radius
    return OccupationResult(
        grid, masses, float(total[-1] / total.sum()), wm, tvs, int(np.sum(reach > R)), float(reach.max())
    )


@dataclass(frozen=True)
class ReturnTest:
    statistic: float
    pvalue: float
    samples: int
    passed: bool


def return_distribution_test(spec: BoundaryMeasureSpec, z: np.ndarray, x: np.ndarray, bins: int = 10, level: float = 0.01) -> ReturnTest:
    """Chi-square test that landing points ``x`` given exit points ``z`` follow ``mu(z)``.

    Atomic specs are binned by atom; densities by their probability integral
    transform (uniform on ``[0, 1]`` under the null).
    """
    if len(z) == 0:
        raise ValueError("no recorded jumps")
    if isinstance(spec, AtomicMeasure):
        k = spec.atom_index(z, x)
        loc = spec.locations(z)[np.arange(len(z)), k]
        if np.max(np.abs(loc - x)) > 1e-9:
            return ReturnTest(math.inf, 0.0, len(z), False)
        w = spec._weights
        obs = np.bincount(k, minlength=len(w)).astype(float)
        keep = w > 0
        if keep.sum() < 2:
            return ReturnTest(0.0, 1.0, len(z), True)
        stat, p = chisquare(obs[keep], w[keep] / w[keep].sum() * obs.sum())
    else:
        u = np.asarray(spec.pit(z, x), dtype=float)
        u = u.reshape(len(z), -1)
        obs = np.zeros(bins ** u.shape[1])
        cell = np.zeros(len(z), dtype=np.int64)
        for c in range(u.shape[1]):
            cell = cell * bins + np.minimum((u[:, c] * bins).astype(np.int64), bins - 1)
        obs += np.bincount(cell, minlength=len(obs))
        stat, p = chisquare(obs)
    return ReturnTest(float(stat), float(p), len(z), bool(p > level))
