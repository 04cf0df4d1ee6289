"""Discrete operators with nonlocal boundary rows and their resolvents.

The assembled system has one row per node:

* interior rows carry the finite-difference stencil of the operator
  (central second differences, upwinded drift, shortened arms at the curved
  boundary), so off-diagonal entries are nonnegative;
* physical boundary rows encode ``u(z) - sum_x w(z, x) u(x) = 0``;
* artificial boundary rows encode ``u = 0``.

With this sign pattern ``lambda - A_h`` is a nonsingular M-matrix for every
``lambda > 0``, which is what makes the discrete resolvent positive and
sup-norm contractive.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import ARTIFICIAL, INTERIOR, PHYSICAL, DomainSpec, Grid, build_exhaustion
from .errors import ExhaustionError, NumericalError, PropertyViolation, StencilError
from .measures import BoundaryMeasureSpec, TruncatedMeasure, concentration_check, truncate_measure
from .operators import CoefficientField

logger = logging.getLogger(__name__)

SOLVER_TOL = 1e-9


@dataclass(eq=False)
class GridFunction:
    """Node-indexed values on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError(f"expected {self.grid.size} values, got shape {self.values.shape}")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @classmethod
    def from_callable(cls, grid: Grid, f) -> GridFunction:
        if callable(f):
            return cls(grid, np.broadcast_to(np.asarray(f(grid.points), dtype=float), (grid.size,)).copy())
        return cls(grid, np.full(grid.size, float(f)))

    def window(self, radius: float | None = None) -> np.ndarray:
        return self.values[self.grid.window_mask(radius)]

    def sup(self, radius: float | None = None) -> float:
        return float(np.max(np.abs(self.window(radius))))

    def to_csv(self, path, header_comment: str | None = None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            coords = ["x", "y"][: self.grid.dim]
            w.writerow(["node", *coords, "value"])
            for i, (p, v) in enumerate(zip(self.grid.points, self.values)):
                w.writerow([i, *(repr(float(c)) for c in p), repr(float(v))])


def _values(f, grid: Grid | None = None) -> np.ndarray:
    if isinstance(f, GridFunction):
        return f.values
    if grid is not None and (callable(f) or np.isscalar(f)):
        return GridFunction.from_callable(grid, f).values
    return np.asarray(f, dtype=float)


def cell_average(grid: Grid, f, sub: int = 8) -> GridFunction:
    """Average of a pointwise ``f`` over each node's dual cell (midpoint sub-samples)."""
    offs = ((np.arange(sub) + 0.5) / sub - 0.5) * grid.h
    cell = np.stack(np.meshgrid(*([offs] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
    pts = (grid.points[:, None, :] + cell[None]).reshape(-1, grid.dim)
    vals = np.asarray(f(pts), dtype=float).reshape(grid.size, -1)
    return GridFunction(grid, vals.mean(axis=1))


def indicator(grid: Grid, lo, hi, sub: int = 8) -> GridFunction:
    """Cell-averaged indicator of the box ``[lo, hi]`` (fraction of each dual cell inside)."""
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    return cell_average(grid, lambda p: np.all((p >= lo) & (p <= hi), axis=1).astype(float), sub)


@dataclass(eq=False)
class DiscreteOperator:
    """Assembled ``A_h`` (interior stencil rows) plus boundary constraint rows.

    ``lambda`` is applied at solve time: ``system(lam)`` returns
    ``lam * I_int - A + C`` where ``C`` holds the boundary rows.
    """

    grid: Grid
    A: sp.csr_matrix
    W: sp.csr_matrix  # truncated measure weights, rows at physical nodes
    coeff: CoefficientField | None = None
    measure: TruncatedMeasure | None = None
    _factors: dict = field(default_factory=dict, repr=False)

    @property
    def interior(self) -> np.ndarray:
        return self.grid.interior

    @property
    def size(self) -> int:
        return self.grid.size

    def constraints(self) -> sp.csr_matrix:
        not_int = (~self.interior).astype(float)
        return (sp.diags(not_int) - self.W).tocsr()

    def system(self, lam: float) -> sp.csc_matrix:
        return (sp.diags(lam * self.interior.astype(float)) - self.A + self.constraints()).tocsc()

    def factor(self, lam: float):
        """Cached sparse LU of ``system(lam)``."""
        lam = float(lam)
        if lam not in self._factors:
            try:
                # diagonal pivots under a symmetric ordering keep the M-matrix sign
                # pattern in L and U, so nonnegative data solve to nonnegative values
                self._factors[lam] = spla.splu(
                    self.system(lam),
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:
                raise NumericalError(f"singular system at lambda={lam}: {exc}", condition=math.inf) from exc
        return self._factors[lam]

    def apply(self, u) -> np.ndarray:
        """``A_h u`` at interior rows, zero elsewhere."""
        return self.A @ _values(u)

    def boundary_residual(self, u) -> np.ndarray:
        """``u(z) - <u, w(z)>`` at physical rows, ``u`` at artificial rows, zero at interior rows."""
        return self.constraints() @ _values(u)

    def rhs(self, f) -> np.ndarray:
        return np.where(self.interior, _values(f, self.grid), 0.0)


def assemble(grid: Grid, coeff: CoefficientField, tm: TruncatedMeasure) -> DiscreteOperator:
    """Finite-difference operator with nonlocal boundary rows.

    Second derivatives use the three-point formula on (possibly unequal) arms,
    first derivatives are upwinded by the sign of the drift, and mixed second
    derivatives use the four-point cross stencil (lattice nodes only).

    Raises
    ------
    StencilError
        If a mixed-derivative stencil would leave the node set.
    """
    if tm.grid is not grid:
        raise ValueError("truncated measure was built on a different grid")
    m, d = grid.size, grid.dim
    I = np.flatnonzero(grid.interior)
    x = grid.points[I]
    a, b = coeff(x)
    rows, cols, vals = [], [], []
    diag = np.zeros(len(I))
    for k in range(d):
        L, R = grid.neighbors[I, 2 * k], grid.neighbors[I, 2 * k + 1]
        hl, hr = grid.arms[I, 2 * k], grid.arms[I, 2 * k + 1]
        if np.any(L < 0) or np.any(R < 0):
            raise StencilError("interior node without a full stencil")
        cl = 2 * a[:, k, k] / (hl * (hl + hr))
        cr = 2 * a[:, k, k] / (hr * (hl + hr))
        bk = b[:, k]
        cr = cr + np.where(bk > 0, bk / hr, 0.0)
        cl = cl + np.where(bk < 0, -bk / hl, 0.0)
        diag -= cl + cr
        rows += [I, I]
        cols += [L, R]
        vals += [cl, cr]
    for k in range(d):
        for l in range(k + 1, d):
            akl = a[:, k, l]
            nz = np.flatnonzero(akl != 0)
            if len(nz) == 0:
                continue
            for s1 in (-1, 1):
                for s2 in (-1, 1):
                    js = []
                    for i in nz:
                        p = grid.points[I[i]].copy()
                        p[k] += s1 * grid.h
                        p[l] += s2 * grid.h
                        j = grid.index_of(tuple(int(v) for v in grid.lattice_index(p)))
                        if j is None or not np.isclose(grid.arms[I[i]], grid.h).all():
                            raise StencilError(f"mixed-derivative stencil leaves the node set at node {I[i]}")
                        js.append(j)
                    rows.append(I[nz])
                    cols.append(np.asarray(js))
                    vals.append(s1 * s2 * 2 * akl[nz] / (4 * grid.h**2))
    rows.append(I)
    cols.append(I)
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    return DiscreteOperator(grid, A, tm.full_matrix(), coeff, tm)


def build_operator(
    domain: DomainSpec,
    coeff: CoefficientField,
    spec: BoundaryMeasureSpec,
    n: int,
    h: float,
    window_radius: float | None = None,
) -> DiscreteOperator:
    """Grid, truncated measure and assembled operator for truncation ``n``."""
    grid = build_exhaustion(domain, n, h, window_radius)
    return assemble(grid, coeff, truncate_measure(spec, n, grid))


def solve_resolvent(op: DiscreteOperator, lam: float, f, check: bool = True) -> GridFunction:
    """``u = R(lam, A_h) f``: ``lam u - A_h u = f`` inside, boundary rows at the boundary.

    With ``check`` the contraction ``||lam u|| <= ||f||`` and, for ``f >= 0``,
    positivity are asserted to relative tolerance ``SOLVER_TOL``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    rhs = op.rhs(f)
    u = op.factor(lam).solve(rhs)
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite resolvent", condition=condition_estimate(op, lam))
    if check:
        fn = float(np.max(np.abs(rhs))) if rhs.size else 0.0
        if lam * np.max(np.abs(u)) > fn * (1 + SOLVER_TOL) + 1e-300:
            raise PropertyViolation(f"resolvent not contractive: {lam * np.max(np.abs(u))} > {fn}")
        if np.all(rhs >= 0) and u.min() < -SOLVER_TOL * max(fn / lam, 1e-300):
            raise PropertyViolation(f"resolvent not positive: min {u.min()}")
    return GridFunction(op.grid, u)


def condition_estimate(op: DiscreteOperator, lam: float) -> float:
    """1-norm condition estimate of ``system(lam)``."""
    M = op.system(lam)
    try:
        lu = op.factor(lam)
    except NumericalError:
        return math.inf
    inv = spla.LinearOperator(
        M.shape, matvec=lambda v: lu.solve(np.asarray(v, float)), rmatvec=lambda v: lu.solve(np.asarray(v, float), trans="T")
    )
    return float(spla.onenormest(M) * spla.onenormest(inv))


def dense_resolvent(op: DiscreteOperator, lam: float) -> np.ndarray:
    """Matrix of ``R(lam)`` via an explicit dense inverse (small grids only)."""
    M = op.system(lam).toarray()
    return np.linalg.inv(M) @ np.diag(op.interior.astype(float))


def resolvent_identity_residual(op: DiscreteOperator, lam1: float, lam2: float, f) -> float:
    """``||[R(l1) - R(l2) - (l2 - l1) R(l1) R(l2)] f||_inf``."""
    f = _values(f, op.grid)
    r1 = solve_resolvent(op, lam1, f, check=False).values
    r2 = solve_resolvent(op, lam2, f, check=False).values
    r12 = solve_resolvent(op, lam1, r2, check=False).values
    return float(np.max(np.abs(r1 - r2 - (lam2 - lam1) * r12)))


def maximum_principle_check(op: DiscreteOperator, lam: float, u, tol: float = 1e-10) -> str:
    """Discrete maximum principle: returns ``"pass"``, ``"fail"`` or ``"skip"``.

    Preconditions (else ``"skip"``): ``(lam - A_h) u <= 0`` inside,
    ``u(z) <= <u, w(z)>`` at physical nodes, ``u <= 0`` at artificial nodes.
    """
    u = _values(u)
    scale = tol * max(1.0, float(np.max(np.abs(u))))
    inner = lam * u - op.apply(u)
    if np.any(inner[op.interior] > scale):
        return "skip"
    if np.any(op.boundary_residual(u)[~op.interior] > scale):
        return "skip"
    return "pass" if np.all(u <= scale) else "fail"


def harmonic_bump(op: DiscreteOperator, lam: float, level: float = 1.0) -> GridFunction:
    """Nonnegative ``w`` with ``(lam - A_h) w = 0`` inside and the physical boundary rows,
    but ``w = level`` on the artificial boundary instead of zero.

    Adding it to a solution gives another nonnegative solution of the
    "maximal domain" problem in which the artificial condition is dropped.
    """
    rhs = np.where(op.grid.artificial, level, 0.0)
    return GridFunction(op.grid, op.factor(lam).solve(rhs))


def reduced_generator(op: DiscreteOperator) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Eliminate boundary nodes: the sub-Markov rate matrix on interior nodes.

    Returns ``(Q, interior_indices, leak)`` where ``Q`` has nonnegative
    off-diagonal entries and row sums ``-leak <= 0``.
    """
    I = np.flatnonzero(op.interior)
    B = np.flatnonzero(op.grid.physical)
    W = op.W.tocsr()
    A = op.A.tocsr()
    W_BI = W[B][:, I]
    W_BB = W[B][:, B]
    X = spla.spsolve((sp.identity(len(B)) - W_BB).tocsc(), W_BI.tocsc()) if len(B) else sp.csr_matrix((0, len(I)))
    X = sp.csr_matrix(X)
    Q = (A[I][:, I] + A[I][:, B] @ X).tocsr()
    leak = -np.asarray(Q.sum(axis=1)).ravel()
    return Q, I, leak


# --------------------------------------------------------------------------- exhaustion


def default_n0(domain: DomainSpec, spec: BoundaryMeasureSpec) -> int:
    """Smallest ``n >= 1`` whose cutoff keeps every atom (or the bulk of a density) at full weight."""
    n = max(1, int(math.floor(domain.radius)))
    while n + 1 <= domain.radius:
        n += 1
    R = spec.support_radius(domain)
    if math.isfinite(R):
        return max(n, int(math.ceil(R - 1e-12)))
    half = concentration_check(spec, domain, n, 0.5).smallest_n_half
    return max(n, half or n)


@dataclass
class ExhaustionResult:
    values: np.ndarray  # limit approximation on the window nodes
    points: np.ndarray
    keys: list
    increments: list  # sup-norm increments on the window, one per n after n0
    min_increments: list  # most negative increment per n (monotonicity diagnostic)
    ns: list
    converged: bool
    operator: DiscreteOperator  # largest truncation
    solution: GridFunction  # full solution on the largest truncation

    @property
    def n_final(self) -> int:
        return self.ns[-1]


def exhaust_resolvent(
    domain: DomainSpec,
    coeff: CoefficientField,
    spec: BoundaryMeasureSpec,
    lam: float,
    f,
    h: float,
    window_radius: float | None = None,
    tol: float = 1e-8,
    n0: int | None = None,
    max_n: int = 64,
    min_steps: int = 1,
    mono_tol: float = 1e-12,
) -> ExhaustionResult:
    """Monotone limit ``R(lam, A_mu) f`` over the truncations ``n = n0, n0 + 1, ...``.

    ``f`` is a callable on points (or a constant).  For ``f >= 0`` each window
    increment must be ``>= -mono_tol``; otherwise ``f`` is split into positive
    and negative parts and each part is exhausted separately.

    Raises
    ------
    ExhaustionError
        When the sup-increment on the window stays above ``tol`` up to ``max_n``;
        the increment history is attached as ``diagnostics["increments"]``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    n0 = default_n0(domain, spec) if n0 is None else n0
    window_radius = n0 + 1.0 if window_radius is None else window_radius
    fcall = f if callable(f) else (lambda x, c=float(f): np.full(len(x), c))

    probe = build_exhaustion(domain, n0, h, window_radius)
    if np.any(fcall(probe.points) < 0):
        pos = exhaust_resolvent(domain, coeff, spec, lam, lambda x: np.maximum(fcall(x), 0), h,
                                window_radius, tol, n0, max_n, min_steps, mono_tol)
        neg = exhaust_resolvent(domain, coeff, spec, lam, lambda x: np.maximum(-fcall(x), 0), h,
                                window_radius, tol, n0, max_n, min_steps, mono_tol)
        sol = GridFunction(pos.operator.grid, pos.solution.values - neg.solution.values) \
            if pos.operator.grid is neg.operator.grid else pos.solution
        return ExhaustionResult(
            pos.values - neg.values, pos.points, pos.keys,
            [p + q for p, q in zip(pos.increments, neg.increments)],
            [min(p, q) for p, q in zip(pos.min_increments, neg.min_increments)],
            pos.ns, pos.converged and neg.converged, pos.operator, sol,
        )

    keys = [probe.keys[i] for i in np.flatnonzero(probe.window_mask())]
    points = probe.points[probe.window_mask()]
    prev = None
    increments, mins, ns = [], [], []
    for n in range(n0, max_n + 1):
        op = build_operator(domain, coeff, spec, n, h, window_radius)
        u = solve_resolvent(op, lam, GridFunction.from_callable(op.grid, fcall))
        idx = np.array([op.grid.index_of(k) for k in keys])
        cur = u.values[idx]
        ns.append(n)
        if prev is not None:
            diff = cur - prev
            increments.append(float(np.max(np.abs(diff))))
            mins.append(float(diff.min()))
            if diff.min() < -mono_tol:
                raise PropertyViolation(f"exhaustion not monotone at n={n}: increment {diff.min():.3e}")
            logger.debug("exhaustion n=%d sup-increment %.3e", n, increments[-1])
            if increments[-1] < tol and len(increments) >= min_steps:
                return ExhaustionResult(cur, points, keys, increments, mins, ns, True, op, u)
        elif np.all(cur == 0) and np.all(fcall(op.grid.points) == 0):
            return ExhaustionResult(cur, points, keys, increments, mins, ns, True, op, u)
        prev = cur
    raise ExhaustionError(
        f"exhaustion did not reach tol={tol} by n={max_n}", increments=increments, ns=ns
    )


def minimality_probe(result: ExhaustionResult, lam: float, f, candidate, tol: float = 1e-9) -> tuple[bool, float]:
    """Is the exhaustion limit below a competing solution on the window?

    ``candidate`` must solve the interior equation and the physical boundary
    rows on the largest truncation (the artificial rows are free).  Returns
    ``(passed, min(candidate - limit))``.
    """
    op = result.operator
    c = _values(candidate)
    fv = _values(f, op.grid)
    scale = max(1.0, float(np.max(np.abs(c))))
    res = (lam * c - op.apply(c) - fv)[op.interior]
    bres = op.boundary_residual(c)[op.grid.physical]
    if np.max(np.abs(res), initial=0) > 1e-8 * scale or np.max(np.abs(bres), initial=0) > 1e-8 * scale:
        raise ValueError("candidate does not solve the discrete equation")
    idx = np.array([op.grid.index_of(k) for k in result.keys])
    gap = c[idx] - result.values
    return bool(gap.min() >= -tol), float(gap.min())
