"""Exact quenched computations on finite regions.

Everything here reduces to substochastic linear systems x = b + A x, where
A is built from the environment weights restricted to the region interior
(mass stepping outside is killed).  Killing makes the spectral radius of A
strictly less than one, so the fixed point exists and the Neumann iterates
x_k = sum_{j<k} A^j b increase monotonically to it when b >= 0.

Three solve strategies share one exact certificate: after any solve the
residual r = b + A x - x is recomputed with a fresh matrix-vector product
and its l1/sup norms are reported.

* "dense"   - LU on the assembled (I - A); reference path for small systems.
* "neumann" - the plain fixed-point iteration, with optional periodic
              geometric (Lyusternik) extrapolation of the dominant mode;
              every extrapolation is validated against the exact residual
              and reverted if it does not help.
* "krylov"  - BiCGSTAB on (I - A), polished by Neumann steps until the
              exact residual meets the tolerance.

The default ("auto") uses dense LU below a small size cutoff and Krylov
above it; tolerances are always certified, never assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .env_model import EnvironmentRealization, directions
from .lattice import ExitClass, Region, RegionError

DEFAULT_TOL = 1e-10
DENSE_CUTOFF = 600
MAX_ITER = 500_000


class SolverConvergenceError(RuntimeError):
    """Fixed-point iteration failed to converge (broken substochasticity?)."""


# ---------------------------------------------------------------------------
# System assembly
# ---------------------------------------------------------------------------


class RegionPattern:
    """Region-static sparsity structure shared by all environments."""

    def __init__(self, region: Region):
        if not region.enumerable:
            raise RegionError("exact solves need an enumerable (finite) region")
        self.region = region
        self.d = region.d
        self.dirs = directions(region.d)
        self.interior = region.interior_array()
        self.n = self.interior.shape[0]
        nbr = np.empty((self.n, 2 * self.d), dtype=np.int64)
        for e in range(2 * self.d):
            nbr[:, e] = region.index_block(self.interior + self.dirs[e])
        self.nbr = nbr
        flat_rows = np.repeat(np.arange(self.n, dtype=np.int64), 2 * self.d)
        flat_cols = nbr.ravel()
        self.inside_mask = flat_cols >= 0
        rows = flat_rows[self.inside_mask]
        cols = flat_cols[self.inside_mask]
        order = np.lexsort((cols, rows))
        self._order = order
        self._indices = cols[order].astype(np.int32)
        counts = np.bincount(rows, minlength=self.n)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        # transpose structure for row-vector (source) solves
        t_order = np.lexsort((rows, cols))
        self._t_perm = t_order
        self._t_indices = rows[t_order].astype(np.int32)
        t_counts = np.bincount(cols, minlength=self.n)
        self._t_indptr = np.concatenate([[0], np.cumsum(t_counts)]).astype(np.int32)

    def matrix(self, weights: np.ndarray) -> sp.csr_matrix:
        data = weights.ravel()[self.inside_mask][self._order]
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(self.n, self.n))

    def matrix_t(self, weights: np.ndarray) -> sp.csr_matrix:
        data = weights.ravel()[self.inside_mask][self._t_perm]
        return sp.csr_matrix((data, self._t_indices, self._t_indptr), shape=(self.n, self.n))


def region_pattern(region: Region) -> RegionPattern:
    pat = getattr(region, "_solver_pattern", None)
    if pat is None:
        pat = RegionPattern(region)
        region._solver_pattern = pat
    return pat


class QuenchedSystem:
    """Environment weights bound to a region's sparsity pattern."""

    def __init__(self, env: EnvironmentRealization, region: Region):
        if env.d != region.d:
            raise ValueError("environment and region dimensions differ")
        self.pattern = region_pattern(region)
        self.region = region
        self.env = env
        self.weights = env.weights_block(self.pattern.interior)
        self._P = None
        self._PT = None

    @property
    def n(self) -> int:
        return self.pattern.n

    @property
    def P(self) -> sp.csr_matrix:
        if self._P is None:
            self._P = self.pattern.matrix(self.weights)
        return self._P

    @property
    def PT(self) -> sp.csr_matrix:
        if self._PT is None:
            self._PT = self.pattern.matrix_t(self.weights)
        return self._PT

    def drift_field(self) -> np.ndarray:
        """Local drift along e1 at every interior site."""
        return self.weights[:, 0] - self.weights[:, 1]

    def source_index(self, site) -> int:
        idx = int(self.region.index_block(np.asarray([site], dtype=np.int64))[0])
        if idx < 0:
            raise ValueError(f"site {tuple(site)} is not interior to the region")
        return idx


def build_system(env: EnvironmentRealization, region: Region) -> QuenchedSystem:
    return QuenchedSystem(env, region)


# ---------------------------------------------------------------------------
# Core solves for x = b + A x
# ---------------------------------------------------------------------------


@dataclass
class SolveInfo:
    l1_residual: float
    sup_residual: float
    iterations: int
    method: str


def _residual(A, b, x):
    return b + A @ x - x


def _norm(r, kind):
    if kind == "l1":
        return float(np.abs(r).sum())
    return float(np.abs(r).max(initial=0.0))


def _neumann_solve(A, b, tol, norm="l1", x0=None, extrapolate=True,
                   restart=48, max_iter=MAX_ITER):
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0.copy()
        r = _residual(A, b, x)
    it = 0
    while it < max_iter:
        if _norm(r, norm) <= tol:
            return x, r, it
        start_l1 = float(np.abs(r).sum())
        for _ in range(restart):
            x += r
            r = A @ r
            it += 1
            if _norm(r, norm) <= tol:
                return x, r, it
        if not extrapolate:
            continue
        end_l1 = float(np.abs(r).sum())
        if start_l1 <= 0 or end_l1 <= 0:
            continue
        rho = (end_l1 / start_l1) ** (1.0 / restart)
        if not (0.0 < rho < 0.99995):
            continue
        x_try = x + r / (1.0 - rho)
        r_try = _residual(A, b, x_try)
        it += 1
        if _norm(r_try, norm) < _norm(r, norm):
            x, r = x_try, r_try
    raise SolverConvergenceError(
        f"fixed-point solve did not reach tol={tol} within {max_iter} iterations "
        f"(residual {_norm(r, norm):.3e})"
    )


def _krylov_solve(A, b, tol, norm="l1", x0=None, max_iter=MAX_ITER):
    n = b.shape[0]
    S = sp.identity(n, format="csr") - A
    atol = tol / max(1.0, np.sqrt(n))
    x, info = spla.bicgstab(S, b, x0=x0, rtol=1e-14, atol=atol,
                            maxiter=max(200, int(4 * np.sqrt(n)) + 50))
    it = 0
    r = _residual(A, b, x)
    if _norm(r, norm) <= tol:
        return x, r, it
    # polish with the certified fixed-point iteration
    return _neumann_solve(A, b, tol, norm=norm, x0=x, max_iter=max_iter)


def solve_fixed_point(A, b, tol, norm="l1", method="auto", x0=None):
    """Solve x = b + A x to a certified residual tolerance.

    Returns (x, SolveInfo); the reported residual norms are recomputed
    exactly from the returned solution.
    """
    n = b.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_CUTOFF else "krylov"
    if method == "dense":
        M = np.eye(n) - (A.toarray() if sp.issparse(A) else np.asarray(A))
        x = np.linalg.solve(M, b)
        r = _residual(A, b, x)
        it = 0
    elif method == "neumann":
        x, r, it = _neumann_solve(A, b, tol, norm=norm, x0=x0)
    elif method == "krylov":
        x, r, it = _krylov_solve(A, b, tol, norm=norm, x0=x0)
    else:
        raise ValueError(f"unknown solve method {method!r}")
    info = SolveInfo(
        l1_residual=float(np.abs(r).sum()),
        sup_residual=float(np.abs(r).max(initial=0.0)),
        iterations=it,
        method=method,
    )
    if method in ("neumann", "krylov") and info.sup_residual > tol:
        raise SolverConvergenceError(
            f"residual {info.sup_residual:.3e} above tolerance {tol}")
    return x, info


# ---------------------------------------------------------------------------
# Green's function and derived quantities
# ---------------------------------------------------------------------------


@dataclass
class GreenTable:
    """Killed-walk Green's function row from one source site.

    values[i] is the expected number of visits to interior site sites[i]
    before exiting, starting from source.  achieved_tol is the certified
    sup-norm residual of the defining linear identity.
    """

    source: tuple
    sites: np.ndarray
    values: np.ndarray
    achieved_tol: float
    l1_residual: float
    iterations: int
    method: str

    def value_at(self, site) -> float:
        match = np.all(self.sites == np.asarray(site, dtype=np.int64), axis=1)
        idx = np.nonzero(match)[0]
        if idx.size == 0:
            raise KeyError(f"site {tuple(site)} not in table")
        return float(self.values[idx[0]])

    def total(self) -> float:
        return float(self.values.sum())

    def to_csv(self, path) -> None:
        from .reporting import write_csv
        d = self.sites.shape[1]
        header = [f"y{k + 1}" for k in range(d)] + ["green_value"]
        rows = [list(map(int, s)) + [float(v)] for s, v in zip(self.sites, self.values)]
        write_csv(path, header, rows)


def green_row(env: EnvironmentRealization, region: Region, x,
              tol: float = DEFAULT_TOL, method: str = "auto") -> GreenTable:
    """Green's function g(x, .) on the region interior for one environment.

    Solves the row identity g = delta_x + g P; the l1 norm of the residual
    is driven below tol, which also bounds the sup-norm defect.
    """
    system = build_system(env, region)
    src = system.source_index(x)
    b = np.zeros(system.n)
    b[src] = 1.0
    g, info = solve_fixed_point(system.PT, b, tol, norm="l1", method=method)
    return GreenTable(
        source=tuple(int(c) for c in x),
        sites=system.pattern.interior,
        values=g,
        achieved_tol=info.sup_residual,
        l1_residual=info.l1_residual,
        iterations=info.iterations,
        method=info.method,
    )


def neumann_green_iterates(env: EnvironmentRealization, region: Region, x,
                           n_iters: int) -> list[np.ndarray]:
    """The first n_iters plain fixed-point iterates of the Green row solve."""
    system = build_system(env, region)
    src = system.source_index(x)
    b = np.zeros(system.n)
    b[src] = 1.0
    out = []
    g = np.zeros_like(b)
    r = b.copy()
    for _ in range(n_iters):
        g = g + r
        r = system.PT @ r
        out.append(g.copy())
    return out


def _as_field(f, system: QuenchedSystem) -> np.ndarray:
    if callable(f):
        vals = np.asarray(f(system.pattern.interior), dtype=np.float64)
    else:
        vals = np.asarray(f, dtype=np.float64)
    if vals.shape != (system.n,):
        raise ValueError(f"field must have shape ({system.n},), got {vals.shape}")
    return vals


def green_operator_field(env: EnvironmentRealization, region: Region, f,
                         tol: float = DEFAULT_TOL, method: str = "auto") -> np.ndarray:
    """G[f] at every interior site: expected path sum of f before exit.

    f may be a callable mapping an (N, d) site array to values, or an
    array aligned with the interior enumeration.
    """
    system = build_system(env, region)
    vals = _as_field(f, system)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    u, _ = solve_fixed_point(system.P, vals, tol * scale, norm="linf", method=method)
    return u


def green_operator(env: EnvironmentRealization, region: Region, f, x,
                   tol: float = DEFAULT_TOL, method: str = "auto") -> float:
    """Green operator value sum_y g(x,y) f(y)."""
    system = build_system(env, region)
    field = green_operator_field(env, region, f, tol=tol, method=method)
    return float(field[system.source_index(x)])


def _hitting_system(system: QuenchedSystem, y_idx: int):
    P = system.P.tocsr(copy=True)
    col_b = np.asarray(P[:, y_idx].todense()).ravel()
    # absorb at the target: zero its row and column, feed the column as source
    start, end = P.indptr[y_idx], P.indptr[y_idx + 1]
    P.data[start:end] = 0.0
    mask = P.indices == y_idx
    P.data[mask] = 0.0
    b = col_b
    b[y_idx] = 1.0
    return P, b


def hitting_probability_field(env: EnvironmentRealization, region: Region, y,
                              tol: float = DEFAULT_TOL, method: str = "auto") -> np.ndarray:
    """P_z(walk hits y before exiting), for every interior start z."""
    system = build_system(env, region)
    y_idx = system.source_index(y)
    A, b = _hitting_system(system, y_idx)
    h, _ = solve_fixed_point(A, b, tol, norm="linf", method=method)
    return h


def hitting_probability(env: EnvironmentRealization, region: Region, z, y,
                        tol: float = DEFAULT_TOL, method: str = "auto") -> float:
    """P_z(hit y before the first exit)."""
    system = build_system(env, region)
    h = hitting_probability_field(env, region, y, tol=tol, method=method)
    return float(h[system.source_index(z)])


def no_return_probability(env: EnvironmentRealization, region: Region, y,
                          tol: float = DEFAULT_TOL, method: str = "auto") -> float:
    """P_y(no return to y before exiting); exterior neighbors never return."""
    system = build_system(env, region)
    y_idx = system.source_index(y)
    h = hitting_probability_field(env, region, y, tol=tol, method=method)
    pat = system.pattern
    total = 0.0
    for e in range(2 * pat.d):
        j = pat.nbr[y_idx, e]
        h_nb = float(h[j]) if j >= 0 else 0.0
        total += system.weights[y_idx, e] * (1.0 - h_nb)
    return total


@dataclass
class ExitDistribution:
    """Exact law of the exit position from one start site."""

    start: tuple
    sites: np.ndarray
    masses: np.ndarray
    region: Region
    achieved_tol: float

    def total(self) -> float:
        return float(self.masses.sum())

    def class_mass(self, cls: ExitClass) -> float:
        frontal = np.array([self.region.is_frontal_site(s) for s in self.sites])
        sel = frontal if cls is ExitClass.FRONTAL else ~frontal
        return float(self.masses[sel].sum())

    def frontal_mass(self) -> float:
        return self.class_mass(ExitClass.FRONTAL)

    def to_csv(self, path) -> None:
        from .reporting import write_csv
        d = self.sites.shape[1]
        header = [f"y{k + 1}" for k in range(d)] + ["probability"]
        rows = [list(map(int, s)) + [float(m)] for s, m in zip(self.sites, self.masses)]
        write_csv(path, header, rows)


def exit_distribution(env: EnvironmentRealization, region: Region, x,
                      tol: float = DEFAULT_TOL, method: str = "auto") -> ExitDistribution:
    """Distribution of the walk's position at its first exit from the region."""
    table = green_row(env, region, x, tol=tol, method=method)
    system = build_system(env, region)
    pat = system.pattern
    boundary = region.boundary_array()
    b_index = {tuple(s): i for i, s in enumerate(boundary)}
    masses = np.zeros(boundary.shape[0])
    g = table.values
    for e in range(2 * pat.d):
        outside = pat.nbr[:, e] < 0
        if not np.any(outside):
            continue
        targets = pat.interior[outside] + pat.dirs[e]
        flow = g[outside] * system.weights[outside, e]
        for t, m in zip(targets, flow):
            masses[b_index[tuple(t)]] += m
    return ExitDistribution(
        start=tuple(int(c) for c in x),
        sites=boundary,
        masses=masses,
        region=region,
        achieved_tol=table.achieved_tol,
    )
