"""Reference machinery at desk scale: a dense two-phase simplex with dual
recovery, brute-force vertex enumeration, finite-difference checks of the
optimal-value gradients, and exhaustive enumeration oracles for the
assignment and alignment solvers.

Everything here favors transparency over speed and is meant for instances
with tens of variables at most.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import _kernels
from .core import LPSpec, SolverOutcome
from .errors import DegenerateInstance, DimensionMismatch, Infeasible, NonFinite, Unbounded

_MAX_PIVOTS = 20000


def _pivot(T: np.ndarray, basis: list, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _simplex_iterate(T: np.ndarray, basis: list, cost: np.ndarray, tol: float) -> None:
    """Run Bland's-rule pivoting on a canonical tableau until optimality.

    T is (m, ncols+1) with the rhs in the last column and identity columns at
    the basis indices.  Raises Unbounded when an improving column has no
    positive entry.
    """
    m, ncols1 = T.shape
    ncols = ncols1 - 1
    for _ in range(_MAX_PIVOTS):
        cb = cost[basis]
        reduced = cost[:ncols] - cb @ T[:, :ncols]
        entering = -1
        for j in range(ncols):
            if reduced[j] < -tol:
                entering = j
                break
        if entering < 0:
            return
        col = T[:, entering]
        best_ratio = np.inf
        leave = -1
        for r in range(m):
            if col[r] > tol:
                ratio = T[r, -1] / col[r]
                if ratio < best_ratio - tol or (
                    abs(ratio - best_ratio) <= tol and (leave < 0 or basis[r] < basis[leave])
                ):
                    best_ratio = ratio
                    leave = r
        if leave < 0:
            raise Unbounded("improving direction with no blocking constraint")
        _pivot(T, basis, leave, entering)
    raise RuntimeError("simplex did not terminate within the pivot budget")


def solve_lp(spec: LPSpec, *, tol: float = 1e-9) -> SolverOutcome:
    """Solve min c.x s.t. A x = b, x >= 0 by a two-phase dense simplex.

    Returns the optimal value with both witnesses: the primal vertex u*, the
    duals v* recovered from the optimal basis, and a uniqueness flag that is
    True iff every nonbasic reduced cost is strictly positive.

    Raises Infeasible or Unbounded.
    """
    _kernels.increment("lp")
    m, p = spec.num_constraints, spec.num_vars
    sign = np.where(spec.b < 0, -1.0, 1.0)
    A = spec.A * sign[:, None]
    b = spec.b * sign
    scale = 1.0 + float(np.abs(b).max(initial=0.0))

    # Phase 1: drive artificial variables to zero.
    T = np.hstack([A, np.eye(m), b[:, None]])
    basis = list(range(p, p + m))
    cost1 = np.concatenate([np.zeros(p), np.ones(m)])
    _simplex_iterate(T, basis, cost1, tol)
    if float(cost1[basis] @ T[:, -1]) > tol * scale:
        raise Infeasible("phase-1 objective positive")

    # Pivot artificials out of the basis; rows that cannot be cleared are
    # redundant and get dropped (their dual component is reported as zero).
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= p:
            piv = -1
            for j in range(p):
                if abs(T[r, j]) > tol:
                    piv = j
                    break
            if piv >= 0:
                _pivot(T, basis, r, piv)
            else:
                keep[r] = False
    if not keep.all():
        T = T[keep]
        basis = [basis[r] for r in range(m) if keep[r]]

    # Phase 2 on the original columns only.
    T2 = np.hstack([T[:, :p], T[:, -1:]])
    cost2 = spec.c.copy()
    _simplex_iterate(T2, basis, cost2, tol)

    u = np.zeros(p)
    for r, j in enumerate(basis):
        u[j] = T2[r, -1]
    z = float(spec.c @ u)

    B = A[keep][:, basis]
    v_kept = np.linalg.solve(B.T, spec.c[basis])
    v = np.zeros(m)
    v[keep] = sign[keep] * v_kept

    reduced = spec.c - A[keep].T @ v_kept
    nonbasic = np.ones(p, dtype=bool)
    nonbasic[basis] = False
    unique = bool(np.all(reduced[nonbasic] > tol)) if nonbasic.any() else True
    return SolverOutcome(z_star=z, u_star=u, v_star=v, unique=unique)


@dataclass(frozen=True)
class Vertex:
    x: np.ndarray
    basis: tuple
    objective: float


@dataclass(frozen=True)
class VertexSet:
    vertices: tuple

    def min_objective(self) -> float:
        return min(v.objective for v in self.vertices)

    def argmin(self) -> Vertex:
        return min(self.vertices, key=lambda v: v.objective)

    def __len__(self) -> int:
        return len(self.vertices)


def enumerate_vertices(spec: LPSpec, *, tol: float = 1e-9) -> VertexSet:
    """All basic feasible solutions by brute force over rank-sized column sets.

    Deduplicates coincident points (degenerate vertices keep their first
    basis).  Intended for num_vars <= 10 and num_constraints <= 6.  Raises
    Infeasible when no basic feasible solution exists.
    """
    m, p = spec.num_constraints, spec.num_vars
    if p > 10 or m > 6:
        raise DimensionMismatch("vertex enumeration is limited to p <= 10, m <= 6")
    rank = int(np.linalg.matrix_rank(spec.A, tol=1e-9))
    scale = 1.0 + float(np.abs(spec.b).max(initial=0.0))
    found: dict = {}
    for S in itertools.combinations(range(p), rank):
        B = spec.A[:, S]
        if np.linalg.matrix_rank(B, tol=1e-9) < rank:
            continue
        xS, *_ = np.linalg.lstsq(B, spec.b, rcond=None)
        if np.max(np.abs(B @ xS - spec.b)) > tol * scale:
            continue
        if np.min(xS, initial=0.0) < -tol:
            continue
        x = np.zeros(p)
        x[list(S)] = xS
        x[np.abs(x) <= tol] = 0.0
        key = tuple(np.round(x, 9))
        if key not in found:
            found[key] = Vertex(x=x, basis=tuple(S), objective=float(spec.c @ x))
    if not found:
        raise Infeasible("no basic feasible solution")
    return VertexSet(vertices=tuple(found.values()))


@dataclass(frozen=True)
class FDReport:
    """One central-difference probe of z* along a random direction."""

    analytic: float
    numeric: float
    abs_err: float
    rel_err: float
    passed: bool


@dataclass(frozen=True)
class LPGradCheck:
    c_block: FDReport
    b_block: FDReport
    A_block: FDReport

    @property
    def passed(self) -> bool:
        return self.c_block.passed and self.b_block.passed and self.A_block.passed


def _fd_report(analytic: float, numeric: float, rtol: float) -> FDReport:
    abs_err = abs(analytic - numeric)
    rel_err = abs_err / max(1.0, abs(analytic), abs(numeric))
    return FDReport(
        analytic=float(analytic),
        numeric=float(numeric),
        abs_err=float(abs_err),
        rel_err=float(rel_err),
        passed=bool(rel_err <= rtol),
    )


def check_lp_grads(
    spec: LPSpec,
    outcome: SolverOutcome,
    *,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> LPGradCheck:
    """Probe all three optimal-value gradients by central differences.

    Compares (z*(data + eps*d) - z*(data - eps*d)) / (2 eps) against u*.d
    for the cost block, v*.d for the rhs block, and <-v* u*^T, D> for the
    matrix block, along one random direction each.  Central quotients
    matter for the matrix block: the optimal value is piecewise linear in c
    and in b but only piecewise rational in A, so a one-sided quotient
    carries an O(eps)-curvature term that central differencing cancels.

    Raises DegenerateInstance when the optimum is not certified unique or
    the optimal vertex is degenerate; a single witness is then only one
    element of the gradient set and the quotient need not match it.
    """
    if outcome.u_star is None or outcome.v_star is None:
        raise DegenerateInstance("outcome lacks witnesses")
    if not outcome.unique:
        raise DegenerateInstance("primal optimum not certified unique")
    m = spec.num_constraints
    if int(np.sum(outcome.u_star > 1e-9)) != m:
        raise DegenerateInstance("degenerate optimal vertex; dual witness not unique")
    if rng is None:
        rng = np.random.default_rng(seed)
    u, v = outcome.u_star, outcome.v_star

    dc = rng.standard_normal(spec.num_vars)
    z_hi = solve_lp(LPSpec(spec.c + eps * dc, spec.A, spec.b)).z_star
    z_lo = solve_lp(LPSpec(spec.c - eps * dc, spec.A, spec.b)).z_star
    rep_c = _fd_report(float(u @ dc), (z_hi - z_lo) / (2 * eps), rtol)

    db = rng.standard_normal(m)
    z_hi = solve_lp(LPSpec(spec.c, spec.A, spec.b + eps * db)).z_star
    z_lo = solve_lp(LPSpec(spec.c, spec.A, spec.b - eps * db)).z_star
    rep_b = _fd_report(float(v @ db), (z_hi - z_lo) / (2 * eps), rtol)

    dA = rng.standard_normal((m, spec.num_vars))
    z_hi = solve_lp(LPSpec(spec.c, spec.A + eps * dA, spec.b)).z_star
    z_lo = solve_lp(LPSpec(spec.c, spec.A - eps * dA, spec.b)).z_star
    rep_A = _fd_report(float(-(v @ dA @ u)), (z_hi - z_lo) / (2 * eps), rtol)

    return LPGradCheck(c_block=rep_c, b_block=rep_b, A_block=rep_A)


def random_lp(rng: np.random.Generator, p: int, m: int) -> LPSpec:
    """A random feasible bounded instance: b = A x0 with x0 > 0 and c > 0."""
    A = rng.standard_normal((m, p))
    x0 = rng.uniform(0.5, 1.5, size=p)
    c = rng.uniform(0.5, 1.5, size=p)
    return LPSpec(c, A, A @ x0)


# ---------------------------------------------------------------------------
# Exhaustive oracles.  These share no code with the production solvers: the
# assignment oracle scores every permutation, the alignment oracle walks
# every monotone lattice path.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _perm_table(b: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(b))), dtype=np.int64)


def enumerate_permutations(C: np.ndarray, *, tol: float = 1e-9) -> tuple:
    """Minimum assignment cost and the full argmin set, by enumeration.

    Limited to b <= 8 (8! = 40320 permutations).  Returns (z_min, argmins)
    where argmins is a list of index tuples whose cost is within tol of the
    minimum.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatch("cost matrix must be square")
    b = C.shape[0]
    if b > 8:
        raise DimensionMismatch("permutation enumeration is limited to b <= 8")
    if not np.isfinite(C).all():
        raise NonFinite("cost matrix must be finite")
    P = _perm_table(b)
    costs = C[np.arange(b)[None, :], P].sum(axis=1)
    z = float(costs.min())
    argmins = [tuple(int(x) for x in P[i]) for i in np.flatnonzero(costs <= z + tol)]
    return z, argmins


def enumerate_path_costs(m: np.ndarray, gamma: float) -> np.ndarray:
    """The cost of every monotone lattice path, with no minimization at all.

    Expands, node by node, the full multiset of path costs reaching each
    lattice point (arrays rather than strings, so 7x7 grids with ~4.9e4
    paths stay fast).  The caller takes mins, counts ties, or checks
    uniqueness against the returned vector.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch("match-cost matrix must be 2-D")
    Tp, Tt = m.shape
    if Tp > 7 or Tt > 7:
        raise DimensionMismatch("path enumeration is limited to 7x7 grids")
    if not np.isfinite(m).all():
        raise NonFinite("match costs must be finite")
    gamma = float(gamma)
    costs: list = [[None] * (Tt + 1) for _ in range(Tp + 1)]
    costs[0][0] = np.zeros(1)
    for i in range(Tp + 1):
        for k in range(Tt + 1):
            if i == 0 and k == 0:
                continue
            parts = []
            if i > 0 and k > 0:
                parts.append(costs[i - 1][k - 1] + m[i - 1, k - 1])
            if k > 0:
                parts.append(costs[i][k - 1] + gamma * m[min(i, Tp - 1), k - 1])
            if i > 0:
                parts.append(costs[i - 1][k] + gamma * m[i - 1, min(k, Tt - 1)])
            costs[i][k] = np.concatenate(parts)
    return costs[Tp][Tt]


def enumerate_paths(m: np.ndarray, gamma: float, *, tol: float = 1e-9) -> tuple:
    """Minimum monotone-path cost and the argmin step strings, by enumeration.

    Steps are 'D' (diagonal match), 'P' (gap advancing the target index),
    'T' (gap advancing the predicted index); gap costs are gamma times the
    match cost at the source node with indices clamped to the last valid
    cell.  Limited to dimensions <= 7.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch("match-cost matrix must be 2-D")
    Tp, Tt = m.shape
    if Tp > 7 or Tt > 7:
        raise DimensionMismatch("path enumeration is limited to 7x7 grids")
    if not np.isfinite(m).all():
        raise NonFinite("match costs must be finite")
    gamma = float(gamma)
    costs = []
    paths = []
    # Explicit stack of (i, k, cost-so-far, steps-so-far).
    stack = [(0, 0, 0.0, "")]
    while stack:
        i, k, cost, steps = stack.pop()
        if i == Tp and k == Tt:
            costs.append(cost)
            paths.append(steps)
            continue
        if i < Tp and k < Tt:
            stack.append((i + 1, k + 1, cost + m[i, k], steps + "D"))
        if k < Tt:
            ic = i if i < Tp else Tp - 1
            stack.append((i, k + 1, cost + gamma * m[ic, k], steps + "P"))
        if i < Tp:
            kc = k if k < Tt else Tt - 1
            stack.append((i + 1, k, cost + gamma * m[i, kc], steps + "T"))
    costs = np.asarray(costs)
    z = float(costs.min())
    argmins = sorted(paths[i] for i in np.flatnonzero(costs <= z + tol))
    return z, argmins
