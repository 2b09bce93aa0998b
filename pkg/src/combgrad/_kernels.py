"""Hot solver kernels: assignment by shortest augmenting paths, alignment by lattice DP.

Each kernel exists twice: a numba ``@njit`` implementation and a plain
numpy/Python mirror written with the same statement order, so the two
backends produce bitwise-identical outputs.  The active backend is chosen
per process from the ``COMBGRAD_BACKEND`` environment variable ("numba" or
"numpy"; default numba when importable) and can be switched at runtime with
:func:`set_backend`, which the backend-comparison benchmark uses.

Every dispatch increments an invocation counter per kernel kind so callers
can assert how many solver runs a code path costs.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is an install-time dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


_COUNTS = {"assignment": 0, "gsa": 0, "lp": 0}


def increment(kind: str, by: int = 1) -> None:
    _COUNTS[kind] += by


def invocations() -> dict:
    """Snapshot of solver-invocation counts per kernel kind."""
    return dict(_COUNTS)


def reset_invocations() -> None:
    for k in _COUNTS:
        _COUNTS[k] = 0


def _resolve_backend() -> str:
    raw = os.environ.get("COMBGRAD_BACKEND", "").strip().lower()
    if raw == "":
        return "numba" if HAS_NUMBA else "numpy"
    if raw in ("numba", "jit"):
        if not HAS_NUMBA:
            raise ImportError("COMBGRAD_BACKEND requests numba but numba is not importable")
        return "numba"
    if raw in ("numpy", "python", "nojit"):
        return "numpy"
    raise ValueError(f"unrecognized COMBGRAD_BACKEND value: {raw!r}")


_BACKEND = _resolve_backend()


def get_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous one."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"backend must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ImportError("numba backend requested but numba is not importable")
    prev = _BACKEND
    _BACKEND = name
    return prev


# ---------------------------------------------------------------------------
# Assignment: Jonker-Volgenant style shortest augmenting paths with potentials.
#
# Indices are 1-based internally (row/column 0 is a sentinel).  The final
# potentials (u, v) are feasible duals: u[j] + v[k] <= C[j, k] everywhere,
# with equality on matched edges, so sum(u) + sum(v) equals the optimal cost.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _assign_core_nb(C, u, v, p, way, minv, used, perm):
    # Workspace-reusing core: all arrays are caller-allocated and fully
    # reset here, so batched callers pay no per-instance allocations.
    n = C.shape[0]
    u[:] = 0.0
    v[:] = 0.0
    p[:] = 0  # p[j]: row matched to column j (0 = free)
    way[:] = 0
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1


@njit(cache=True)
def _assign_nb(C):
    n = C.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, np.bool_)
    perm = np.empty(n, np.int64)
    _assign_core_nb(C, u, v, p, way, minv, used, perm)
    return perm, u[1:].copy(), v[1:].copy()


def _assign_core_py(C, u, v, p, way, minv, used, perm):
    # Statement-order mirror of _assign_core_nb; the inner column scan is the
    # only vectorized part and is elementwise, so results match the jitted
    # kernel bit for bit.
    n = C.shape[0]
    u[:] = 0.0
    v[:] = 0.0
    p[:] = 0
    way[:] = 0
    cols = np.arange(1, n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = C[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[cols[better]] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1


def _assign_py(C):
    n = C.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, np.bool_)
    perm = np.empty(n, np.int64)
    _assign_core_py(C, u, v, p, way, minv, used, perm)
    return perm, u[1:].copy(), v[1:].copy()


@njit(cache=True)
def _assign_many_nb(Cs):
    k, n, _ = Cs.shape
    perms = np.empty((k, n), np.int64)
    us = np.empty((k, n))
    vs = np.empty((k, n))
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, np.bool_)
    perm = np.empty(n, np.int64)
    for t in range(k):
        _assign_core_nb(Cs[t], u, v, p, way, minv, used, perm)
        perms[t] = perm
        us[t] = u[1:]
        vs[t] = v[1:]
    return perms, us, vs


def _assign_many_py(Cs):
    k, n, _ = Cs.shape
    perms = np.empty((k, n), np.int64)
    us = np.empty((k, n))
    vs = np.empty((k, n))
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, np.bool_)
    perm = np.empty(n, np.int64)
    for t in range(k):
        _assign_core_py(Cs[t], u, v, p, way, minv, used, perm)
        perms[t] = perm
        us[t] = u[1:]
        vs[t] = v[1:]
    return perms, us, vs


def assignment_kernel(C: np.ndarray):
    """Solve one square assignment instance.  Returns (perm, u, v)."""
    increment("assignment")
    if _BACKEND == "numba":
        return _assign_nb(C)
    return _assign_py(C)


def assignment_kernel_many(Cs: np.ndarray):
    """Solve a (k, n, n) stack of assignment instances in one dispatch."""
    increment("assignment", int(Cs.shape[0]))
    if _BACKEND == "numba":
        return _assign_many_nb(Cs)
    return _assign_many_py(Cs)


# ---------------------------------------------------------------------------
# Alignment: min-cost monotone lattice path on nodes (i, k), 0 <= i <= Tp,
# 0 <= k <= Tt.  Edge kinds: 1 = diagonal match, 2 = gap that advances the
# target index (horizontal), 3 = gap that advances the predicted index
# (vertical).  Gap edges read the match cost at the source node with
# out-of-range indices clamped to the last valid cell, scaled by gamma.
# Ties prefer diagonal, then horizontal gap, then vertical gap.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _gsa_nb(m, gamma):
    Tp, Tt = m.shape
    dist = np.full((Tp + 1, Tt + 1), np.inf)
    choice = np.zeros((Tp + 1, Tt + 1), np.int8)
    npaths = np.zeros((Tp + 1, Tt + 1), np.int64)
    dist[0, 0] = 0.0
    npaths[0, 0] = 1
    for i in range(Tp + 1):
        for k in range(Tt + 1):
            if i == 0 and k == 0:
                continue
            best = np.inf
            ch = 0
            cand_d = np.inf
            cand_h = np.inf
            cand_v = np.inf
            if i > 0 and k > 0:
                cand_d = dist[i - 1, k - 1] + m[i - 1, k - 1]
                if cand_d < best:
                    best = cand_d
                    ch = 1
            if k > 0:
                ic = i if i < Tp else Tp - 1
                cand_h = dist[i, k - 1] + gamma * m[ic, k - 1]
                if cand_h < best:
                    best = cand_h
                    ch = 2
            if i > 0:
                kc = k if k < Tt else Tt - 1
                cand_v = dist[i - 1, k] + gamma * m[i - 1, kc]
                if cand_v < best:
                    best = cand_v
                    ch = 3
            dist[i, k] = best
            choice[i, k] = ch
            tol = 1e-9 * (1.0 + abs(best))
            cnt = 0
            if cand_d <= best + tol:
                cnt += npaths[i - 1, k - 1]
            if cand_h <= best + tol:
                cnt += npaths[i, k - 1]
            if cand_v <= best + tol:
                cnt += npaths[i - 1, k]
            if cnt > 2:
                cnt = 2
            npaths[i, k] = cnt
    total = Tp + Tt
    kinds = np.zeros(total, np.int8)
    eis = np.zeros(total, np.int64)
    eks = np.zeros(total, np.int64)
    costs = np.zeros(total)
    i = Tp
    k = Tt
    pos = total
    while i != 0 or k != 0:
        ch = choice[i, k]
        pos -= 1
        if ch == 1:
            i -= 1
            k -= 1
            kinds[pos] = 1
            eis[pos] = i
            eks[pos] = k
            costs[pos] = m[i, k]
        elif ch == 2:
            k -= 1
            ic = i if i < Tp else Tp - 1
            kinds[pos] = 2
            eis[pos] = i
            eks[pos] = k
            costs[pos] = gamma * m[ic, k]
        else:
            i -= 1
            kc = k if k < Tt else Tt - 1
            kinds[pos] = 3
            eis[pos] = i
            eks[pos] = k
            costs[pos] = gamma * m[i, kc]
    unique = 1 if npaths[Tp, Tt] == 1 else 0
    return dist[Tp, Tt], kinds, eis, eks, costs, pos, unique


def _gsa_py(m, gamma):
    # Plain-Python mirror of _gsa_nb with identical arithmetic order.
    Tp, Tt = m.shape
    dist = np.full((Tp + 1, Tt + 1), np.inf)
    choice = np.zeros((Tp + 1, Tt + 1), np.int8)
    npaths = np.zeros((Tp + 1, Tt + 1), np.int64)
    dist[0, 0] = 0.0
    npaths[0, 0] = 1
    for i in range(Tp + 1):
        for k in range(Tt + 1):
            if i == 0 and k == 0:
                continue
            best = np.inf
            ch = 0
            cand_d = np.inf
            cand_h = np.inf
            cand_v = np.inf
            if i > 0 and k > 0:
                cand_d = dist[i - 1, k - 1] + m[i - 1, k - 1]
                if cand_d < best:
                    best = cand_d
                    ch = 1
            if k > 0:
                ic = i if i < Tp else Tp - 1
                cand_h = dist[i, k - 1] + gamma * m[ic, k - 1]
                if cand_h < best:
                    best = cand_h
                    ch = 2
            if i > 0:
                kc = k if k < Tt else Tt - 1
                cand_v = dist[i - 1, k] + gamma * m[i - 1, kc]
                if cand_v < best:
                    best = cand_v
                    ch = 3
            dist[i, k] = best
            choice[i, k] = ch
            tol = 1e-9 * (1.0 + abs(best))
            cnt = 0
            if cand_d <= best + tol:
                cnt += npaths[i - 1, k - 1]
            if cand_h <= best + tol:
                cnt += npaths[i, k - 1]
            if cand_v <= best + tol:
                cnt += npaths[i - 1, k]
            npaths[i, k] = min(cnt, 2)
    total = Tp + Tt
    kinds = np.zeros(total, np.int8)
    eis = np.zeros(total, np.int64)
    eks = np.zeros(total, np.int64)
    costs = np.zeros(total)
    i = Tp
    k = Tt
    pos = total
    while i != 0 or k != 0:
        ch = choice[i, k]
        pos -= 1
        if ch == 1:
            i -= 1
            k -= 1
            kinds[pos] = 1
            eis[pos] = i
            eks[pos] = k
            costs[pos] = m[i, k]
        elif ch == 2:
            k -= 1
            ic = i if i < Tp else Tp - 1
            kinds[pos] = 2
            eis[pos] = i
            eks[pos] = k
            costs[pos] = gamma * m[ic, k]
        else:
            i -= 1
            kc = k if k < Tt else Tt - 1
            kinds[pos] = 3
            eis[pos] = i
            eks[pos] = k
            costs[pos] = gamma * m[i, kc]
    unique = 1 if npaths[Tp, Tt] == 1 else 0
    return float(dist[Tp, Tt]), kinds, eis, eks, costs, pos, unique


@njit(cache=True)
def _gsa_many_nb(ms, gamma):
    # Batched solve-plus-gradient: returns objectives and the dense
    # edge-coefficient matrices (1 per diagonal use, gamma per gap use).
    nb, Tp, Tt = ms.shape
    zs = np.empty(nb)
    Gs = np.zeros((nb, Tp, Tt))
    for t in range(nb):
        z, kinds, eis, eks, costs, pos, unique = _gsa_nb(ms[t], gamma)
        zs[t] = z
        for e in range(pos, Tp + Tt):
            i = eis[e]
            k = eks[e]
            if kinds[e] == 1:
                Gs[t, i, k] += 1.0
            elif kinds[e] == 2:
                ic = i if i < Tp else Tp - 1
                Gs[t, ic, k] += gamma
            else:
                kc = k if k < Tt else Tt - 1
                Gs[t, i, kc] += gamma
    return zs, Gs


def _gsa_many_py(ms, gamma):
    nb, Tp, Tt = ms.shape
    zs = np.empty(nb)
    Gs = np.zeros((nb, Tp, Tt))
    for t in range(nb):
        z, kinds, eis, eks, costs, pos, unique = _gsa_py(ms[t], gamma)
        zs[t] = z
        for e in range(pos, Tp + Tt):
            i = eis[e]
            k = eks[e]
            if kinds[e] == 1:
                Gs[t, i, k] += 1.0
            elif kinds[e] == 2:
                ic = i if i < Tp else Tp - 1
                Gs[t, ic, k] += gamma
            else:
                kc = k if k < Tt else Tt - 1
                Gs[t, i, kc] += gamma
    return zs, Gs


def gsa_kernel(m: np.ndarray, gamma: float):
    """Solve one alignment grid.  Returns (z, kinds, eis, eks, costs, pos, unique)."""
    increment("gsa")
    if _BACKEND == "numba":
        return _gsa_nb(m, gamma)
    return _gsa_py(m, gamma)


def gsa_kernel_many(ms: np.ndarray, gamma: float):
    """Solve a (k, Tp, Tt) stack of grids; returns objectives and gradients."""
    increment("gsa", int(ms.shape[0]))
    if _BACKEND == "numba":
        return _gsa_many_nb(ms, gamma)
    return _gsa_many_py(ms, gamma)


def warmup() -> None:
    """Trigger jit compilation of the hot kernels (no-op on the numpy backend)."""
    if _BACKEND != "numba":
        return
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    _assign_nb(C)
    _assign_many_nb(C[None, :, :])
    m = np.array([[1.0, 5.0], [5.0, 1.0]])
    _gsa_nb(m, 1.5)
    _gsa_many_nb(m[None, :, :], 1.5)
