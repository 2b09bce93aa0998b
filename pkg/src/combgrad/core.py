"""Core contract: optimal values of parametric min-form problems and their
generalized gradients.

For a linear program ``min c.x  s.t.  A x = b, x >= 0`` the optimal value
``z*`` is concave piecewise-linear in ``c`` and convex piecewise-linear in
``b``.  A primal optimum ``u*`` is a supergradient of ``z*`` with respect to
``c``, a dual optimum ``v*`` is a subgradient with respect to ``b``, and the
matrix ``-v* u*^T`` plays the same role for ``A``.  A combinatorial solver
that returns its optimum (assignment matrix, alignment path) therefore also
returns a generalized gradient of its objective value, and a single solve
feeds both the forward and the backward pass of a loss built on ``z*``.

This module holds the shared types, the witness-to-gradient assembly, the
chain-rule contraction onto upstream parameters, and a sampling check of the
super/subgradient inequalities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

from .errors import DimensionMismatch, MissingWitness, NonFinite

DEFAULT_ATOL = 1e-9
DEFAULT_RTOL = 1e-9


def close(a, b, atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> bool:
    """Scalar/array closeness with the package-default tolerances."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return bool(np.all(np.abs(a - b) <= atol + rtol * np.maximum(np.abs(a), np.abs(b))))


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LPSpec:
    """Equality-form linear program: minimize c.x subject to A x = b, x >= 0."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=np.float64))
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if c.ndim != 1 or b.ndim != 1 or A.ndim != 2:
            raise DimensionMismatch("c and b must be vectors and A a matrix")
        if A.shape != (b.size, c.size):
            raise DimensionMismatch(
                f"A has shape {A.shape}, expected ({b.size}, {c.size})"
            )
        if not (np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(b).all()):
            raise NonFinite("LP data must be finite")
        object.__setattr__(self, "c", _freeze(c))
        object.__setattr__(self, "A", _freeze(A))
        object.__setattr__(self, "b", _freeze(b))

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_constraints(self) -> int:
        return self.b.size


@dataclass(frozen=True)
class SolverOutcome:
    """Optimal value plus whichever optimality witnesses the solver produced.

    ``u_star`` is a primal optimum (arg min), ``v_star`` a dual optimum; the
    ``unique`` flag records whether the solver certified the optimum as the
    only one (None when the check was skipped).
    """

    z_star: float
    u_star: Optional[np.ndarray] = None
    v_star: Optional[np.ndarray] = None
    unique: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "z_star", float(self.z_star))
        if self.u_star is not None:
            object.__setattr__(self, "u_star", _freeze(np.atleast_1d(self.u_star)))
        if self.v_star is not None:
            object.__setattr__(self, "v_star", _freeze(np.atleast_1d(self.v_star)))


def strong_duality_gap(spec: LPSpec, outcome: SolverOutcome) -> float:
    """|c.u* - b.v*| for an outcome carrying both witnesses."""
    if outcome.u_star is None or outcome.v_star is None:
        raise MissingWitness("strong-duality audit needs both witnesses")
    return abs(float(spec.c @ outcome.u_star) - float(spec.b @ outcome.v_star))


@dataclass(frozen=True)
class GenGrad:
    """Generalized gradient of z* with respect to the problem data blocks.

    d_c is a primal optimum, d_b a dual optimum, and d_A = -outer(d_b, d_c);
    any block may be absent when the corresponding data does not vary.
    """

    d_c: Optional[np.ndarray] = None
    d_b: Optional[np.ndarray] = None
    d_A: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("d_c", "d_b", "d_A"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _freeze(np.asarray(val)))


class GradMode(str, Enum):
    """Which witness the backward pass needs."""

    PRIMAL = "primal"
    DUAL = "dual"
    PRIMAL_DUAL = "primal_dual"


@dataclass(frozen=True)
class Dependence:
    """Declares which data blocks of the problem vary with the parameters.

    PRIMAL means only the cost vector c = c(w) (gradient needs the primal
    witness), DUAL means only the right-hand side b = b(w) (needs the dual
    witness), PRIMAL_DUAL allows any of c, b, A to vary (needs both).
    """

    mode: GradMode
    on_c: bool = False
    on_b: bool = False
    on_A: bool = False

    def __post_init__(self):
        if self.mode == GradMode.PRIMAL:
            if not self.on_c or self.on_b or self.on_A:
                raise ValueError("PRIMAL dependence must declare c and only c")
        elif self.mode == GradMode.DUAL:
            if self.on_c or not self.on_b or self.on_A:
                raise ValueError("DUAL dependence must declare b and only b")
        else:
            if not (self.on_c or self.on_b or self.on_A):
                raise ValueError("PRIMAL_DUAL dependence must declare at least one block")

    @classmethod
    def primal(cls) -> "Dependence":
        return cls(GradMode.PRIMAL, on_c=True)

    @classmethod
    def dual(cls) -> "Dependence":
        return cls(GradMode.DUAL, on_b=True)

    @classmethod
    def primal_dual(cls, on_c: bool = True, on_b: bool = True, on_A: bool = True) -> "Dependence":
        return cls(GradMode.PRIMAL_DUAL, on_c=on_c, on_b=on_b, on_A=on_A)


def assemble_gengrad(outcome: SolverOutcome, dep: Dependence) -> GenGrad:
    """Turn solver witnesses into the generalized gradient blocks that the
    declared dependence requires.

    Raises MissingWitness when the outcome lacks a needed witness.
    """
    need_u = dep.on_c or dep.on_A
    need_v = dep.on_b or dep.on_A
    if need_u and outcome.u_star is None:
        raise MissingWitness("dependence on c or A needs the primal witness u*")
    if need_v and outcome.v_star is None:
        raise MissingWitness("dependence on b or A needs the dual witness v*")
    d_c = outcome.u_star if dep.on_c else None
    d_b = outcome.v_star if dep.on_b else None
    d_A = None
    if dep.on_A:
        d_A = -np.outer(outcome.v_star, outcome.u_star)
    return GenGrad(d_c=d_c, d_b=d_b, d_A=d_A)


@dataclass(frozen=True)
class ChainMaps:
    """Jacobians of the problem data with respect to the parameter vector w.

    Each map is a dense or scipy.sparse matrix whose column count is the
    parameter dimension: dc_dw is (p, nw), db_dw is (m, nw), dA_dw is
    (m*p, nw) acting on the row-major vectorization of A.  Absent maps
    contribute nothing to the backward pass.
    """

    dc_dw: Optional[Any] = None
    db_dw: Optional[Any] = None
    dA_dw: Optional[Any] = None

    def param_dim(self) -> int:
        for m in (self.dc_dw, self.db_dw, self.dA_dw):
            if m is not None:
                return int(m.shape[1])
        raise DimensionMismatch("no chain maps present; parameter dimension unknown")


def comb_loss_backward(gg: GenGrad, chains: ChainMaps, upstream: float) -> np.ndarray:
    """Chain the generalized gradient through the data Jacobians.

    Returns upstream * (dc_dw^T d_c + db_dw^T d_b + dA_dw^T vec(d_A)); the
    d_A block already carries its minus sign from assembly.  Linear in
    upstream by construction.
    """
    nw = chains.param_dim()
    out = np.zeros(nw)
    used_any = False
    for jac, block, label in (
        (chains.dc_dw, gg.d_c, "c"),
        (chains.db_dw, gg.d_b, "b"),
        (chains.dA_dw, None if gg.d_A is None else np.asarray(gg.d_A).ravel(), "A"),
    ):
        if jac is None:
            continue
        if block is None:
            raise MissingWitness(f"chain map for {label} given but gradient block is absent")
        block = np.asarray(block, dtype=np.float64).ravel()
        if jac.shape[0] != block.size or jac.shape[1] != nw:
            raise DimensionMismatch(
                f"chain map for {label} has shape {tuple(jac.shape)}, "
                f"expected ({block.size}, {nw})"
            )
        term = jac.T @ block
        out = out + np.asarray(term).ravel()
        used_any = True
    if not used_any:
        raise DimensionMismatch("no chain maps present")
    return float(upstream) * out


@dataclass(frozen=True)
class CombLayer:
    """A parametric combinatorial problem exposed as a differentiable value.

    ``build`` maps the parameter array to a problem instance, ``solver``
    produces a SolverOutcome for it, and ``chains`` evaluates the data
    Jacobians at the same parameters.  ``dependence`` states which data
    blocks vary, hence which witnesses the backward pass will consume.
    """

    dependence: Dependence
    build: Callable[[np.ndarray], Any]
    solver: Callable[[Any], SolverOutcome]
    chains: Callable[[np.ndarray], ChainMaps]

    def run(self, w: np.ndarray) -> tuple[SolverOutcome, ChainMaps]:
        instance = self.build(w)
        outcome = self.solver(instance)
        return outcome, self.chains(w)


@dataclass(frozen=True)
class SupergradReport:
    passed: bool
    worst_violation: float
    trials: int
    sense: str


def supergradient_check(
    f: Callable[[np.ndarray], float],
    w: np.ndarray,
    g: np.ndarray,
    *,
    trials: int = 100,
    radius: float = 0.5,
    sense: str = "concave",
    tol: float = DEFAULT_ATOL,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
) -> SupergradReport:
    """Sample the defining inequality of a super/subgradient around w.

    concave: f(w') <= f(w) + <g, w' - w> + tol for w' in the ball;
    convex:  f(w') >= f(w) + <g, w' - w> - tol.
    Reports the worst violation found (positive = violated).
    """
    if sense not in ("concave", "convex"):
        raise ValueError("sense must be 'concave' or 'convex'")
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != w.shape:
        raise DimensionMismatch(f"gradient shape {g.shape} != parameter shape {w.shape}")
    if rng is None:
        rng = np.random.default_rng(seed)
    fw = float(f(w))
    worst = -np.inf
    for _ in range(trials):
        d = rng.standard_normal(w.shape)
        nrm = float(np.sqrt(np.vdot(d, d)))
        if nrm == 0.0:
            continue
        r = radius * float(rng.uniform()) ** (1.0 / w.size)
        wp = w + (r / nrm) * d
        fp = float(f(wp))
        lin = fw + float(np.vdot(g, wp - w))
        viol = fp - lin if sense == "concave" else lin - fp
        if viol > worst:
            worst = viol
    return SupergradReport(passed=bool(worst <= tol), worst_violation=float(worst), trials=trials, sense=sense)
