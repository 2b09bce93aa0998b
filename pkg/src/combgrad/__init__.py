"""combgrad: exact generalized gradients of combinatorial optimal values.

The optimal value of a linear program — and of the discrete problems that
embed into one, like min-cost assignment and monotone sequence alignment —
is a piecewise-linear function of its data, and one optimal primal/dual
witness pair is a generalized gradient in all three data blocks at once.
This package computes those gradients from a single solver run, wires them
into a small reverse-mode tape, and uses them to train models whose losses
are themselves optimization problems.
"""

from ._kernels import get_backend, invocations, reset_invocations, set_backend, warmup
from .alignment import (
    AlignGrid,
    AlignResult,
    PathEdge,
    build_grid,
    gsa_gengrad,
    gsa_grad_matrix,
    gsa_layer,
    gsa_loss,
    solve_gsa,
)
from .assignment import (
    MatchingResult,
    assignment_gengrad,
    filter_bag,
    matching_layer,
    matching_loss,
    solve_assignment,
)
from .core import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    ChainMaps,
    CombLayer,
    Dependence,
    GenGrad,
    GradMode,
    LPSpec,
    SolverOutcome,
    SupergradReport,
    assemble_gengrad,
    comb_loss_backward,
    strong_duality_gap,
    supergradient_check,
)
from .errors import (
    CombgradError,
    DegenerateInstance,
    DimensionMismatch,
    Infeasible,
    MissingWitness,
    NonFinite,
    NonSquare,
    ShapeMismatch,
    TrainAborted,
    Unbounded,
)
from .lpref import (
    FDReport,
    LPGradCheck,
    VertexSet,
    check_lp_grads,
    enumerate_path_costs,
    enumerate_paths,
    enumerate_permutations,
    enumerate_vertices,
    random_lp,
    solve_lp,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # backends / counters
    "get_backend",
    "set_backend",
    "warmup",
    "invocations",
    "reset_invocations",
    # core
    "LPSpec",
    "SolverOutcome",
    "GenGrad",
    "GradMode",
    "Dependence",
    "ChainMaps",
    "CombLayer",
    "SupergradReport",
    "assemble_gengrad",
    "comb_loss_backward",
    "strong_duality_gap",
    "supergradient_check",
    "DEFAULT_ATOL",
    "DEFAULT_RTOL",
    # assignment
    "MatchingResult",
    "solve_assignment",
    "assignment_gengrad",
    "matching_loss",
    "matching_layer",
    "filter_bag",
    # alignment
    "AlignGrid",
    "AlignResult",
    "PathEdge",
    "build_grid",
    "solve_gsa",
    "gsa_gengrad",
    "gsa_grad_matrix",
    "gsa_loss",
    "gsa_layer",
    # reference / oracles
    "solve_lp",
    "enumerate_vertices",
    "VertexSet",
    "check_lp_grads",
    "FDReport",
    "LPGradCheck",
    "random_lp",
    "enumerate_permutations",
    "enumerate_paths",
    "enumerate_path_costs",
    # errors
    "CombgradError",
    "DimensionMismatch",
    "ShapeMismatch",
    "MissingWitness",
    "NonSquare",
    "NonFinite",
    "Infeasible",
    "Unbounded",
    "DegenerateInstance",
    "TrainAborted",
]
