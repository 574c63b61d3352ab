"""Constraint-adaptive MPC for linear systems with many state constraints.

Removes provably redundant state constraints online, via reachable-set and
cost-level-set certificates, before each receding-horizon QP solve; the
reduced problem keeps the minimizer of the full one.  Ships a 1D
heat-equation benchmark scenario and a CLI harness (``campc run | sweep |
check``).
"""

from ._backend import backend_name
from .controller import (CampcController, CampcState, FullMpcController,
                         SimulationTrace, run, warm_start)
from .errors import (CampcError, InfeasibleError, NotPositiveDefiniteError,
                     NumericalError, ScenarioError)
from .hyperthermia import HeatScenario, build_scenario, case_tubes
from .lti import LtiSystem, PolyhedralSet, PredictionMatrices, build_prediction
from .mpc import CondensedQp, MpcProblem, condense, mpc_law, solve_full
from .presolve import (LevelSetEllipse, ReducedIndexSets, assemble_reduced,
                       level_set, reduce_constraints, test_box, test_ellipse)
from .reach import (BoxSet, EllipsoidSet, ReachTubes, backward_box_recursion,
                    forward_box_recursion, shift_tube)
from .solvers import (LpProblem, QpProblem, QpSolution, cholesky_lower,
                      matrix_exponential, solve_lp, solve_qp, zoh_discretize)

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "CampcController", "CampcState", "FullMpcController", "SimulationTrace",
    "run", "warm_start",
    "CampcError", "InfeasibleError", "NotPositiveDefiniteError",
    "NumericalError", "ScenarioError",
    "HeatScenario", "build_scenario", "case_tubes",
    "LtiSystem", "PolyhedralSet", "PredictionMatrices", "build_prediction",
    "CondensedQp", "MpcProblem", "condense", "mpc_law", "solve_full",
    "LevelSetEllipse", "ReducedIndexSets", "assemble_reduced", "level_set",
    "reduce_constraints", "test_box", "test_ellipse",
    "BoxSet", "EllipsoidSet", "ReachTubes", "backward_box_recursion",
    "forward_box_recursion", "shift_tube",
    "LpProblem", "QpProblem", "QpSolution", "cholesky_lower",
    "matrix_exponential", "solve_lp", "solve_qp", "zoh_discretize",
    "__version__",
]
