"""Numerical engine for radius-parametrized Dirichlet forms on balls.

Locates conjugate radii of the linearized problem on shrinking
geodesic balls, computes the crossing form two independent ways,
verifies the Morse index identity against the summed crossing
multiplicities, and confirms bifurcation of nontrivial semilinear
solutions at the located radii.
"""

from .metric import MetricModel, callback_metric, constant_curvature, euclidean
from .problem import ProblemSpec, cubic_problem, linear_problem, parse_field
from .fem import Assembler, AssembledForm, Mesh, build_mesh
from .spectral import EigenPairs, Inertia, inertia, kernel_eigenpairs, smallest_eigenpairs
from .conjugate import (
    ConjugateRadius,
    CrossingFormReport,
    DegenerateRadiusOneError,
    IndexReport,
    ScanResult,
    VerificationError,
    crossing_form_boundary,
    crossing_form_fd,
    find_conjugate_radii,
    locate,
    scan,
    verify_crossing,
    verify_index,
)
from .branch import (
    BranchSample,
    BranchTrace,
    amplitude_exponent,
    multistart_no_small_solutions,
    newton_solve,
    trace_branch,
)

__version__ = "0.1.0"
