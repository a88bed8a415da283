"""gxlab: a numerical laboratory for sublinear expectations and G-BSDEs."""

__version__ = "0.1.0"

from .gcore import (  # noqa: F401
    ForwardSpec,
    GBsdeProblem,
    GeneratorSpec,
    UncertaintySet,
    g_value,
    twoG,
    validate_assumptions,
)
from .gheat import Grid1D, SolutionField, conditional_cylinder, g_expect, solve_gheat  # noqa: F401
from .gbsde import GBsdeSolution, compare_solutions, extract_k, solve_gbsde  # noqa: F401
from .lattice import VolLattice, oracle_expect, oracle_vs_pde  # noqa: F401
from .representation import ReprCase, SlopeEstimate, rhs_formula, slope_estimate  # noqa: F401
from .genprops import PredicateReport, converse_gap, converse_witness  # noqa: F401
