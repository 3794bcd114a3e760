"""Fields, forces and theorem checks for nonlinear-medium Poisson problems.

``div[mu(|grad phi| / a0) grad phi] = alpha_D G rho`` is solved exactly in
one dimension and for radial sources, and on grids by damped Newton
minimisation of the field energy.  Forces come from surface integrals of the
field stress.
"""

__version__ = "0.1.0"

from .media import InadmissibleError, MediumLaw, builtin_law, custom_law, medium_eval, nu_inverse  # noqa: F401
from .sources import ChargeConfiguration, ConfigError, PointCharge, RadialProfile, SphereBody  # noqa: F401
from .solver import BoundaryCondition, ConvergenceError, FieldSolution, solve_1d, solve_grid, solve_radial  # noqa: F401
from .grid import Grid  # noqa: F401
