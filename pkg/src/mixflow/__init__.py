"""mixflow: a desk-scale laboratory for isothermal multicomponent compressible flow.

Exact convex-conjugate thermodynamics, the (varrho, q) change of variables
that removes the positivity constraints, projected Onsager mobilities, and
two linearisation/fixed-point schemes driving a 1D mixed
parabolic-hyperbolic solver with contraction and blow-up diagnostics.
"""

from .changevar import (BasisPair, decompose_mu, make_basis, mean_potential,
                        P_bundle, R_bundle, reconstruct_rho, reduce_rho,
                        state_coefficients)
from .diagnostics import (blowup_functional, density_bound_certificate,
                          holder_seminorm, v_norm_surrogate)
from .discretization import BC, Grid1D, d1, d2, integrate, solve_block_tridiag
from .errors import (BasisError, ConvergenceError, DomainError, GridError,
                     LinearSolverError, MixflowError, PositivityError,
                     ScenarioError, SpecError, StepSizeError, UsageError)
from .linearization import eval_f_prime, eval_g_prime
from .mobility import (OnsagerSpec, ReactionSpec, build_onsager,
                       deviation_projector, number_weighted_diagonal,
                       pairwise_exchange_rate, reduced_mobility,
                       reduced_mobility_bundle, spd_product_eigs)
from .solver import (EquilibriumState, ForcingSpec, IterationTrace,
                     MixtureProblem, SolverConfig, Trajectory,
                     characteristics_density, contraction_energy, eval_f,
                     eval_g, fixed_point_T, fixed_point_T1, no_forcing,
                     sine_forcing, solve_continuity, step_q_parabolic,
                     step_v_parabolic)
from .thermo import (ElasticMixture, FreeEnergyModel, IdealGasMixture,
                     PowerLawMixture, SpeciesSystem, StiffenedTLogT, TLogT)

__version__ = "0.1.0"
