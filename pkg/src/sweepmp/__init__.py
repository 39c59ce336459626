"""Numerical toolkit for controlled sweeping processes.

Approximates the normal-cone dynamics by an exponential penalty family,
cross-validates against a catch-up discretization, integrates the penalized
costate backward, and scores candidate multipliers against the
maximum-principle conditions.  Two fully worked moving-disc examples ship as
registered problems.
"""

from .adjoint import AdjointArc, adjoint_rhs, integrate_adjoint_backward, \
    multiplier_profile
from .catchup import ProjectionError, ProjectionResult, catchup_simulate, \
    project_onto_sublevel
from .examples import (Example1Params, build_example1, build_example2,
                       build_static_disc, example1_params, example2_search,
                       get_problem, optimal_control_example1, phi_boundary,
                       polar_rhs, rho, rho_dot, solve_tstar)
from .integrate import (ControlSignal, FamilyReport, StepUnderflowError,
                        Trajectory, integrate_forward, read_trajectory_csv,
                        run_family)
from .mpcheck import (MPReport, adjoint_identity_residual, assemble_report,
                      make_candidate_arc, maximization_residual,
                      normalize_candidate, transversality_residual)
from .penalty import PenaltySchedule, choose_gamma, mu_gamma, penalty_rhs
from .problem import (AssumptionError, AssumptionReport, BallSet, BoxControls,
                      BoxSet, CallableConstraint, ConstraintEval, ConstraintFn,
                      FiniteControls, PointSet, ProbeGrid, ProblemSpec,
                      SimpleSet, SphereConstraint, boundary_multiplier,
                      validate_assumptions)

__version__ = "0.1.0"
