"""Solver/verifier toolkit for infinite-horizon discrete-time optimal
control via finite-horizon truncations: stage models, first-order
certificates (costate recursion + variational inequality), multiplier
continuation across horizons, and uniform-boundedness probes."""

from .catalog import (CATALOG, CatalogEntry, abnormal_instance,
                      abnormal_reference, get_entry, lq_oracle,
                      make_abnormal_problem, make_lq_problem,
                      make_ramsey_problem, ramsey_reference,
                      riccati_stationary)
from .continuation import (ContinuationTrace, DegeneracyReport, HorizonRecord,
                           LimitResult, degeneracy_monitor, detect_limit,
                           run_continuation, steady_state_anchor,
                           write_trace_csv)
from .errors import (ConditionViolation, ConfigError, DimensionMismatch,
                     DomainViolation, IhocError, IndexMismatch,
                     InfeasibleSubproblem, MarginZero, NoConvergence,
                     NonFiniteValue, NormalizationError, PointNotInSet,
                     TangentConeViolation, UnboundedSet)
from .fa_lab import (ConvexBody, OperatorNormAudit, SubadditiveFamily,
                     WitnessResult, domination_witness_search, linear_family,
                     operator_norm_audit, relu_linear_family,
                     seminorm_family, uniform_bound_estimate)
from .finite_horizon import (DecisionLayout, KKTPoint, SolverConfig,
                             TruncatedProblem, abnormal_extraction,
                             extract_multipliers, solve_truncation)
from .model import (AnchorReport, ControlProblem, DerivativeReport, Process,
                    StageData, StageDynamics, StageMap, StageReward, Tail,
                    anchor_check, check_derivatives, control_violation,
                    feasibility_residual, interiority_margin,
                    periodic_stages, rank_codim, stationary_stages,
                    tabulated_stages)
from .pontryagin import (BoundAudit, Certificate, ConeBoundReport,
                         MultiplierPath, adjoint_step, adjoint_sweep,
                         bound_audit, cone_bound_check, verify_certificate,
                         vi_residual)
from .sets import (Ball, Box, ConvexControlSet, Polytope,
                   min_norm_affine_cone, support_function,
                   tangent_cone_contains)

__version__ = "0.1.0"
