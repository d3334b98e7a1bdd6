"""Aggregated P-Q flexibility estimation for reconfigurable distribution networks."""

from .acropf import (
    BOUNDARY,
    MIN_COST,
    ObjectiveSpec,
    QcpProblem,
    TargetPoint,
    VariableLayout,
    branch_flow,
    build_problem,
    eval_derivatives,
    eval_residuals,
)
from .ipm import (
    INFEASIBLE,
    ITER_LIMIT,
    NUMERIC_FAILURE,
    OPTIMAL,
    QcpSolution,
    SolverSettings,
    kkt_report,
    solve,
)
from .network import (
    Bus,
    CaseError,
    CaseSemanticError,
    CaseSyntaxError,
    FlexUnit,
    Generator,
    Line,
    NetworkCase,
    line_admittance,
    parse_case,
    serialize_case,
    validate_case,
)
from .oracle import (
    PowerFlowResult,
    VerificationReport,
    ac_power_flow,
    backward_forward_sweep,
    batch_power_flow,
    verify_point,
)
from .topology import (
    Configuration,
    EnumerationError,
    effective_topology,
    enumerate_configurations,
    is_connected,
    normal_configuration,
)

__version__ = "0.1.0"
