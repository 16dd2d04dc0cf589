"""hamcheck: numerical certification of strong local optimality for smooth
optimal control problems via Hamiltonian flows from a Lagrangian graph."""

from .geometry import (
    CotangentPoint,
    HamiltonianGradient,
    TangentToCotangent,
    hamiltonian_vector_field,
    liouville_pairing,
    symplectic_form,
)
from .problem import (
    ControlSet,
    Dynamics,
    EndpointCost,
    EndpointManifold,
    OCProblem,
    RunningCost,
    SuperHamiltonianSpec,
    maximized_hamiltonian,
    pre_hamiltonian,
    reference_hamiltonian,
    super_hamiltonian,
)
from .extremal import (
    ControlArc,
    CostExtension,
    Extremal,
    ReferenceControl,
    check_constancy,
    check_maximization,
    check_transversality,
    integrate_extremal,
)
from .flowsheet import (
    FlowSheet,
    InvertibilityVerdict,
    LagrangianChart,
    check_invertibility,
    exactness_residual,
    flow_from_lambda,
)
from .verify import (
    PhiProbe,
    VerificationReport,
    check_assumption2,
    check_assumption3,
    check_mintime,
    check_theorem1,
    check_theorem2,
    phi_probe,
    phi_value,
)
from .perturb import (
    PerturbationSpec,
    Trajectory,
    corroborate_mintime,
    mintime_competitors,
    needle_family,
    path_family,
)
from .problems import get_problem, registry

__version__ = "0.1.0"

__all__ = [
    "CotangentPoint",
    "TangentToCotangent",
    "HamiltonianGradient",
    "liouville_pairing",
    "symplectic_form",
    "hamiltonian_vector_field",
    "ControlSet",
    "EndpointManifold",
    "OCProblem",
    "Dynamics",
    "RunningCost",
    "EndpointCost",
    "SuperHamiltonianSpec",
    "pre_hamiltonian",
    "maximized_hamiltonian",
    "reference_hamiltonian",
    "super_hamiltonian",
    "ControlArc",
    "ReferenceControl",
    "CostExtension",
    "Extremal",
    "integrate_extremal",
    "check_transversality",
    "check_maximization",
    "check_constancy",
    "LagrangianChart",
    "FlowSheet",
    "InvertibilityVerdict",
    "flow_from_lambda",
    "check_invertibility",
    "exactness_residual",
    "PhiProbe",
    "VerificationReport",
    "phi_probe",
    "phi_value",
    "check_assumption2",
    "check_assumption3",
    "check_theorem1",
    "check_theorem2",
    "check_mintime",
    "PerturbationSpec",
    "Trajectory",
    "needle_family",
    "path_family",
    "mintime_competitors",
    "corroborate_mintime",
    "get_problem",
    "registry",
]
