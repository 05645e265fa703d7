"""Truncated p-energy minimization on rectangles and checks of its limit behaviour."""
from .analysis import (
    CheckReport,
    EquationKind,
    NodeDerivatives,
    StencilError,
    amle_check,
    comparison_check,
    dead_core,
    holder_check,
    max_residual,
    node_derivatives,
    residual,
    sandwich_check,
    stability_gap,
)
from .energy import (
    ConfigError,
    EnergyParams,
    convexity_gap,
    density,
    energy_gradient,
    phi_ab,
    total_energy,
)
from .harness import (
    SweepConfig,
    SweepTable,
    diagram_commutation,
    export,
    gamma_check,
    load_config,
    parse_config,
    run_sweep,
    stability_rate_fit,
)
from .mesh import (
    Mesh,
    MeshError,
    ScalarField,
    build_mesh,
    element_gradient,
    geometry_stats,
    read_field,
    write_field,
)
from .solver import (
    SolveOptions,
    SolveReport,
    continuation_solve,
    optimality_residual,
    solve_dirichlet,
)

__version__ = "0.1.0"
