"""Abelian sandpile stabilization, lattice potentials and scaling diagnostics."""
from .analysis import (
    ConvergenceReport,
    ConvergenceStudy,
    TestFunction,
    measured_radius,
    pair,
    run_convergence_study,
    wbar_field,
)
from .exceptions import (
    BoxMismatch,
    CapacityExceeded,
    CropOutOfBounds,
    InvariantViolation,
    NoConvergence,
    NotStabilizing,
    OutOfBounds,
    SandpileError,
    SingularBoundary,
    SingularPoint,
    SupportEscape,
)
from .green import (
    FundamentalSolution,
    GreenProblem,
    barrier_bounds,
    continuum_phi,
    solve_phi_n,
)
from .lattice import (
    ChipGrid,
    LatticeBox,
    Odometer,
    RealField,
    discrete_laplacian,
    lattice_boundary,
    nn_interpolate,
    rescale_chips,
    rescale_odometer,
)
from .leastaction import (
    CandidateOdometer,
    check_least_action,
    is_stabilizing,
    permutation_audit,
    stabilizing_candidates,
)
from .render import Palette, render_png
from .stabilizer import (
    SandpileStabilizer,
    StabilizeResult,
    Strategy,
    random_legal_run,
    stabilize,
    stabilize_point_pile,
)

__version__ = "0.1.0"
