"""Ghost-point finite-difference solver for marble sulfation on implicit domains."""

from .geometry import (
    CartesianGrid,
    LevelSetField,
    DomainClassification,
    GhostClosure,
    ProblemGeometry,
    classify,
    node_normal,
    project_to_boundary,
    image_to_levelset,
    reinitialize,
)
from .discretization import (
    ModelParams,
    State,
    JacobianBlocks,
    residual,
    assemble_jacobian,
    extrapolate_initial_data,
)
from .multigrid import CycleConfig, MultigridSolver, w_cycle
from .newton import NewtonTrace, step, march
from .harness import (
    ManufacturedCase,
    ErrorReport,
    RhoTrace,
    manufactured_case,
    run_accuracy,
    run_efficiency,
    run_geometry,
)
from .fields_io import write_field, read_field

__version__ = "0.1.0"
