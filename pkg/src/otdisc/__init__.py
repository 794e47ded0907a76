"""Fixed-size weighted discretization of probability distributions by
entropic optimal transport."""

from .distributions import DistributionSpec, preset
from .errors import (
    CellFailures,
    ConfigError,
    ConvergenceError,
    DegenerateInputError,
    DomainError,
    InputError,
    NumericalStateError,
    OTDiscError,
    PathologicalInputError,
    SingularityError,
    UnsupportedChartError,
)
from .geometry import EuclideanBox, HemisphereChart, SwissRollStrip
from .gradient import compute_gradient
from .sgd import SgdConfig, discretize, simplex_project
from .sinkhorn import DiscreteMeasure, DualPotentials, SampleBatch, TransportPlan, sinkhorn_solve

__all__ = [
    "CellFailures", "ConfigError", "ConvergenceError", "DegenerateInputError", "DiscreteMeasure",
    "DistributionSpec", "DomainError", "DualPotentials", "EuclideanBox", "HemisphereChart", "InputError",
    "NumericalStateError", "OTDiscError", "PathologicalInputError", "SampleBatch", "SgdConfig",
    "SingularityError", "SwissRollStrip", "TransportPlan", "UnsupportedChartError", "compute_gradient",
    "discretize", "preset", "simplex_project", "sinkhorn_solve",
]
