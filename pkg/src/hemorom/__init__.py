"""Hybrid POD-Galerkin reduced-order model for incompressible channel flow
with a three-element Windkessel outflow and a neural-network surrogate for
the outlet pressure."""

from .config import Config, load_config, parse_config
from .errors import (
    BundleError,
    ConfigError,
    ConvergenceError,
    FieldShapeError,
    HemoromError,
    NumericalError,
    RankError,
)
from .fom import ChannelFlowSolver, SnapshotDatabase, run_fom
from .lifting import Lifting, homogenize
from .mesh import StructuredMesh
from .nn import OutflowRegressor
from .pod import POD
from .rom import GalerkinROM

__version__ = "0.1.0"

__all__ = [
    "Config",
    "load_config",
    "parse_config",
    "BundleError",
    "ConfigError",
    "ConvergenceError",
    "FieldShapeError",
    "HemoromError",
    "NumericalError",
    "RankError",
    "ChannelFlowSolver",
    "SnapshotDatabase",
    "run_fom",
    "Lifting",
    "homogenize",
    "StructuredMesh",
    "OutflowRegressor",
    "POD",
    "GalerkinROM",
]
