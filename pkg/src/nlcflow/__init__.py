"""Pseudo-spectral simulation and harmonic-analysis checks for the simplified
Ericksen-Leslie nematic liquid crystal system."""

__version__ = "0.1.0"

from .grid import Grid, SpectralField, FieldError  # noqa: E402
from .littlewood_paley import BesovIndex, DyadicPartition, build_partition, besov_norm  # noqa: E402
from .solver import SolverConfig, SolverState  # noqa: E402

__all__ = [
    "Grid", "SpectralField", "FieldError", "BesovIndex", "DyadicPartition",
    "build_partition", "besov_norm", "SolverConfig", "SolverState", "__version__",
]
