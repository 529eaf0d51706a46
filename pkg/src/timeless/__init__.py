"""Timeless transition amplitudes for reparametrization-invariant toy systems."""

from .configspace import (Configuration, KineticMetric, SymmetryGenerator, catalog_generator, chord_distance,
                          select_preferred, stabilizer_dimension)
from .dynamics import ConstrainedSystem, make_potential
from .errors import TimelessError
from .expr import parse_expression
from .semiclassical import ShootingConfig, find_extremals
from .spectral import GridHilbert, SpectralWindow, build_hamiltonian, projector_amplitude

__version__ = "0.1.0"

__all__ = [
    "Configuration", "KineticMetric", "SymmetryGenerator", "catalog_generator", "chord_distance",
    "select_preferred", "stabilizer_dimension", "ConstrainedSystem", "make_potential", "TimelessError",
    "parse_expression", "ShootingConfig", "find_extremals", "GridHilbert", "SpectralWindow",
    "build_hamiltonian", "projector_amplitude",
]
