"""pmcf: a phase-field toolkit for inhomogeneous interface problems on flat tori.

Sub-modules: ``grid`` (periodic fields and operators), ``well`` (double-well
potentials), ``profiles`` (1-d transition profiles), ``functionals``
(energies and spectra), ``flows`` (relaxation and valley states), ``minmax``
(mountain-pass search), ``recovery`` (doubled-interface constructions),
``diagnostics`` (interface geometry and multiplicity), ``runner``
(configs and orchestration).
"""

from .errors import (
    ConfigError,
    ConstructionError,
    FieldFormatError,
    GridMismatchError,
    InputError,
    NumericError,
    PmcfError,
    SearchError,
)
from .grid import ScalarField, TorusGrid, load_field, save_field
from .well import WellSpec, sigma_constant

__all__ = [
    "ConfigError",
    "ConstructionError",
    "FieldFormatError",
    "GridMismatchError",
    "InputError",
    "NumericError",
    "PmcfError",
    "ScalarField",
    "SearchError",
    "TorusGrid",
    "WellSpec",
    "load_field",
    "save_field",
    "sigma_constant",
]
