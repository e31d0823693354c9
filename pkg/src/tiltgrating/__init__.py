"""Matter-wave diffraction of atoms and weakly bound trimers from a tilted
deep transmission grating, with inversion of patterns to slit widths and
trimer bond lengths."""

from .errors import (
    ConfigError,
    DomainError,
    GeometrySingularity,
    NumericalFailure,
    ShadowingError,
    ValidityError,
)
from .geometry import (
    Beam,
    GratingGeometry,
    Kinematics,
    SlitFrame,
    asymmetry_expansion,
    derive_slit_frame,
    diffraction_angles,
    projected_ratios,
    shadow_line,
    slit_frame,
)
from .surface import SurfacePotentialParams, TransmissionProfile, phase_function, transmission_atom

__version__ = "0.1.0"

__all__ = [
    "Beam",
    "ConfigError",
    "DomainError",
    "GeometrySingularity",
    "GratingGeometry",
    "Kinematics",
    "NumericalFailure",
    "ShadowingError",
    "SlitFrame",
    "SurfacePotentialParams",
    "TransmissionProfile",
    "ValidityError",
    "asymmetry_expansion",
    "derive_slit_frame",
    "diffraction_angles",
    "phase_function",
    "projected_ratios",
    "shadow_line",
    "slit_frame",
    "transmission_atom",
]
