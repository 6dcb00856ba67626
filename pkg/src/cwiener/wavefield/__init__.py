from .catalog import (
    CATALOG,
    CatalogState,
    analytic_state,
    diffusion_residual,
    discrete_eigenstates,
    residual_certificate,
    superpose,
)
from .crank_nicolson import evolve_crank_nicolson, well_posed_direction
from .fields import DensityField, GridSpec, PotentialSet, WaveField, harmonic_potential
from .klein_gordon import (
    KGModes,
    KGSpectral,
    evolve_kg_spectral,
    gaussian_packet_modes,
    mass_shell_frequency,
    relativistic_drift,
    shell_residual,
)
from .moments import operator_moments

__all__ = [
    "CATALOG",
    "CatalogState",
    "DensityField",
    "GridSpec",
    "KGModes",
    "KGSpectral",
    "PotentialSet",
    "WaveField",
    "analytic_state",
    "diffusion_residual",
    "discrete_eigenstates",
    "evolve_crank_nicolson",
    "evolve_kg_spectral",
    "gaussian_packet_modes",
    "harmonic_potential",
    "mass_shell_frequency",
    "operator_moments",
    "relativistic_drift",
    "residual_certificate",
    "shell_residual",
    "superpose",
    "well_posed_direction",
]
