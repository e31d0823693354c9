"""Physical constants in the unit system used throughout (nm, meV, s)."""

from scipy import constants as _c

HBAR_J_S = _c.hbar
HBAR_MEV_S = _c.hbar / _c.e * 1e3
AMU_KG = _c.atomic_mass

HELIUM4_MASS_U = 4.002602

# typical He / SiN_x value
C3_HELIUM_SINX = 0.1  # meV nm^3


def wavenumber(mass_u, speed):
    """|p|/hbar in nm^-1 for a particle of ``mass_u`` (u) at ``speed`` (m/s)."""
    return mass_u * AMU_KG * speed / HBAR_J_S * 1e-9


def speed_from_wavenumber(mass_u, k):
    return k * 1e9 * HBAR_J_S / (mass_u * AMU_KG)
