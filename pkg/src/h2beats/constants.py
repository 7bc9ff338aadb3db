"""Unit conventions and physical constants.

Energies are wavenumbers (cm^-1), times are femtoseconds, phases are radians.
The single conversion constant is the speed of light in cm/fs, so that a level
splitting dE (cm^-1) accumulated over a delay tau (fs) gives the phase

    phase = 2 * pi * C_CM_FS * dE * tau
"""

import math

C_CM_FS = 2.99792458e-5
"""Speed of light in cm/fs: converts (cm^-1 x fs) products to cycles."""

C_M_S = 2.99792458e8
"""Speed of light in m/s (used by the interferometer-stabilization module)."""

CM1_PER_EV = 8065.543937
"""Wavenumbers per electronvolt."""

__all__ = ["C_CM_FS", "C_M_S", "CM1_PER_EV", "phase_cycles", "phase_rad"]


def phase_cycles(energy_cm1, tau_fs):
    """Optical cycles accumulated by a spectral component over a delay."""
    return C_CM_FS * energy_cm1 * tau_fs


def phase_rad(energy_cm1, tau_fs):
    """Phase in radians accumulated over a delay: 2*pi*c*E*tau."""
    return 2.0 * math.pi * C_CM_FS * energy_cm1 * tau_fs
