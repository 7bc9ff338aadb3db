"""Spectral model of a phase-locked XUV pulse pair.

The pair of identical pulses with delay ``tau_xx`` has the spectral amplitude

    F(omega) = 2 * F0(omega) * cos(pi * c * omega * tau_xx)

with ``F0`` a real, non-negative Gaussian of standard deviation ``sigma``
about ``center`` (flat spectral phase).  The intensity |F|^2 then carries
fringes with maxima spaced by 1/(c * tau_xx) in wavenumber.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .constants import C_CM_FS, CM1_PER_EV

__all__ = [
    "PulsePair",
    "default_sigma_cm1",
    "pair_amplitude",
    "fringe_spacing",
    "spectrum_intensity",
    "export_spectrum_csv",
]


def default_sigma_cm1(intensity_fwhm_ev: float = 1.0) -> float:
    """Amplitude standard deviation giving |F0|^2 the requested FWHM in eV."""
    return intensity_fwhm_ev * CM1_PER_EV / (2.0 * np.sqrt(np.log(2.0)))


@dataclass(frozen=True)
class PulsePair:
    """Two identical Gaussian pulses separated by ``tau_xx`` femtoseconds.

    Attributes
    ----------
    center : float
        Central photon energy of each pulse in cm^-1.
    sigma : float
        Standard deviation of the Gaussian spectral *amplitude* in cm^-1
        (|F0|^2 then has FWHM = 2*sqrt(ln 2)*sigma).
    tau_xx : float
        Two-pulse delay in fs, >= 0.
    amplitude_scale : float
        Peak amplitude of a single pulse.
    """

    center: float
    sigma: float
    tau_xx: float
    amplitude_scale: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (self.tau_xx >= 0 and np.isfinite(self.tau_xx)):
            raise ValueError(f"tau_xx must be >= 0, got {self.tau_xx}")
        if not np.isfinite(self.center):
            raise ValueError("center must be finite")

    def with_delay(self, tau_xx: float) -> "PulsePair":
        return PulsePair(self.center, self.sigma, tau_xx, self.amplitude_scale)

    def single_pulse(self, omega):
        """F0(omega): Gaussian amplitude of one pulse."""
        w = np.asarray(omega, dtype=float)
        return self.amplitude_scale * np.exp(-((w - self.center) ** 2) / (2.0 * self.sigma**2))


def pair_amplitude(pulse: PulsePair, omega):
    """Complex spectral amplitude 2*F0(omega)*cos(pi*c*omega*tau_xx).

    With the flat-phase convention the result is real; it is returned as
    complex for uniformity with downstream quadrature code.
    """
    w = np.asarray(omega, dtype=float)
    amp = 2.0 * pulse.single_pulse(w) * np.cos(np.pi * C_CM_FS * w * pulse.tau_xx)
    return amp.astype(complex)


def fringe_spacing(tau_xx: float) -> float:
    """Spacing of intensity-fringe maxima, 1/(c*tau_xx), in cm^-1."""
    if not tau_xx > 0:
        raise ValueError(f"fringe spacing needs tau_xx > 0, got {tau_xx}")
    return 1.0 / (C_CM_FS * tau_xx)


def spectrum_intensity(pulse: PulsePair, grid):
    """|pair amplitude|^2 evaluated on a strictly increasing wavenumber grid."""
    w = np.asarray(grid, dtype=float)
    if w.size == 0:
        raise ValueError("empty grid")
    if w.size > 1 and np.any(np.diff(w) <= 0):
        raise ValueError("grid must be strictly increasing")
    amp = pair_amplitude(pulse, w)
    return (amp.real**2 + amp.imag**2)


def export_spectrum_csv(path, pulse: PulsePair, grid):
    """Two-column CSV (omega_cm1, intensity) of the pair spectrum."""
    inten = spectrum_intensity(pulse, grid)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega_cm1", "intensity"])
        for x, y in zip(np.asarray(grid, dtype=float), inten):
            w.writerow([format(x, ".12g"), format(y, ".12g")])
