"""Interferometer delay stabilization: tilt fringes, phase extraction, PID.

A wedge in one interferometer arm tilts the reference beam, producing a
spatial carrier k_c (cycles/pixel) along the rows of the camera frame; arm
length changes shift the fringe phase.  The phase is recovered per frame by
the FFT-sideband method: row FFT, keep the positive band around the carrier,
inverse transform and take the argument of the carrier-demodulated analytic
signal, coherently averaged over the frame.  A PID controller drives an
ideal delay actuator (integrator with one-step latency) to cancel the drift;
the residual delay is reported in attoseconds.

At the 473 nm metrology wavelength 1 rad of fringe phase corresponds to
lambda/(2 pi c) = 251 as of delay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import C_M_S
from .errors import NumericsError

__all__ = [
    "FringeFrame",
    "PIDState",
    "DriftModel",
    "StabRun",
    "DEFAULT_WAVELENGTH_M",
    "rad_per_as",
    "noise_for_snr_db",
    "make_frame",
    "takeda_phase",
    "run_loop",
    "tune_gains",
]

DEFAULT_WAVELENGTH_M = 473e-9


def rad_per_as(wavelength_m: float = DEFAULT_WAVELENGTH_M) -> float:
    """Fringe phase per attosecond of delay: 2 pi c dt / lambda."""
    return 2.0 * np.pi * C_M_S * 1e-18 / wavelength_m


def noise_for_snr_db(snr_db: float, i0: float = 1.0, contrast: float = 1.0) -> float:
    """Additive-noise standard deviation for a given fringe-amplitude SNR."""
    return i0 * contrast / 10.0 ** (snr_db / 20.0)


@dataclass(frozen=True)
class FringeFrame:
    """One camera frame of tilt fringes with known ground truth."""

    intensity: np.ndarray
    k_c: float            # carrier, cycles/pixel, in (0, 0.5)
    phi_true: float       # rad
    noise_level: float

    def __post_init__(self):
        if not (0.0 < self.k_c < 0.5):
            raise ValueError(f"carrier must be in (0, 0.5) cycles/px, got {self.k_c}")
        if np.any(self.intensity < 0):
            raise ValueError("intensities must be >= 0")


def make_frame(
    k_c: float,
    phi: float,
    contrast: float = 1.0,
    noise: float = 0.0,
    shape=(64, 512),
    i0: float = 1.0,
    rng: np.random.Generator | None = None,
) -> FringeFrame:
    """I(x, y) = i0 [1 + contrast cos(2 pi k_c x + phi)] + Gaussian noise.

    Negative values after adding noise are clipped at zero, as a real camera
    would.
    """
    h, w = shape
    x = np.arange(w, dtype=float)
    row = i0 * (1.0 + contrast * np.cos(2.0 * np.pi * k_c * x + phi))
    img = np.tile(row, (h, 1))
    if noise > 0:
        rng = rng or np.random.default_rng()
        img = img + rng.normal(0.0, noise, size=img.shape)
    img = np.clip(img, 0.0, None)
    return FringeFrame(intensity=img, k_c=float(k_c), phi_true=float(phi), noise_level=float(noise))


def takeda_phase(frame: FringeFrame) -> float:
    """Carrier phase of a fringe frame, wrapped to (-pi, pi].

    Row FFT, positive sideband in (k_c/2, 3 k_c/2) retained, inverse
    transform, demodulate by the carrier and take the argument of the
    coherent sum over all pixels (an amplitude-weighted circular mean).
    Requires at least 8 carrier cycles across the frame so that the sideband
    separates from DC.
    """
    img = frame.intensity
    h, w = img.shape
    if frame.k_c * w < 8:
        raise NumericsError(
            f"carrier has {frame.k_c * w:.1f} cycles across the frame; "
            "need >= 8 to separate the sideband from DC"
        )
    spec = np.fft.fft(img, axis=1)
    freqs = np.fft.fftfreq(w)
    band = (freqs > 0.5 * frame.k_c) & (freqs < 1.5 * frame.k_c)
    if np.abs(spec[:, band]).max() <= 0:
        raise NumericsError("empty sideband: no fringe contrast")
    analytic = np.fft.ifft(np.where(band[None, :], spec, 0.0), axis=1)
    x = np.arange(w, dtype=float)
    z = (analytic * np.exp(-2j * np.pi * frame.k_c * x)[None, :]).sum()
    return float(np.angle(z))


@dataclass
class PIDState:
    """PID gains and loop state; the controller output is a delay command in as."""

    k_p: float = 0.3
    k_i: float = 0.05
    k_d: float = 0.0
    setpoint_rad: float = 0.0
    actuator_as_per_command: float = 1.0
    loop_rate_hz: float = 50.0
    integrator_limit: float = 500.0
    integrator: float = 0.0
    previous_error: float = 0.0

    def update(self, error: float) -> float:
        """One PID step on the error (as); returns the actuator command."""
        self.integrator = float(
            np.clip(self.integrator + error, -self.integrator_limit, self.integrator_limit)
        )
        derivative = error - self.previous_error
        self.previous_error = error
        return self.k_p * error + self.k_i * self.integrator + self.k_d * derivative


@dataclass(frozen=True)
class DriftModel:
    """Delay drift in as: linear + sinusoidal + random-walk components."""

    linear_as_per_s: float = 100.0
    sine_amplitude_as: float = 0.0
    sine_freq_hz: float = 1.0
    sine_phase_rad: float = 0.0
    random_walk_as_per_sqrt_s: float = 0.0

    def series(self, n_steps: int, dt_s: float, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(n_steps) * dt_s
        drift = self.linear_as_per_s * t
        if self.sine_amplitude_as:
            drift = drift + self.sine_amplitude_as * np.sin(
                2.0 * np.pi * self.sine_freq_hz * t + self.sine_phase_rad
            )
        if self.random_walk_as_per_sqrt_s:
            steps = rng.normal(0.0, self.random_walk_as_per_sqrt_s * np.sqrt(dt_s), n_steps)
            steps[0] = 0.0
            drift = drift + np.cumsum(steps)
        return drift


@dataclass(frozen=True)
class StabRun:
    """Closed-loop record: per-step truth, measurement and residual."""

    true_delay_as: np.ndarray
    measured_phase_rad: np.ndarray
    residual_as: np.ndarray
    settle_steps: int

    def rms_as(self) -> float:
        return float(np.sqrt(np.mean(self.residual_as[self.settle_steps:] ** 2)))

    def p95_as(self) -> float:
        return float(np.percentile(np.abs(self.residual_as[self.settle_steps:]), 95.0))


def run_loop(
    drift: DriftModel,
    pid: PIDState,
    n_steps: int = 10_000,
    phase_noise_rad: float = 5e-3,
    wavelength_m: float = DEFAULT_WAVELENGTH_M,
    frame_shape=(16, 256),
    carrier: float = 16.0 / 256.0,
    contrast: float = 0.8,
    pixel_noise: float = 0.0,
    rng: np.random.Generator | None = None,
    settle_steps: int = 200,
) -> StabRun:
    """Closed-loop stabilization simulation.

    Each step synthesizes a fringe frame at the true phase (drift plus
    actuator position, plus ``phase_noise_rad`` measurement-path jitter),
    extracts the phase with the FFT-sideband method, unwraps it by
    continuity against the previous step, and feeds the PID whose command
    moves the actuator on the next step (one-step latency).  The residual is
    the true delay error in as.  Raises if the residual exceeds half a
    fringe, which the continuity tracking cannot survive.
    """
    rng = rng or np.random.default_rng()
    scale = rad_per_as(wavelength_m)
    half_fringe_as = np.pi / scale
    d = drift.series(n_steps, 1.0 / pid.loop_rate_hz, rng)

    position = 0.0
    command = 0.0
    prev_unwrapped = 0.0
    true_delay = np.empty(n_steps)
    measured = np.empty(n_steps)
    residual = np.empty(n_steps)
    for k in range(n_steps):
        position += command * pid.actuator_as_per_command
        delay = d[k] + position
        phi = scale * delay + (rng.normal(0.0, phase_noise_rad) if phase_noise_rad > 0 else 0.0)
        frame = make_frame(
            carrier, phi, contrast=contrast, noise=pixel_noise,
            shape=frame_shape, rng=rng,
        )
        wrapped = takeda_phase(frame)
        unwrapped = wrapped + 2.0 * np.pi * np.round((prev_unwrapped - wrapped) / (2.0 * np.pi))
        prev_unwrapped = unwrapped
        error = pid.setpoint_rad / scale - unwrapped / scale  # as
        command = pid.update(error)
        true_delay[k] = delay
        measured[k] = wrapped
        residual[k] = delay - pid.setpoint_rad / scale
        if abs(residual[k]) > half_fringe_as:
            raise NumericsError(
                f"loop diverged at step {k}: residual {residual[k]:.1f} as exceeds "
                f"half a fringe ({half_fringe_as:.1f} as); gains k_p={pid.k_p}, "
                f"k_i={pid.k_i}, k_d={pid.k_d}"
            )
    return StabRun(
        true_delay_as=true_delay,
        measured_phase_rad=measured,
        residual_as=residual,
        settle_steps=min(settle_steps, n_steps // 10),
    )


def tune_gains(
    drift: DriftModel,
    k_p_grid=(0.2, 0.3, 0.5, 0.7),
    k_i_grid=(0.02, 0.05, 0.1, 0.2),
    k_d_grid=(0.0, 0.1),
    n_steps: int = 2000,
    seed: int = 0,
    **loop_kwargs,
) -> tuple:
    """Grid search for the gain triple minimizing steady-state rms residual."""
    best = None
    for k_p in k_p_grid:
        for k_i in k_i_grid:
            for k_d in k_d_grid:
                pid = PIDState(k_p=k_p, k_i=k_i, k_d=k_d)
                try:
                    run = run_loop(
                        drift, pid, n_steps=n_steps,
                        rng=np.random.default_rng(seed), **loop_kwargs,
                    )
                except NumericsError:
                    continue
                rms = run.rms_as()
                if best is None or rms < best[0]:
                    best = (rms, (k_p, k_i, k_d))
    if best is None:
        raise NumericsError("no stable gain combination in the search grid")
    return best[1]
