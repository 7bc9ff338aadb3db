"""Scenario configuration: one TOML file drives the whole pipeline.

Every setting has a default; a scenario file overrides any subset.  Unknown
keys are rejected so that typos fail loudly before any compute starts, and
``Scenario.validate`` constructs every module input once up front so that
module preconditions are checked early.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import molecule, optics, probe, stab
from .errors import ScenarioError

__all__ = ["Scenario", "load_scenario", "scenario_hash"]


@dataclass
class MoleculeConfig:
    omega_e: float = 2321.7
    omega_e_x_e: float = 66.2
    v_max: int = 17
    v_lo: int = 5
    v_hi: int = 11
    populations: list | None = None
    probe_weights: list | None = None


@dataclass
class PulseConfig:
    # central photon energy and offset are model inputs, not published values
    center_cm1: float = 201639.0
    intensity_fwhm_ev: float = 1.0
    sigma_cm1: float | None = None
    ip_ref_cm1: float = 124417.0


@dataclass
class DelaysConfig:
    tau_xx_start_fs: float = 11.0
    tau_xx_stop_fs: float = 102.0
    tau_xx_step_fs: float = 3.0
    tau_xx_list_fs: list | None = None
    tau_nir_start_fs: float = -50.0
    tau_nir_stop_fs: float = 800.0
    tau_nir_step_fs: float = 4.0


@dataclass
class ProbeConfig:
    first_center_px: float = 58.0
    spacing_px: float = 6.0
    width_px: float = 8.0
    beta2_base: float = 0.6
    beta4_base: float = 0.15
    norm_band_center_px: float = 25.0
    norm_band_width_px: float = 8.0
    norm_band_amplitude: float = 1.0


@dataclass
class VmiConfig:
    r_max: int = 110
    l_max: int = 6
    exposure: float = 2000.0
    enabled: bool = True
    save_images: bool = False


@dataclass
class AnalysisConfig:
    window: str = "hann"
    pad_factor: int = 4
    band_bins: int = 2
    n_scans: int = 8
    signal_noise: float = 0.05
    pairs: list = field(default_factory=lambda: [[8, 9], [7, 8], [8, 10], [7, 9]])
    figure_delays_fs: list = field(default_factory=lambda: [29.0, 45.0])


@dataclass
class StabConfig:
    loop_rate_hz: float = 50.0
    n_steps: int = 10_000
    drift_linear_as_per_s: float = 100.0
    drift_sine_amplitude_as: float = 0.0
    drift_sine_freq_hz: float = 1.0
    drift_random_walk_as_per_sqrt_s: float = 0.0
    phase_noise_rad: float = 0.005
    k_p: float = 0.3
    k_i: float = 0.05
    k_d: float = 0.0
    wavelength_nm: float = 473.0
    carrier_cycles: int = 16
    frame_rows: int = 16
    frame_cols: int = 256
    contrast: float = 0.8
    pixel_noise: float = 0.0


@dataclass
class Scenario:
    seed: int = 12345
    molecule: MoleculeConfig = field(default_factory=MoleculeConfig)
    pulse: PulseConfig = field(default_factory=PulseConfig)
    delays: DelaysConfig = field(default_factory=DelaysConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    vmi: VmiConfig = field(default_factory=VmiConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    stab: StabConfig = field(default_factory=StabConfig)

    # --- derived module inputs -------------------------------------------
    def levels(self) -> molecule.VibrationalLevels:
        m = self.molecule
        constants = molecule.MorseConstants(m.omega_e, m.omega_e_x_e, m.v_max)
        return molecule.levels_from_morse(
            constants, m.v_lo, m.v_hi,
            populations=m.populations, probe_weights=m.probe_weights,
        )

    def pulse_template(self) -> optics.PulsePair:
        p = self.pulse
        sigma = p.sigma_cm1 if p.sigma_cm1 is not None else optics.default_sigma_cm1(
            p.intensity_fwhm_ev
        )
        return optics.PulsePair(center=p.center_cm1, sigma=sigma, tau_xx=0.0)

    def tau_xx_list(self) -> np.ndarray:
        d = self.delays
        if d.tau_xx_list_fs is not None:
            taus = np.asarray(d.tau_xx_list_fs, dtype=float)
        else:
            taus = np.arange(
                d.tau_xx_start_fs, d.tau_xx_stop_fs + d.tau_xx_step_fs / 2.0,
                d.tau_xx_step_fs,
            )
        if taus.size == 0 or np.any(taus < 0):
            raise ScenarioError("two-pulse delay list must be non-empty and >= 0")
        return taus

    def tau_nir_grid(self) -> np.ndarray:
        d = self.delays
        grid = np.arange(
            d.tau_nir_start_fs, d.tau_nir_stop_fs + d.tau_nir_step_fs / 2.0,
            d.tau_nir_step_fs,
        )
        if len(grid) < 32:
            raise ScenarioError("pump-probe grid needs at least 32 samples")
        return grid

    def kernel(self) -> probe.ProbeKernel:
        return probe.default_kernel(
            self.levels(), self.probe.first_center_px,
            self.probe.spacing_px, self.probe.width_px,
        )

    def norm_band(self) -> probe.NormalizationBand:
        return probe.NormalizationBand(
            center=self.probe.norm_band_center_px,
            width=self.probe.norm_band_width_px,
            amplitude=self.probe.norm_band_amplitude,
        )

    def v_grid(self) -> np.ndarray:
        return np.arange(1.0, self.vmi.r_max + 1.0)

    def pairs(self) -> list:
        return [(int(a), int(b)) for a, b in self.analysis.pairs]

    def drift_model(self) -> stab.DriftModel:
        s = self.stab
        return stab.DriftModel(
            linear_as_per_s=s.drift_linear_as_per_s,
            sine_amplitude_as=s.drift_sine_amplitude_as,
            sine_freq_hz=s.drift_sine_freq_hz,
            random_walk_as_per_sqrt_s=s.drift_random_walk_as_per_sqrt_s,
        )

    def pid(self) -> stab.PIDState:
        s = self.stab
        return stab.PIDState(
            k_p=s.k_p, k_i=s.k_i, k_d=s.k_d, loop_rate_hz=s.loop_rate_hz
        )

    def validate(self):
        """Construct every module input once; raises ScenarioError on any problem."""
        try:
            levels = self.levels()
            self.pulse_template()
            taus = self.tau_xx_list()
            self.tau_nir_grid()
            self.kernel()
            self.norm_band()
            self.pid()
            self.drift_model()
        except (ValueError, KeyError) as exc:
            raise ScenarioError(str(exc)) from exc
        if self.vmi.r_max < 4 or self.vmi.l_max not in (0, 2, 4, 6, 8):
            raise ScenarioError(
                f"vmi requires r_max >= 4 and even l_max <= 8, got "
                f"r_max={self.vmi.r_max}, l_max={self.vmi.l_max}"
            )
        if self.vmi.enabled and self.vmi.l_max < 4:
            raise ScenarioError("imaging the beta4 maps requires vmi.l_max >= 4")
        if self.vmi.exposure <= 0:
            raise ScenarioError("vmi.exposure must be positive")
        if self.analysis.n_scans < 1:
            raise ScenarioError("analysis.n_scans must be >= 1")
        if self.analysis.signal_noise < 0:
            raise ScenarioError("analysis.signal_noise must be >= 0")
        present = {int(v) for v in levels.v}
        for a, b in self.pairs():
            if a not in present or b not in present:
                raise ScenarioError(f"pair ({a},{b}) outside the level window")
        for tau in self.analysis.figure_delays_fs:
            # figure delays snap to the nearest scanned delay downstream
            if not (taus.min() - 1e-9 <= tau <= taus.max() + 1e-9):
                raise ScenarioError(
                    f"figure delay {tau} fs is outside the scanned delay range"
                )
        if self.probe.first_center_px + self.probe.spacing_px * (len(levels) - 1) \
                + 2 * self.probe.width_px > self.vmi.r_max:
            raise ScenarioError("probe kernels extend past the image radius")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "molecule": MoleculeConfig,
    "pulse": PulseConfig,
    "delays": DelaysConfig,
    "probe": ProbeConfig,
    "vmi": VmiConfig,
    "analysis": AnalysisConfig,
    "stab": StabConfig,
}


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ScenarioError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**data)


def load_scenario(path=None, seed_override: int | None = None) -> Scenario:
    """Scenario from a TOML file (defaults when path is None), validated."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ScenarioError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"bad TOML in {path}: {exc}") from exc
    unknown = set(raw) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ScenarioError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ScenarioError(f"[{name}] must be a table")
        kwargs[name] = _build_section(cls, section, name)
    scenario = Scenario(seed=int(raw.get("seed", 12345)), **kwargs)
    if seed_override is not None:
        scenario.seed = int(seed_override)
    return scenario.validate()


def scenario_hash(scenario: Scenario) -> str:
    """SHA-256 of the canonical JSON form of the resolved configuration."""
    blob = json.dumps(scenario.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
