"""Delayed-NIR dissociation probe: density matrix -> beta maps.

The probe is an instantaneous projector.  Each level v feeds a Gaussian
fragment-velocity channel K_v(x) (detector pixel units) with coupling d_v;
cross terms between levels use the geometric-mean kernel
K_vv'(x) = sqrt(K_v K_v').  With w_v(x, tau) = d_v sqrt(K_v(x)) exp(-i 2 pi c
E_v tau) the isotropic signal is the quadratic form

    beta0(x, tau) = conj(w)^T rho w
                  = sum_v rho_vv d_v^2 K_v(x)
                    + 2 sum_{v<v'} d_v d_v' |rho_vv'| K_vv'(x)
                      * cos(2 pi c dE_vv' tau + arg rho_vv'),

non-negative by positive semidefiniteness of rho.  beta2/beta4 are base
profiles multiplied by the same normalized beat modulation, which puts the
identical beat frequencies in all three observables.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_legendre

from .constants import C_CM_FS
from .molecule import VibrationalLevels
from .quantum import IonDensityMatrix

__all__ = [
    "ProbeKernel",
    "BetaScan",
    "NormalizationBand",
    "default_kernel",
    "simulate_beta0",
    "beta0_baseline",
    "simulate_scan",
    "write_scan_csv",
    "momentum_distribution",
]


@dataclass(frozen=True)
class ProbeKernel:
    """Per-level Gaussian velocity channels on the detector radius axis."""

    centers: np.ndarray  # mu_v, pixels, monotone in v
    widths: np.ndarray   # s_v, pixels, > 0

    def __post_init__(self):
        mu = np.array(self.centers, dtype=float)
        s = np.array(self.widths, dtype=float)
        if mu.shape != s.shape or mu.ndim != 1:
            raise ValueError("centers and widths must be 1-D and equal length")
        if np.any(np.diff(mu) <= 0):
            raise ValueError("kernel centers must increase with v")
        if np.any(s <= 0):
            raise ValueError("kernel widths must be positive")
        mu.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "centers", mu)
        object.__setattr__(self, "widths", s)

    def __len__(self):
        return len(self.centers)

    def evaluate(self, x) -> np.ndarray:
        """K_v(x), shape (n_levels, n_x)."""
        xx = np.asarray(x, dtype=float)
        return np.exp(
            -((xx[None, :] - self.centers[:, None]) ** 2)
            / (2.0 * self.widths[:, None] ** 2)
        )


def default_kernel(levels: VibrationalLevels, first_center: float = 58.0,
                   spacing: float = 6.0, width: float = 8.0) -> ProbeKernel:
    """Channels spaced ``spacing`` px starting at ``first_center``, width 8 px."""
    n = len(levels)
    return ProbeKernel(
        centers=first_center + spacing * np.arange(n),
        widths=np.full(n, width),
    )


@dataclass(frozen=True)
class BetaScan:
    """beta0/beta2/beta4 over (fragment-velocity pixel, pump-probe delay)."""

    tau_xx: float
    tau_ni_grid: np.ndarray
    v_grid: np.ndarray
    beta0: np.ndarray
    beta2: np.ndarray
    beta4: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tau_ni_grid, dtype=float)
        x = np.asarray(self.v_grid, dtype=float)
        object.__setattr__(self, "tau_ni_grid", t)
        object.__setattr__(self, "v_grid", x)
        shape = (len(x), len(t))
        for name in ("beta0", "beta2", "beta4"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape (n_v, n_tau) = {shape}")
            object.__setattr__(self, name, arr)
        for g in (t, x):
            if len(g) > 1:
                steps = np.diff(g)
                if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * abs(steps[0]):
                    raise ValueError("grids must be uniform and increasing")
        if np.any(self.beta0 < -1e-12 * max(self.beta0.max(), 1e-300)):
            raise ValueError("beta0 must be non-negative")
        if self.beta2.min() < -1.0 - 1e-9 or self.beta2.max() > 2.0 + 1e-9:
            raise ValueError("beta2 out of the physical range [-1, 2]")

    def order(self, name: str) -> np.ndarray:
        return {"beta0": self.beta0, "beta2": self.beta2, "beta4": self.beta4}[name]


def _beat_signal(dm: IonDensityMatrix, kernel: ProbeKernel, x, tau):
    """Quadratic-form beta0 on (x, tau) grids, guaranteed >= 0 for PSD rho."""
    levels = dm.levels
    if len(kernel) != len(levels):
        raise ValueError(
            f"kernel has {len(kernel)} channels for {len(levels)} levels"
        )
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    sqrt_k = np.sqrt(kernel.evaluate(x))              # (V, X)
    d = levels.probe_weights
    phase = np.exp(-2j * np.pi * C_CM_FS * np.outer(levels.energy, tau))  # (V, T)
    w = d[:, None] * phase                            # (V, T)
    core = np.einsum("vt,vw,wt->vwt", w.conj(), dm.rho, w).real   # (V, V, T)
    sig = np.einsum("vx,wx,vwt->xt", sqrt_k, sqrt_k, core)
    floor = -1e-10 * max(sig.max(), 1e-300)
    if sig.min() < floor:
        raise ValueError(f"negative beat signal {sig.min():.3e}: rho not PSD?")
    return np.clip(sig, 0.0, None)


def simulate_beta0(dm: IonDensityMatrix, kernel: ProbeKernel, tau_ni_grid,
                   v_grid) -> np.ndarray:
    """Isotropic beat signal beta0(x, tau_NIR), shape (n_x, n_tau)."""
    return _beat_signal(dm, kernel, v_grid, tau_ni_grid)


def beta0_baseline(dm: IonDensityMatrix, kernel: ProbeKernel, v_grid) -> np.ndarray:
    """Infinite-horizon pump-probe average of beta0: the population term.

    The oscillatory cross terms average to zero over an unbounded delay
    range, leaving sum_v rho_vv d_v^2 K_v(x), which inherits the two-pulse
    delay independence of the populations.
    """
    x = np.asarray(v_grid, dtype=float)
    k = kernel.evaluate(x)
    d2 = dm.levels.probe_weights**2
    pops = np.real(np.diag(dm.rho))
    return (pops * d2) @ k


@dataclass(frozen=True)
class NormalizationBand:
    """Static low-momentum channel used to normalize out source flux."""

    center: float = 25.0
    width: float = 8.0
    amplitude: float = 1.0

    def evaluate(self, x):
        xx = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(-((xx - self.center) ** 2) / (2.0 * self.width**2))


def simulate_scan(
    dm: IonDensityMatrix,
    kernel: ProbeKernel,
    tau_ni_grid,
    beta2_profile,
    beta4_profile,
    v_grid,
    norm_band: NormalizationBand | None = None,
    tau_xx: float = float("nan"),
) -> BetaScan:
    """Full BetaScan: beat-modulated beta0 plus anisotropy maps.

    ``beta2_profile``/``beta4_profile`` are arrays over ``v_grid`` (or
    scalars); they are multiplied by the beat modulation m(x, tau) =
    beta0_beat / mean_tau(beta0_beat), so all three observables oscillate at
    the same beat frequencies.  A static low-momentum band is added to beta0
    for downstream flux normalization.
    """
    x = np.asarray(v_grid, dtype=float)
    tau = np.asarray(tau_ni_grid, dtype=float)
    b2 = np.broadcast_to(np.asarray(beta2_profile, dtype=float), x.shape).copy()
    b4 = np.broadcast_to(np.asarray(beta4_profile, dtype=float), x.shape).copy()

    beat = _beat_signal(dm, kernel, x, tau)
    mean = beat.mean(axis=1)
    tiny = 1e-12 * max(mean.max(), 1e-300)
    mod = np.where(mean[:, None] > tiny, beat / np.maximum(mean[:, None], tiny), 1.0)

    beta2 = b2[:, None] * mod
    beta4 = b4[:, None] * mod
    out_of_range = (beta2 < -1.0 - 1e-9) | (beta2 > 2.0 + 1e-9)
    if np.any(out_of_range):
        warnings.warn(
            f"clipping {out_of_range.sum()} beta2 samples into [-1, 2]",
            RuntimeWarning,
            stacklevel=2,
        )
        beta2 = np.clip(beta2, -1.0, 2.0)

    beta0 = beat
    if norm_band is not None:
        beta0 = beta0 + norm_band.evaluate(x)[:, None]
    return BetaScan(
        tau_xx=float(tau_xx),
        tau_ni_grid=tau,
        v_grid=x,
        beta0=beta0,
        beta2=beta2,
        beta4=beta4,
    )


def write_scan_csv(scan: BetaScan, directory, prefix: str = "betascan",
                   kernel: ProbeKernel | None = None):
    """Persist a BetaScan: one CSV matrix per beta order plus a JSON manifest."""
    import os

    from .fileio import write_json, write_matrix_csv

    os.makedirs(directory, exist_ok=True)
    paths = []
    for order in ("beta0", "beta2", "beta4"):
        path = os.path.join(directory, f"{prefix}_{order}.csv")
        write_matrix_csv(path, "v_px/tau_nir_fs", scan.v_grid,
                         scan.tau_ni_grid, scan.order(order))
        paths.append(path)
    manifest = {
        "tau_xx_fs": None if np.isnan(scan.tau_xx) else scan.tau_xx,
        "tau_nir_fs": scan.tau_ni_grid.tolist(),
        "v_grid_px": scan.v_grid.tolist(),
        "files": [os.path.basename(p) for p in paths],
    }
    if kernel is not None:
        manifest["kernel"] = {
            "centers_px": kernel.centers.tolist(),
            "widths_px": kernel.widths.tolist(),
        }
    mpath = os.path.join(directory, f"{prefix}_manifest.json")
    write_json(mpath, manifest)
    return paths + [mpath]


def momentum_distribution(scan: BetaScan, x: float, tau: float):
    """Angular distribution theta -> beta0*(1 + beta2 P2 + beta4 P4) at (x, tau).

    (x, tau) must lie on the scan grids.  Negative values from extreme beta
    combinations are clipped to zero with a warning.
    """
    ix = np.nonzero(np.isclose(scan.v_grid, x, rtol=0, atol=1e-9))[0]
    it = np.nonzero(np.isclose(scan.tau_ni_grid, tau, rtol=0, atol=1e-9))[0]
    if len(ix) != 1 or len(it) != 1:
        raise KeyError(f"({x}, {tau}) is not on the scan grids")
    b0 = scan.beta0[ix[0], it[0]]
    b2 = scan.beta2[ix[0], it[0]]
    b4 = scan.beta4[ix[0], it[0]]

    def dist(theta):
        u = np.cos(np.asarray(theta, dtype=float))
        val = b0 * (1.0 + b2 * eval_legendre(2, u) + b4 * eval_legendre(4, u))
        if np.any(val < -1e-12 * max(abs(b0), 1e-300)):
            warnings.warn("negative angular distribution clipped to 0", RuntimeWarning)
        return np.clip(val, 0.0, None)

    return dist
