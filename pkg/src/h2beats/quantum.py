"""Joint ion + photoelectron state and the reduced ionic density matrix.

Ionization by the pulse pair populates vibrational level v together with a
photoelectron of energy eps, with amplitude

    psi_{v,eps} = sqrt(p_v) * F0(w) * cos(pi * c * w * tau_xx),
    w = ip_ref + E_v + eps,

i.e. the two-pulse comb evaluated at the total photon energy.  Tracing out
the photoelectron gives the ionic density matrix

    rho_{vv'} = integral deps psi_{v,eps} * conj(psi_{v',eps})

whose off-diagonal magnitude carries the slowly varying envelope
|cos(pi * c * dE_{vv'} * tau_xx)|: full vibrational coherence at delays
tau = n/(c*dE) and none (maximal ion-photoelectron entanglement) at
tau = (2n+1)/(2*c*dE).  The sqrt(p_v) weighting makes populations
configurable and reduces to the uniform-amplitude form for equal p_v.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import C_CM_FS
from .errors import NumericsError
from .molecule import VibrationalLevels, beat_energy
from .optics import PulsePair

__all__ = [
    "GridSpec",
    "JointState",
    "IonDensityMatrix",
    "CoherenceScan",
    "build_joint_state",
    "reduce_to_ion",
    "coherence",
    "purity",
    "entropy",
    "coherence_scan",
    "locate_coherence_zeros",
]


@dataclass(frozen=True)
class GridSpec:
    """Photoelectron energy grid: half-width in pulse sigmas and sampling.

    ``n_sigma`` must give amplitude tails below the 1e-8 cutoff
    (exp(-n^2/2) < 1e-8 needs n > 6.07); ``points_per_fringe`` samples the
    fastest spectral cosine at the configured delay.
    """

    n_sigma: float = 6.5
    points_per_fringe: int = 16
    min_points: int = 512

    def __post_init__(self):
        if self.n_sigma < 6.1:
            raise ValueError("n_sigma < 6.1 violates the 1e-8 amplitude-tail criterion")
        if self.points_per_fringe < 4:
            raise ValueError("points_per_fringe must be >= 4")


@dataclass(frozen=True)
class JointState:
    """psi_{v,eps} on a uniform photoelectron-energy grid (cm^-1)."""

    eps_grid: np.ndarray
    amps: np.ndarray  # complex, shape (n_levels, n_eps)
    ip_ref: float
    levels: VibrationalLevels

    def __post_init__(self):
        if self.amps.shape != (len(self.levels), len(self.eps_grid)):
            raise ValueError("amps shape must be (n_levels, n_eps)")


class GridTooNarrowError(NumericsError):
    """Photoelectron grid does not contain the spectral amplitude tails."""


def build_joint_state(
    levels: VibrationalLevels,
    pulse: PulsePair,
    grid: GridSpec | None = None,
    ip_ref: float = 0.0,
) -> JointState:
    """Evaluate psi_{v,eps} for every level on a shared energy grid.

    The grid spans ``pulse.center - ip_ref - E_v`` +/- ``n_sigma*sigma`` for
    all levels and samples at least ``points_per_fringe`` points per spectral
    fringe period 1/(c*tau_xx).  Raises GridTooNarrowError if the amplitude
    at either grid end exceeds 1e-8 of its maximum.
    """
    grid = grid or GridSpec()
    e = levels.energy
    lo = pulse.center - ip_ref - e.max() - grid.n_sigma * pulse.sigma
    hi = pulse.center - ip_ref - e.min() + grid.n_sigma * pulse.sigma
    d_eps = pulse.sigma / 8.0
    if pulse.tau_xx > 0:
        d_eps = min(d_eps, 1.0 / (grid.points_per_fringe * C_CM_FS * pulse.tau_xx))
    n = max(int(np.ceil((hi - lo) / d_eps)) + 1, grid.min_points)
    eps = np.linspace(lo, hi, n)

    omega = ip_ref + e[:, None] + eps[None, :]
    amps = (
        np.sqrt(levels.populations)[:, None]
        * pulse.single_pulse(omega)
        * np.cos(np.pi * C_CM_FS * omega * pulse.tau_xx)
    ).astype(complex)

    peak = np.abs(amps).max()
    edge = max(np.abs(amps[:, 0]).max(), np.abs(amps[:, -1]).max())
    if peak == 0.0:
        raise NumericsError("joint state is identically zero")
    if edge > 1e-8 * peak:
        raise GridTooNarrowError(
            f"amplitude at grid edge is {edge / peak:.2e} of the maximum (limit 1e-8); "
            "widen GridSpec.n_sigma"
        )
    return JointState(eps_grid=eps, amps=amps, ip_ref=ip_ref, levels=levels)


@dataclass(frozen=True)
class IonDensityMatrix:
    """Trace-normalized ionic density matrix over the level set."""

    rho: np.ndarray
    levels: VibrationalLevels

    def __post_init__(self):
        r = np.asarray(self.rho, dtype=complex)
        if r.shape != (len(self.levels), len(self.levels)):
            raise ValueError("rho must be square over the level set")
        scale = max(np.abs(r).max(), 1e-300)
        if np.abs(r - r.conj().T).max() > 1e-12 * scale:
            raise ValueError("rho is not Hermitian within 1e-12")
        if abs(np.trace(r).real - 1.0) > 1e-9:
            raise ValueError(f"rho must be trace-normalized, trace={np.trace(r)!r}")
        ev = np.linalg.eigvalsh((r + r.conj().T) / 2.0)
        if ev.min() < -1e-10:
            raise ValueError(f"rho is not positive semidefinite: min eigenvalue {ev.min():.3e}")
        object.__setattr__(self, "rho", r)

    def element(self, v: int, v_other: int) -> complex:
        return complex(self.rho[self.levels.index(v), self.levels.index(v_other)])


def reduce_to_ion(state: JointState) -> IonDensityMatrix:
    """Trace out the photoelectron: rho_{vv'} = integral psi_v conj(psi_v').

    Trapezoid quadrature on the shared uniform grid, followed by trace
    normalization.
    """
    psi = state.amps
    inner = psi @ psi.conj().T
    # trapezoid rule = full sum minus half the endpoint contributions
    ends = 0.5 * (
        psi[:, :1] @ psi[:, :1].conj().T + psi[:, -1:] @ psi[:, -1:].conj().T
    )
    d_eps = state.eps_grid[1] - state.eps_grid[0]
    rho = (inner - ends) * d_eps
    tr = np.trace(rho).real
    if tr <= 0:
        raise NumericsError("zero-trace reduction: degenerate joint state")
    rho = rho / tr
    rho = (rho + rho.conj().T) / 2.0
    return IonDensityMatrix(rho=rho, levels=state.levels)


def coherence(dm: IonDensityMatrix, v: int, v_other: int) -> float:
    """Normalized coherence g = |rho_vv'| / sqrt(rho_vv rho_v'v') in [0, 1]."""
    i, j = dm.levels.index(v), dm.levels.index(v_other)
    dvv, dww = dm.rho[i, i].real, dm.rho[j, j].real
    if dvv <= 0 or dww <= 0:
        raise ValueError(f"zero diagonal for pair ({v},{v_other})")
    return float(abs(dm.rho[i, j]) / np.sqrt(dvv * dww))


def purity(dm: IonDensityMatrix) -> float:
    """Tr(rho^2), 1 for a pure state, 1/N for the maximal mixture."""
    return float(np.real(np.trace(dm.rho @ dm.rho)))


def entropy(dm: IonDensityMatrix) -> float:
    """Von Neumann entropy -sum(lam ln lam) in nats, with 0 ln 0 = 0."""
    ev = np.linalg.eigvalsh(dm.rho)
    if ev.min() < -1e-10:
        raise NumericsError(f"non-PSD density matrix: min eigenvalue {ev.min():.3e}")
    ev = np.clip(ev, 0.0, None)
    nz = ev[ev > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class CoherenceScan:
    """g, purity and entropy versus two-pulse delay."""

    tau_fs: np.ndarray
    pairs: tuple
    g: np.ndarray        # (n_tau, n_pairs)
    purity: np.ndarray   # (n_tau,)
    entropy: np.ndarray  # (n_tau,)
    levels: VibrationalLevels = field(repr=False)

    def column_names(self):
        return (
            ["tau_fs"]
            + [f"g_{a}_{b}" for a, b in self.pairs]
            + ["purity", "entropy_nats"]
        )

    def rows(self):
        for i, tau in enumerate(self.tau_fs):
            yield [tau, *self.g[i], self.purity[i], self.entropy[i]]


def _dm_at(levels, pulse, tau, grid, ip_ref):
    return reduce_to_ion(build_joint_state(levels, pulse.with_delay(float(tau)), grid, ip_ref))


def coherence_scan(
    levels: VibrationalLevels,
    pulse: PulsePair,
    tau_list,
    pairs: Sequence[tuple] | None = None,
    grid: GridSpec | None = None,
    ip_ref: float = 0.0,
    workers: int = 1,
) -> CoherenceScan:
    """Sweep the two-pulse delay and tabulate coherences, purity and entropy.

    ``pulse`` serves as a template whose delay is replaced by each entry of
    ``tau_list``; ``pairs`` defaults to all nearest-neighbor pairs.  Delays
    are independent, so they may be evaluated by a thread pool
    (``workers > 1``); results are assembled in input order either way.
    """
    taus = np.asarray(tau_list, dtype=float)
    if taus.size == 0:
        raise ValueError("tau_list must be non-empty")
    if np.any(taus < 0):
        raise ValueError("delays must be >= 0")
    if pairs is None:
        pairs = [(int(a), int(b)) for a, b in zip(levels.v[:-1], levels.v[1:])]
    pairs = tuple((int(a), int(b)) for a, b in pairs)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            dms = list(pool.map(lambda t: _dm_at(levels, pulse, t, grid, ip_ref), taus))
    else:
        dms = [_dm_at(levels, pulse, t, grid, ip_ref) for t in taus]

    g = np.array([[coherence(dm, a, b) for a, b in pairs] for dm in dms])
    pur = np.array([purity(dm) for dm in dms])
    ent = np.array([entropy(dm) for dm in dms])
    return CoherenceScan(
        tau_fs=taus, pairs=pairs, g=g, purity=pur, entropy=ent, levels=levels
    )


def locate_coherence_zeros(
    levels: VibrationalLevels,
    pulse: PulsePair,
    pair: tuple,
    tau_max: float,
    coarse_step: float = 0.5,
    grid: GridSpec | None = None,
    ip_ref: float = 0.0,
) -> np.ndarray:
    """Delays in (0, tau_max] where the pair coherence vanishes.

    Scans a coarse delay grid, brackets the local minima of g and refines
    each with a bounded scalar minimization of the actual reduction.
    """
    a, b = pair
    d_e = beat_energy(levels, a, b)
    if d_e <= 0:
        return np.array([])
    taus = np.arange(coarse_step, tau_max + coarse_step / 2, coarse_step)
    gs = np.array([coherence(_dm_at(levels, pulse, t, grid, ip_ref), a, b) for t in taus])

    def g_of(t):
        return coherence(_dm_at(levels, pulse, t, grid, ip_ref), a, b)

    zeros = []
    for i in range(1, len(taus) - 1):
        if gs[i] < gs[i - 1] and gs[i] <= gs[i + 1] and gs[i] < 0.2:
            res = minimize_scalar(
                g_of, bounds=(taus[i - 1], taus[i + 1]), method="bounded",
                options={"xatol": 1e-4},
            )
            if res.fun < 1e-2:
                zeros.append(float(res.x))
    return np.array(zeros)
