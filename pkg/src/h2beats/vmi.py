"""Forward and inverse Abel transforms on a radial-hat x Legendre basis.

A cylindrically symmetric 3D momentum distribution is expanded as

    P3D(v, theta) = sum_{r,l} a_{r,l} h_r(v) P_l(cos theta),

with h_r triangular (hat) functions on integer pixel radii r = 1..R_max and
even Legendre polynomials P_l up to l_max.  Projection along the line of
sight maps the coefficient vector a onto the coefficients b of the same
expansion of the 2D image, b = M a, so inversion is the matrix product
a = M^-1 b.  M depends only on (R_max, l_max).

Construction of M: for each 2D radius rho, the chord integral

    B(rho, theta2) = 2 * integral_0^inf h_r(R) P_l(cos theta2 * rho / R) dy,
    R = sqrt(rho^2 + y^2),

is re-expanded in P_l(cos theta2) through Gauss-Legendre quadrature in
cos theta2, and the chord integral is evaluated with 2-point Gauss rules on
segments split where the chord crosses integer-radius circles (the kinks of
the hat functions).

Images put the symmetry axis vertical; pixel (row, col) at distance rho from
the center has cos theta2 = (row offset)/rho.  Image-to-coefficient fits are
linear least squares on the same basis; radii below ``r_min_fit`` are
rank-deficient on a pixel grid and are zero-filled.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import eval_legendre

from .errors import NumericsError

__all__ = [
    "AbelOperator",
    "LegendreDist3D",
    "VMIImage",
    "InvertedImage",
    "build_operator",
    "project",
    "invert",
    "render_image",
    "image_to_coeffs",
    "write_pgm16",
    "read_pgm16",
]

_EVEN_L = (0, 2, 4, 6, 8)


@dataclass(frozen=True)
class LegendreDist3D:
    """Coefficients a_{r,l} on radii 1..R_max x even l, shape (n_l, R_max)."""

    a: np.ndarray
    l_values: tuple

    def __post_init__(self):
        arr = np.asarray(self.a, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != len(self.l_values):
            raise ValueError("a must have shape (n_l, R_max)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "a", arr)
        object.__setattr__(self, "l_values", tuple(int(l) for l in self.l_values))

    @property
    def r_max(self) -> int:
        return self.a.shape[1]

    @property
    def radii(self) -> np.ndarray:
        return np.arange(1, self.r_max + 1, dtype=float)

    def speed_distribution(self) -> np.ndarray:
        """P(v) = 4 pi v^2 a_{v,0} on the radius grid."""
        return 4.0 * np.pi * self.radii**2 * self.a[0]

    def energy_distribution(self, mass: float = 1.0) -> np.ndarray:
        """P(E) = (4 pi / m) v a_{v,0}; E = m v^2 / 2 in pixel units."""
        return 4.0 * np.pi / mass * self.radii * self.a[0]

    def beta_ratio(self, l: int, floor: float = 0.0) -> np.ndarray:
        """beta_l(v) = a_{v,l} / a_{v,0}, NaN where a0 <= floor."""
        i = self.l_values.index(l)
        a0 = self.a[0]
        out = np.full_like(a0, np.nan)
        ok = a0 > floor
        out[ok] = self.a[i][ok] / a0[ok]
        return out


@dataclass(frozen=True)
class VMIImage:
    """Detector image: non-negative counts with a subpixel center."""

    pixels: np.ndarray
    center: tuple
    exposure: float | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if not np.all(np.isfinite(px)) or px.min() < 0:
            raise ValueError("pixel counts must be finite and >= 0")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


def _angular_coeffs(l: int, l_prime: int, s: np.ndarray, u_nodes, u_weights, p_lp):
    """c_{l,l'}(s): coefficient of P_l'(u) in P_l(u*s), for each s."""
    pl_us = eval_legendre(l, u_nodes[None, :] * s[:, None])
    return (2 * l_prime + 1) / 2.0 * (pl_us * (u_weights * p_lp)[None, :]).sum(axis=1)


@dataclass(frozen=True)
class AbelOperator:
    """Dense forward matrix M, its inverse, and fit machinery metadata."""

    M: np.ndarray
    M_inv: np.ndarray
    r_max: int
    l_values: tuple
    condition_number: float
    r_min_fit: int = 3
    _fit_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_l(self) -> int:
        return len(self.l_values)

    def block(self, l_row: int, l_col: int) -> np.ndarray:
        """Radial submatrix mapping (r, l_col) -> (rho, l_row)."""
        i = self.l_values.index(l_row)
        j = self.l_values.index(l_col)
        R = self.r_max
        return self.M[i * R:(i + 1) * R, j * R:(j + 1) * R]


def build_operator(r_max: int, l_max: int, n_u: int = 24) -> AbelOperator:
    """Construct the forward Abel matrix and its inverse.

    Parameters
    ----------
    r_max : int
        Largest basis radius in pixels, >= 4.
    l_max : even int in {0, 2, 4, 6, 8}
        Highest Legendre order retained.
    n_u : int
        Gauss-Legendre order for the angular re-expansion integrals (exact
        for the polynomial integrands whenever n_u > l_max).
    """
    if r_max < 4:
        raise ValueError(f"r_max must be >= 4, got {r_max}")
    if l_max not in _EVEN_L:
        raise ValueError(f"l_max must be one of {_EVEN_L}, got {l_max}")
    l_values = tuple(l for l in _EVEN_L if l <= l_max)
    n_l = len(l_values)
    n = r_max * n_l
    M = np.zeros((n, n))

    u_nodes, u_weights = leggauss(n_u)
    p_at_u = {l: eval_legendre(l, u_nodes) for l in l_values}
    g_nodes, g_weights = leggauss(2)

    for i_rho, rho in enumerate(np.arange(1, r_max + 1, dtype=float)):
        # chord segments split where R = sqrt(rho^2 + y^2) crosses integer radii
        ks = np.arange(int(np.ceil(rho)), r_max + 2, dtype=float)
        edges = np.sqrt(np.maximum(ks**2 - rho**2, 0.0))
        if edges.size == 0 or edges[0] > 0.0:
            edges = np.concatenate([[0.0], edges])
        lo, hi = edges[:-1], edges[1:]
        keep = hi > lo
        lo, hi = lo[keep], hi[keep]
        mid = 0.5 * (lo + hi)[:, None]
        half = 0.5 * (hi - lo)[:, None]
        ys = (mid + half * g_nodes[None, :]).ravel()
        wts = (half * g_weights[None, :]).ravel()

        R = np.hypot(rho, ys)
        s = rho / R
        r0 = np.floor(R).astype(int)
        w_up = R - r0            # weight on hat r0 + 1
        w_dn = 1.0 - w_up        # weight on hat r0

        for li, l in enumerate(l_values):
            for lpi, lp in enumerate(l_values):
                if lp > l:
                    continue  # P_l(u*s) contains only orders <= l
                c = _angular_coeffs(l, lp, s, u_nodes, u_weights, p_at_u[lp])
                contrib = 2.0 * wts * c
                row = lpi * r_max + i_rho
                for rr, ww in ((r0, w_dn * contrib), (r0 + 1, w_up * contrib)):
                    ok = (rr >= 1) & (rr <= r_max)
                    np.add.at(M[row], li * r_max + rr[ok] - 1, ww[ok])

    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericsError(f"Abel matrix is ill-conditioned: cond = {cond:.3e}")
    M_inv = np.linalg.inv(M)
    return AbelOperator(
        M=M, M_inv=M_inv, r_max=r_max, l_values=l_values, condition_number=cond
    )


def _check_dims(op: AbelOperator, vec: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    n = op.r_max * op.n_l
    if v.shape == (op.n_l, op.r_max):
        return v.ravel()
    if v.shape == (n,):
        return v
    raise ValueError(f"{what} must have shape ({op.n_l}, {op.r_max}) or ({n},), got {v.shape}")


def project(op: AbelOperator, dist: LegendreDist3D) -> np.ndarray:
    """Forward projection b = M a, returned with shape (n_l, R_max)."""
    if dist.r_max != op.r_max or dist.l_values != op.l_values:
        raise ValueError("distribution does not match operator dimensions")
    b = op.M @ dist.a.ravel()
    return b.reshape(op.n_l, op.r_max)


def invert(op: AbelOperator, b) -> LegendreDist3D:
    """Inverse a = M^-1 b."""
    vec = _check_dims(op, b, "b")
    a = op.M_inv @ vec
    return LegendreDist3D(a=a.reshape(op.n_l, op.r_max), l_values=op.l_values)


def _polar_image(b: np.ndarray, op: AbelOperator, size: int, center) -> np.ndarray:
    """Evaluate the 2D expansion sum b_{r,l} h_r(rho) P_l(u) on a pixel grid."""
    cy, cx = center
    rows = np.arange(size, dtype=float)[:, None] - cy
    cols = np.arange(size, dtype=float)[None, :] - cx
    rho = np.hypot(cols, rows)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(rho > 0, rows / np.maximum(rho, 1e-300), 1.0)
    grid = np.arange(0, op.r_max + 2, dtype=float)
    img = np.zeros((size, size))
    for li, l in enumerate(op.l_values):
        prof = np.concatenate([[0.0], b[li], [0.0]])  # hats vanish at 0 and R_max+1
        img += np.interp(rho, grid, prof, right=0.0) * eval_legendre(l, u)
    return img


def render_image(
    op: AbelOperator,
    b,
    exposure: float | None = None,
    rng: np.random.Generator | None = None,
    size: int | None = None,
    center=None,
) -> VMIImage:
    """Cartesian detector image from projected coefficients.

    ``exposure`` is the expected total count over the frame; pixel counts are
    Poisson draws at that expectation.  ``exposure=None`` returns the
    deterministic projection itself (no noise, no rescaling).  Raises on
    input whose intensity is negative beyond -1e-6 of its maximum (smaller
    resampling undershoot is clipped).
    """
    bb = _check_dims(op, b, "b").reshape(op.n_l, op.r_max)
    size = size or (2 * op.r_max + 1)
    if center is None:
        center = ((size - 1) / 2.0, (size - 1) / 2.0)
    lam = _polar_image(bb, op, size, center)
    if lam.min() < -1e-6 * max(lam.max(), 1e-300):
        raise ValueError(f"negative image intensity {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if total <= 0:
        return VMIImage(pixels=np.zeros_like(lam), center=center, exposure=exposure)
    if exposure is None:
        return VMIImage(pixels=lam, center=center, exposure=None)
    if exposure <= 0:
        raise ValueError(f"exposure must be positive, got {exposure}")
    rng = rng or np.random.default_rng()
    counts = rng.poisson(lam * (exposure / total)).astype(float)
    return VMIImage(pixels=counts, center=center, exposure=float(exposure))


@dataclass(frozen=True)
class InvertedImage:
    """Inversion result: 3D coefficients with per-coefficient uncertainty."""

    dist: LegendreDist3D
    a_sigma: np.ndarray
    b: np.ndarray
    residual_rms: float


def _fit_machinery(op: AbelOperator, shape, center, half: str):
    """Per-(shape, center, half) pixel geometry for the linear fit."""
    key = (shape, center, half)
    cached = op._fit_cache.get(key)
    if cached is not None:
        return cached
    if not op._fit_cache:
        warnings.warn(
            f"radii below {op.r_min_fit} px are rank deficient on the pixel "
            "grid; their coefficients are zero-filled",
            RuntimeWarning,
            stacklevel=3,
        )
    cy, cx = center
    rows = np.arange(shape[0], dtype=float)[:, None] - cy
    cols = np.arange(shape[1], dtype=float)[None, :] - cx
    rho = np.hypot(cols, rows)
    mask = (rho >= op.r_min_fit - 1) & (rho <= op.r_max)
    if half == "left":
        mask &= np.broadcast_to(cols < 0, mask.shape)
    elif half == "right":
        mask &= np.broadcast_to(cols > 0, mask.shape)
    elif half != "both":
        raise ValueError(f"half must be left/right/both, got {half!r}")
    flat = mask.ravel()
    rho_m = rho.ravel()[flat]
    u_m = (rows + np.zeros_like(cols)).ravel()[flat] / rho_m
    p = np.stack([eval_legendre(l, u_m) for l in op.l_values])
    r0 = np.floor(rho_m).astype(int)
    w_up = rho_m - r0
    w_dn = 1.0 - w_up

    n_r = op.r_max - op.r_min_fit + 1
    n_l = op.n_l
    nb = op.r_max + 2
    A = np.zeros((n_r * n_l, n_r * n_l))
    sl = slice(op.r_min_fit, op.r_max + 1)
    for li in range(n_l):
        for lj in range(n_l):
            pp = p[li] * p[lj]
            d_dn = np.bincount(r0, w_dn * w_dn * pp, minlength=nb)
            d_up = np.bincount(r0 + 1, w_up * w_up * pp, minlength=nb)
            d_x = np.bincount(r0, w_dn * w_up * pp, minlength=nb)
            blk = np.diag((d_dn + d_up)[sl]) + np.diag(d_x[op.r_min_fit:op.r_max], 1) \
                + np.diag(d_x[op.r_min_fit:op.r_max], -1)
            A[li * n_r:(li + 1) * n_r, lj * n_r:(lj + 1) * n_r] = blk
    try:
        a_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"rank-deficient image fit ({half} half): {exc}") from exc
    machinery = (flat, r0, w_dn, w_up, p, a_inv, n_r)
    op._fit_cache[key] = machinery
    return machinery


def image_to_coeffs(
    img: VMIImage, op: AbelOperator, half: str = "both"
) -> InvertedImage:
    """Least-squares fit of an image to the 2D basis, then a = M^-1 b.

    Radii below ``op.r_min_fit`` have too few pixels for the full Legendre
    set and are zero-filled (reported once per operator via a warning).
    ``half`` restricts the fit to one side of the symmetry axis.
    Per-coefficient uncertainties come from the unweighted normal equations
    scaled by the post-fit residual RMS.
    """
    flat, r0, w_dn, w_up, p, a_inv, n_r = _fit_machinery(
        op, img.pixels.shape, img.center, half
    )
    y = img.pixels.ravel()[flat]
    nb = op.r_max + 2
    sl = slice(op.r_min_fit, op.r_max + 1)
    rhs = np.empty(n_r * op.n_l)
    for li in range(op.n_l):
        acc = np.bincount(r0, w_dn * p[li] * y, minlength=nb)
        acc += np.bincount(r0 + 1, w_up * p[li] * y, minlength=nb)
        rhs[li * n_r:(li + 1) * n_r] = acc[sl]
    sol = a_inv @ rhs

    # residual RMS over the fitted pixels for the uncertainty scale
    model = np.zeros_like(y)
    for li in range(op.n_l):
        prof = sol[li * n_r:(li + 1) * n_r]
        padded = np.zeros(nb)
        padded[sl] = prof
        model += (w_dn * padded[r0] + w_up * padded[np.minimum(r0 + 1, nb - 1)]) * p[li]
    dof = max(len(y) - len(sol), 1)
    res_rms = float(np.sqrt(np.sum((y - model) ** 2) / dof))

    b = np.zeros((op.n_l, op.r_max))
    b_sigma = np.zeros((op.n_l, op.r_max))
    sigma_sol = res_rms * np.sqrt(np.clip(np.diag(a_inv), 0.0, None))
    for li in range(op.n_l):
        b[li, op.r_min_fit - 1:] = sol[li * n_r:(li + 1) * n_r]
        b_sigma[li, op.r_min_fit - 1:] = sigma_sol[li * n_r:(li + 1) * n_r]

    a = (op.M_inv @ b.ravel()).reshape(op.n_l, op.r_max)
    # linear error propagation through the inverse, diagonal approximation
    a_sigma = np.sqrt(
        (op.M_inv**2) @ (b_sigma.ravel() ** 2)
    ).reshape(op.n_l, op.r_max)
    return InvertedImage(
        dist=LegendreDist3D(a=a, l_values=op.l_values),
        a_sigma=a_sigma,
        b=b,
        residual_rms=res_rms,
    )


def write_pgm16(path, img: VMIImage):
    """16-bit binary PGM plus a JSON sidecar with center/exposure/scale."""
    px = img.pixels
    peak = px.max()
    scale = 1.0 if peak <= 0 else max(peak / 65535.0, 1e-300)
    if peak <= 65535 and np.allclose(px, np.round(px)):
        scale = 1.0
    data = np.round(px / scale).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{px.shape[1]} {px.shape[0]}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
    sidecar = {
        "center": [img.center[0], img.center[1]],
        "exposure": img.exposure,
        "scale": scale,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_pgm16(path) -> VMIImage:
    """Read a 16-bit PGM written by write_pgm16 (sidecar optional)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM (P5) file")
        fields = []
        while len(fields) < 3:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated PGM header")
            line = line.split(b"#", 1)[0]
            fields.extend(line.split())
        width, height, maxval = (int(x) for x in fields[:3])
        if maxval != 65535:
            raise ValueError(f"{path}: expected 16-bit PGM, maxval={maxval}")
        raw = fh.read(width * height * 2)
        if len(raw) != width * height * 2:
            raise ValueError(f"{path}: truncated pixel data")
    px = np.frombuffer(raw, dtype=">u2").astype(float).reshape(height, width)
    center = ((height - 1) / 2.0, (width - 1) / 2.0)
    exposure = None
    try:
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
        center = tuple(sidecar.get("center", center))
        exposure = sidecar.get("exposure")
        px = px * float(sidecar.get("scale", 1.0))
    except FileNotFoundError:
        warnings.warn(f"{path}: no sidecar, assuming geometric center", RuntimeWarning)
    return VMIImage(pixels=px, center=center, exposure=exposure)
