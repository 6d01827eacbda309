"""Admittivity recovery from the CGO fields at k = 0.

At k = 0 the combinations M+ = M11 + M12 and M- = M22 + M21 satisfy

    Q12 = dbar_z M+ / M-          Q21 = d_z M- / M+

with d_z = (d_x - i d_y)/2 and dbar_z = (d_x + i d_y)/2 evaluated by
centered differences.  Inverting the derivative by the Cauchy transform,

    log gamma(z) = -(2/pi) int Q21(w) / (z - w) dA(w)
                 = -(2/pi) int Q12(w) / (zb - wb) dA(w),

computed as a padded FFT convolution with the 1/z (resp. 1/zb) kernel
zeroed at the origin.  The exponential is rescaled by the background
admittivity, pixels outside the unit disk are masked, and negative
reconstructed permittivity is clamped to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._fftconv import convolve, offset_grid, pad_size, wrap_kernel_fft
from .dbar import CgoFieldAtZero

__all__ = ["PotentialField", "ReconResult", "m_plus_minus", "compute_q",
           "cauchy_transform_loggamma", "finalize", "dynamic_range",
           "save_recon_csv", "save_heatmap_ppm", "save_metrics_json"]


@dataclass(frozen=True)
class PotentialField:
    """Off-diagonal matrix potential on the z grid (zero where not computed)."""

    q12: np.ndarray
    q21: np.ndarray
    h_z: float
    valid: np.ndarray


@dataclass
class ReconResult:
    """Reconstructed admittivity and summary metrics."""

    z_axis: np.ndarray
    gamma: np.ndarray            # NaN outside the unit disk
    clamped_pixels: int
    background: complex
    metadata: dict = field(default_factory=dict)

    @property
    def sigma(self) -> np.ndarray:
        return self.gamma.real

    @property
    def epsilon(self) -> np.ndarray:
        return self.gamma.imag

    @property
    def inside(self) -> np.ndarray:
        z = self.z_axis[None, :] + 1j * self.z_axis[:, None]
        return np.abs(z) <= 1.0


def m_plus_minus(f: CgoFieldAtZero) -> tuple[np.ndarray, np.ndarray]:
    """M+ and M- at k = 0 (where e(z, 0) = 1): pointwise sums."""
    return f.m11 + f.m12, f.m22 + f.m21


def compute_q(m_plus: np.ndarray, m_minus: np.ndarray, h_z: float,
              solved: np.ndarray | None = None,
              denominator_floor: float = 1e-8) -> PotentialField:
    """Q12 = dbar M+ / M- and Q21 = d M- / M+ by centered differences.

    Derivatives exist only where all four neighbors were solved; the grid
    boundary ring and unsolved pixels give zero.  Pixels whose denominator
    magnitude falls below the floor raise, listing the offenders.
    """
    n = m_plus.shape[0]
    if solved is None:
        solved = np.ones_like(m_plus, dtype=bool)
    interior = np.zeros_like(solved)
    interior[1:-1, 1:-1] = (solved[1:-1, 1:-1] & solved[:-2, 1:-1]
                            & solved[2:, 1:-1] & solved[1:-1, :-2]
                            & solved[1:-1, 2:])

    def dx(a):
        out = np.zeros_like(a)
        out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) / (2.0 * h_z)
        return out

    def dy(a):
        out = np.zeros_like(a)
        out[1:-1, :] = (a[2:, :] - a[:-2, :]) / (2.0 * h_z)
        return out

    dbar_mp = 0.5 * (dx(m_plus) + 1j * dy(m_plus))
    d_mm = 0.5 * (dx(m_minus) - 1j * dy(m_minus))

    low_m = interior & (np.abs(m_minus) < denominator_floor)
    low_p = interior & (np.abs(m_plus) < denominator_floor)
    if low_m.any() or low_p.any():
        bad = [tuple(map(int, ij)) for ij in np.argwhere(low_m | low_p)[:20]]
        raise ZeroDivisionError(
            f"M+/M- denominator below {denominator_floor:g} at pixels {bad}")

    q12 = np.where(interior, dbar_mp / np.where(interior, m_minus, 1.0), 0.0)
    q21 = np.where(interior, d_mm / np.where(interior, m_plus, 1.0), 0.0)
    return PotentialField(q12=q12, q21=q21, h_z=h_z, valid=interior)


def cauchy_transform_loggamma(q: PotentialField, which: str = "Q21") -> np.ndarray:
    """log gamma from either potential branch by FFT convolution.

    The Q21 branch inverts dbar_z with the 1/(z - w) kernel; the Q12 branch
    inverts d_z with its conjugate.  Kernel value at the origin is 0.
    """
    n = q.q21.shape[0]
    z = offset_grid(n, q.h_z)
    with np.errstate(divide="ignore", invalid="ignore"):
        if which == "Q21":
            ker = 1.0 / z
            data = q.q21
        elif which == "Q12":
            ker = 1.0 / np.conj(z)
            data = q.q12
        else:
            raise ValueError(f"unknown branch {which!r}")
    ker[n - 1, n - 1] = 0.0
    pad = pad_size(n)
    kf = wrap_kernel_fft(ker, pad)
    return (-2.0 / np.pi) * (q.h_z ** 2) * convolve(kf, data, n)


def finalize(loggamma: np.ndarray, background: complex,
             z_axis: np.ndarray, metadata: dict | None = None) -> ReconResult:
    """Exponentiate, rescale by the background, mask |z| > 1, clamp eps < 0."""
    z = z_axis[None, :] + 1j * z_axis[:, None]
    gamma = background * np.exp(loggamma)
    inside = np.abs(z) <= 1.0
    neg = inside & (gamma.imag < 0.0)
    gamma = np.where(neg, gamma.real + 0.0j, gamma)
    gamma = np.where(inside, gamma, np.nan + 1j * np.nan)
    return ReconResult(z_axis=z_axis, gamma=gamma, clamped_pixels=int(neg.sum()),
                       background=background, metadata=metadata or {})


def dynamic_range(recon: np.ndarray, truth_max: float, truth_min: float) -> float:
    """100 * (max - min of the reconstruction) / (max - min of the truth).

    Extrema are taken over the computational grid (NaN-masked pixels are
    ignored).
    """
    if not truth_max > truth_min:
        raise ValueError("degenerate truth range")
    rmax = np.nanmax(recon)
    rmin = np.nanmin(recon)
    return 100.0 * (rmax - rmin) / (truth_max - truth_min)


# --- artifact export -----------------------------------------------------------

def save_recon_csv(r: ReconResult, path_sigma, path_epsilon) -> None:
    np.savetxt(path_sigma, r.sigma, delimiter=",", fmt="%.17e")
    np.savetxt(path_epsilon, r.epsilon, delimiter=",", fmt="%.17e")


def save_heatmap_ppm(values: np.ndarray, path, vmin: float | None = None,
                     vmax: float | None = None) -> None:
    """Binary PPM heatmap (blue-white-red); NaN pixels render gray."""
    a = np.asarray(values, dtype=float)
    finite = np.isfinite(a)
    lo = float(np.nanmin(a)) if vmin is None else vmin
    hi = float(np.nanmax(a)) if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    t = np.clip((a - lo) / span, 0.0, 1.0)
    rgb = np.empty(a.shape + (3,), dtype=np.uint8)
    low = t < 0.5
    s = (t * 2.0)
    rgb[..., 0] = np.where(low, (255 * s).astype(np.uint8), 255)
    rgb[..., 1] = np.where(low, (255 * s).astype(np.uint8),
                           (255 * (2.0 - 2.0 * t)).astype(np.uint8))
    rgb[..., 2] = np.where(low, 255, (255 * (2.0 - 2.0 * t)).astype(np.uint8))
    rgb[~finite] = 128
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        f.write(rgb[::-1].tobytes())    # flip so increasing y points up


def save_metrics_json(metrics: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
        f.write("\n")
