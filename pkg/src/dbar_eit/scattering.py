"""Off-diagonal scattering transform on the frequency grid.

The boundary integrals over the unit circle reduce to finite sums over the
L electrode centers z_l (outward normal nu = z_l, ds = 2 pi / L):

    S12(k) =  (i/L) sum_l exp(-i kb z_l)  psi12(z_l, k) z_l
    S21(k) = -(i/L) sum_l exp( i kb zb_l) psi21(z_l, k) zb_l

Truncation (square or disk) zeroes the transform outside the admissible
region and guards against non-finite blow-up; the solver grid with an odd
number of points per axis (containing k = 0 at its center) is filled by
bilinear interpolation of the real and imaginary parts separately -- the
transform is never evaluated at k = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .cgo import CGOTraceSet, KGrid

__all__ = ["ScatteringData", "compute_s", "truncate", "to_odd_grid",
           "save_scattering_csv", "load_scattering_csv"]


@dataclass(frozen=True)
class ScatteringData:
    """S12/S21 on the computation grid, plus the interpolated odd solver grid."""

    grid: KGrid
    s12: np.ndarray
    s21: np.ndarray
    truncation: str = "none"
    zeroed_nonfinite: int = 0
    odd_m: int | None = None
    s12_odd: np.ndarray | None = None
    s21_odd: np.ndarray | None = None

    @property
    def h_kappa(self) -> float | None:
        return self.grid.K / self.odd_m if self.odd_m else None

    @property
    def odd_axis(self) -> np.ndarray | None:
        if self.odd_m is None:
            return None
        return np.linspace(-self.grid.K, self.grid.K, 2 * self.odd_m + 1)


def compute_s(traces: CGOTraceSet) -> ScatteringData:
    """Scattering transform from the psi traces; invalid k points give 0."""
    z = traces.electrode_centers
    k = traces.grid.points[..., None]
    L = len(z)
    s12 = (1j / L) * np.sum(np.exp(-1j * np.conj(k) * z) * traces.psi12 * z, axis=-1)
    s21 = (-1j / L) * np.sum(np.exp(1j * np.conj(k) * np.conj(z))
                             * traces.psi21 * np.conj(z), axis=-1)
    s12 = np.where(traces.valid, s12, 0.0)
    s21 = np.where(traces.valid, s21, 0.0)
    return ScatteringData(grid=traces.grid, s12=s12, s21=s21)


def truncate(s: ScatteringData, mode: str = "square",
             radius: float | None = None) -> ScatteringData:
    """Zero the transform outside the truncation region and any non-finite values.

    ``mode`` is ``square`` (cutoff is the grid square itself) or ``disk``
    with the given radius.  Idempotent.
    """
    if mode == "square":
        cutoff = radius if radius is not None else s.grid.K
        if cutoff > s.grid.K + 1e-12:
            raise ValueError("square truncation exceeds the grid extent")
        k = s.grid.points
        keep = (np.abs(k.real) <= cutoff + 1e-12) & (np.abs(k.imag) <= cutoff + 1e-12)
        label = f"square:{cutoff:g}"
    elif mode == "disk":
        if radius is None:
            raise ValueError("disk truncation needs a radius")
        if radius > s.grid.K * np.sqrt(2.0) + 1e-12:
            raise ValueError("disk truncation exceeds the grid extent")
        keep = np.abs(s.grid.points) <= radius + 1e-12
        label = f"disk:{radius:g}"
    else:
        raise ValueError(f"unknown truncation mode {mode!r}")

    bad = ~(np.isfinite(s.s12) & np.isfinite(s.s21))
    s12 = np.where(keep & ~bad, s.s12, 0.0)
    s21 = np.where(keep & ~bad, s.s21, 0.0)
    out = replace(s, s12=s12, s21=s21, truncation=label,
                  zeroed_nonfinite=s.zeroed_nonfinite + int(bad.sum()))
    if s.odd_m is not None:
        out = to_odd_grid(out, s.odd_m)
    return out


def to_odd_grid(s: ScatteringData, m: int = 64) -> ScatteringData:
    """Interpolate onto the (2m+1) x (2m+1) grid containing k = 0.

    Bilinear on Re and Im separately; the origin value is interpolated from
    its neighbors, never evaluated.
    """
    ax = s.grid.axis
    target = np.linspace(-s.grid.K, s.grid.K, 2 * m + 1)
    TX, TY = np.meshgrid(target, target)
    pts = np.column_stack([TY.ravel(), TX.ravel()])

    def interp(a):
        re = RegularGridInterpolator((ax, ax), a.real, method="linear")(pts)
        im = RegularGridInterpolator((ax, ax), a.imag, method="linear")(pts)
        return (re + 1j * im).reshape(TX.shape)

    return replace(s, odd_m=m, s12_odd=interp(s.s12), s21_odd=interp(s.s21))


def save_scattering_csv(s: ScatteringData, path) -> None:
    """Rows: k_re, k_im, Re S12, Im S12, Re S21, Im S21 (computation grid)."""
    k = s.grid.points.ravel()
    data = np.column_stack([k.real, k.imag,
                            s.s12.ravel().real, s.s12.ravel().imag,
                            s.s21.ravel().real, s.s21.ravel().imag])
    np.savetxt(path, data, delimiter=",", fmt="%.17e",
               header=f"K={s.grid.K!r} n={s.grid.n} truncation={s.truncation}",
               comments="# ")


def load_scattering_csv(path) -> ScatteringData:
    with open(path) as f:
        head = f.readline().replace("# ", "").split()
        meta = dict(kv.split("=") for kv in head)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    n = int(meta["n"])
    grid = KGrid(K=float(meta["K"]), n=n)
    s12 = (data[:, 2] + 1j * data[:, 3]).reshape(n, n)
    s21 = (data[:, 4] + 1j * data[:, 5]).reshape(n, n)
    return ScatteringData(grid=grid, s12=s12, s21=s21,
                          truncation=meta["truncation"])
