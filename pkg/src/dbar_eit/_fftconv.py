"""Aperiodic grid convolutions with singular kernels via padded FFTs.

For fields on an n x n grid, the discrete convolution

    out[j] = sum_{j'} ker(j - j') f[j']        (offsets j - j' in (-n, n)^2)

is computed exactly as a circular convolution of size pad >= 2n - 1 per
axis, with the kernel samples wrapped into the circular buffer.  ``pad`` is
the next FFT-friendly length, which keeps the cost well below the
next power of two at identical accuracy.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

__all__ = ["pad_size", "offset_grid", "wrap_kernel_fft", "convolve"]


def pad_size(n: int) -> int:
    return sfft.next_fast_len(2 * n - 1)


def offset_grid(n: int, h: float) -> np.ndarray:
    """Complex offsets m*h for m in [-(n-1), n-1]^2, shape (2n-1, 2n-1)."""
    m = np.arange(-(n - 1), n)
    return (m[None, :] + 1j * m[:, None]) * h


def wrap_kernel_fft(kernel_values: np.ndarray, pad: int) -> np.ndarray:
    """FFT of the kernel samples laid out circularly for offset indexing."""
    kn = kernel_values.shape[0]
    n = (kn + 1) // 2
    buf = np.zeros((pad, pad), dtype=complex)
    buf[:kn, :kn] = kernel_values
    buf = np.roll(buf, (-(n - 1), -(n - 1)), axis=(0, 1))
    return sfft.fft2(buf)


def convolve(ker_fft: np.ndarray, fields: np.ndarray, n: int) -> np.ndarray:
    """Convolve (..., n, n) fields with a wrapped kernel FFT; no h^2 scaling."""
    pad = ker_fft.shape[-1]
    F = sfft.fft2(fields, s=(pad, pad), axes=(-2, -1))
    F *= ker_fft
    out = sfft.ifft2(F, axes=(-2, -1), overwrite_x=True)
    return out[..., :n, :n]
