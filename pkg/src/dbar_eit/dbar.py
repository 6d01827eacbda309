"""Frequency-domain D-bar systems solved per spatial point.

For each z the two coupled pairs

    M11(z,k) = 1 + (1/pi k) * ( M12(z,kb) e(z,-k) S21(k) )
    M12(z,k) = 0 + (1/pi k) * ( M11(z,kb) e(z,kb) S12(k) )

    M22(z,k) = 1 + (1/pi k) * ( M21(z,kb) e(z,kb) S12(k) )
    M21(z,k) = 0 + (1/pi k) * ( M22(z,kb) e(z,-k) S21(k) )

are solved on the odd k-grid containing the origin.  The argument
conjugation kb is realized as the vertical-axis index flip; the Cauchy
kernel 1/(pi k) (zeroed at k = 0) acts by padded FFT convolution; and both
pairs are C-linear, so a complex restarted GMRES applies directly.  Per-z
problems are independent and are batched: one GMRES iteration advances a
whole block of z points (both systems at once) through shared batched FFTs.

e(z, k) = exp(i (zk + zb kb)) = exp(2i Re(zk)).
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ._fftconv import convolve, offset_grid, pad_size, wrap_kernel_fft
from .scattering import ScatteringData

__all__ = ["CauchyKernelGrid", "CgoFieldAtZero", "DbarSolver",
           "DbarConvergenceError", "solve_all_z", "save_field_bin",
           "load_field_bin", "default_z_axis"]


class DbarConvergenceError(RuntimeError):
    """Raised when GMRES fails for some z; carries indices and partial field."""

    def __init__(self, failures, field=None):
        self.failures = failures
        self.field = field
        zs = ", ".join(f"z={z} (residual {r:.2e})" for z, r in failures[:5])
        more = "" if len(failures) <= 5 else f" and {len(failures) - 5} more"
        super().__init__(f"D-bar solve did not converge at {zs}{more}")


@dataclass(frozen=True)
class CauchyKernelGrid:
    """FFT of 1/(pi k) wrapped for aperiodic convolution on the odd grid."""

    n: int
    h: float
    pad: int
    ker_fft: np.ndarray

    @classmethod
    def build(cls, n: int, h: float) -> "CauchyKernelGrid":
        k = offset_grid(n, h)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = 1.0 / (np.pi * k)
        vals[n - 1, n - 1] = 0.0           # integrable singularity at k = 0
        pad = pad_size(n)
        return cls(n=n, h=h, pad=pad, ker_fft=wrap_kernel_fft(vals, pad))


@dataclass
class CgoFieldAtZero:
    """M(z, 0) on the z grid; identity values at points not solved for."""

    z_axis: np.ndarray
    m11: np.ndarray
    m12: np.ndarray
    m21: np.ndarray
    m22: np.ndarray
    solved: np.ndarray
    iterations: np.ndarray
    max_residual: float

    @property
    def h_z(self) -> float:
        return float(self.z_axis[1] - self.z_axis[0])

    @property
    def points(self) -> np.ndarray:
        return self.z_axis[None, :] + 1j * self.z_axis[:, None]


def default_z_axis(n_z: int = 128, extent: float = 1.1) -> np.ndarray:
    return np.linspace(-extent, extent, n_z)


def _flip_kbar(a: np.ndarray) -> np.ndarray:
    """Index realization of k -> conj(k): flip the imaginary (row) axis."""
    return a[..., ::-1, :]


class DbarSolver:
    """Batched GMRES solver for the two D-bar systems of one scattering datum."""

    def __init__(self, s: ScatteringData, tol: float = 1e-6,
                 restart: int = 30, maxiter: int = 200):
        if s.odd_m is None:
            raise ValueError("scattering data lacks the odd solver grid")
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        self.n = 2 * s.odd_m + 1
        self.h = s.h_kappa
        self.tol = tol
        self.restart = restart
        self.maxiter = maxiter
        self.s12 = np.ascontiguousarray(s.s12_odd)
        self.s21 = np.ascontiguousarray(s.s21_odd)
        self.axis = s.odd_axis
        self.kernel = CauchyKernelGrid.build(self.n, self.h)
        self._center = self.n // 2
        # identically zero scattering makes the coupling operator exactly
        # the identity; convolutions of zero fields are skipped
        self._trivial = not (self.s12.any() or self.s21.any())

    # -- multiplier fields ------------------------------------------------

    def _multipliers(self, z_batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """T1 = e(z,-k) S21 and T2 = e(z,kb) S12 for a batch of z (B, n, n).

        The phases separate: e(z,-k) = exp(-2i x kx) exp(2i y ky) and
        e(z,kb) = exp(2i x kx) exp(2i y ky), so each field is an outer
        product of two 1-D exponentials times the scattering values.
        """
        x = z_batch.real[:, None]
        y = z_batch.imag[:, None]
        ey = np.exp(2j * (y * self.axis[None, :]))[:, :, None]    # rows: ky
        ex = np.exp(2j * (x * self.axis[None, :]))[:, None, :]    # cols: kx
        t1 = ey * np.conj(ex) * self.s21[None]
        t2 = ey * ex * self.s12[None]
        return t1, t2

    # -- batched operator and GMRES ----------------------------------------

    def _apply_c(self, T: np.ndarray, X: np.ndarray) -> np.ndarray:
        """One coupling application h^2 Conv(T . flip X)."""
        if self._trivial:
            return np.zeros_like(X)
        return (self.h ** 2) * convolve(self.kernel.ker_fft, T * _flip_kbar(X), self.n)

    def _matvec(self, X: np.ndarray, TA: np.ndarray, TB: np.ndarray) -> np.ndarray:
        """Diagonal-component operator after eliminating the off-diagonal one.

        Substituting the off-diagonal equation into the diagonal one turns
        each 2x2 block system into (I - C_outer flip C_inner flip) x = 1 for
        the diagonal component alone; the off-diagonal field is recovered
        afterwards as one extra coupling application.  This halves both the
        unknown count and the iteration count of the stacked formulation at
        identical solutions.
        """
        if self._trivial:
            return X.copy()     # callers may mutate; never alias the input
        return X - self._apply_c(TA, self._apply_c(TB, X))

    def solve_batch(self, z_batch: np.ndarray, x0: np.ndarray | None = None):
        """Solve both systems for a batch of z.

        Returns (fields (B, 4, n, n) ordered m11, m12, m22, m21;
        iterations (B,); residuals (B,)).  Batch entry 2b carries system A
        of z_batch[b] (diagonal unknown M11) and 2b+1 system B (M22).
        """
        B = len(z_batch)
        n = self.n
        if self._trivial:
            TA = TB = np.zeros((2 * B, 1, 1), dtype=complex)
        else:
            t1, t2 = self._multipliers(z_batch)
            # system A: M11 = 1 + C1 flip M12, M12 = C2 flip M11 -> outer T1, inner T2
            # system B: M22 = 1 + C2 flip M21, M21 = C1 flip M22 -> outer T2, inner T1
            TA = np.empty((2 * B, n, n), dtype=complex)
            TB = np.empty((2 * B, n, n), dtype=complex)
            TA[0::2], TB[0::2] = t1, t2
            TA[1::2], TB[1::2] = t2, t1

        b = np.ones((2 * B, n, n), dtype=complex)

        x, iters, res = _gmres_batched(
            lambda v, idx: self._matvec(v, TA[idx], TB[idx]),
            b.reshape(2 * B, -1), None if x0 is None else x0.reshape(2 * B, -1),
            self.tol, self.restart, self.maxiter, (n, n))

        X = x.reshape(2 * B, n, n)
        off = self._apply_c(TB, X)     # exact given the diagonal component
        fields = np.empty((B, 4, n, n), dtype=complex)
        fields[:, 0] = X[0::2]         # m11
        fields[:, 1] = off[0::2]       # m12
        fields[:, 2] = X[1::2]         # m22
        fields[:, 3] = off[1::2]       # m21
        iters_z = np.maximum(iters[0::2], iters[1::2])
        res_z = np.maximum(res[0::2], res[1::2])
        return fields, iters_z, res_z

    def solve_at_z(self, z: complex, return_fields: bool = False):
        """M11, M12, M21, M22 at k = 0 for one z (full k fields optional)."""
        fields, iters, res = self.solve_batch(np.asarray([z], dtype=complex))
        if res[0] > self.tol:
            raise DbarConvergenceError([(z, float(res[0]))])
        c = self._center
        m11, m12, m22, m21 = fields[0, :, c, c]
        if return_fields:
            return (m11, m12, m21, m22), fields[0]
        return m11, m12, m21, m22


def _gmres_batched(matvec, b, x0, tol, restart, maxiter, shape):
    """Restarted GMRES over a batch of independent complex systems.

    ``matvec(V, idx)`` applies the operators of batch entries ``idx`` to the
    rows of V (reshaped to ``shape``).  Returns (x, iterations, residuals)
    where residuals are true relative residuals recomputed at the end.
    """
    B, D = b.shape
    x = np.zeros_like(b) if x0 is None else x0.astype(complex, copy=True)
    bnorm = np.linalg.norm(b, axis=1)
    bnorm = np.where(bnorm == 0.0, 1.0, bnorm)
    iters = np.zeros(B, dtype=int)
    resnorm = np.full(B, np.inf)

    def mv(V, idx):
        return matvec(V.reshape((len(idx),) + shape), idx).reshape(len(idx), -1)

    active = np.arange(B)
    first = True
    while active.size:
        if first and x0 is None:
            r = b[active].copy()
        else:
            r = b[active] - mv(x[active], active)
        first = False
        beta = np.linalg.norm(r, axis=1)
        done = beta <= tol * bnorm[active]
        resnorm[active] = beta / bnorm[active]
        r, beta, active = r[~done], beta[~done], active[~done]
        if active.size == 0 or iters[active].min() >= maxiter:
            break

        a = active.size
        m = restart
        V = [r / beta[:, None]]                  # Krylov basis, grown lazily
        R = np.zeros((a, m, m), dtype=complex)   # rotated Hessenberg, upper tri
        g = np.zeros((a, m + 1), dtype=complex)
        g[:, 0] = beta
        cs = np.zeros((a, m), dtype=complex)
        sn = np.zeros((a, m))
        hit = np.full(a, -1, dtype=int)
        tol_abs = tol * bnorm[active]

        j = 0
        while j < m:
            w = mv(V[j], active)
            iters[active] += 1
            hcol = np.zeros((a, j + 2), dtype=complex)
            for i in range(j + 1):
                hij = np.einsum("bd,bd->b", np.conj(V[i]), w)
                w -= hij[:, None] * V[i]
                hcol[:, i] = hij
            hlast = np.linalg.norm(w, axis=1)
            hcol[:, j + 1] = hlast
            V.append(w / np.where(hlast > 0.0, hlast, 1.0)[:, None])

            for i in range(j):
                t = np.conj(cs[:, i]) * hcol[:, i] + sn[:, i] * hcol[:, i + 1]
                hcol[:, i + 1] = -sn[:, i] * hcol[:, i] + cs[:, i] * hcol[:, i + 1]
                hcol[:, i] = t
            denom = np.sqrt(np.abs(hcol[:, j]) ** 2 + hcol[:, j + 1].real ** 2)
            denom = np.where(denom == 0.0, 1.0, denom)
            cs[:, j] = hcol[:, j] / denom
            sn[:, j] = hcol[:, j + 1].real / denom
            hcol[:, j] = np.conj(cs[:, j]) * hcol[:, j] + sn[:, j] * hcol[:, j + 1]
            g[:, j + 1] = -sn[:, j] * g[:, j]
            g[:, j] = np.conj(cs[:, j]) * g[:, j]
            R[:, :j + 1, j] = hcol[:, :j + 1]

            newly = (np.abs(g[:, j + 1]) <= tol_abs) & (hit < 0)
            hit[newly] = j + 1
            j += 1
            if (hit >= 0).all() or iters[active].min() >= maxiter:
                break

        # update each entry at its own converged depth
        depth = np.where(hit > 0, hit, j)
        for loc in range(a):
            jj = depth[loc]
            y = solve_triangular(R[loc, :jj, :jj], g[loc, :jj], lower=False)
            x[active[loc]] += sum(y[i] * V[i][loc] for i in range(jj))

        est = np.abs(g[np.arange(a), depth])
        if (hit > 0).all() and not est.any():
            # exact breakdown everywhere: the recurrence residual is exact
            resnorm[active] = 0.0
            break

        r = b[active] - mv(x[active], active)
        beta = np.linalg.norm(r, axis=1)
        resnorm[active] = beta / bnorm[active]
        conv = beta <= tol * bnorm[active]
        stalled = iters[active] >= maxiter
        active = active[~conv & ~stalled]

    return x, iters, resnorm


def solve_all_z(s: ScatteringData, z_axis: np.ndarray | None = None,
                tol: float = 1e-6, restart: int = 30, maxiter: int = 200,
                workers: int = 1, batch: int = 8, z_mask: str = "disk",
                warm_start: bool = True) -> CgoFieldAtZero:
    """Solve the D-bar systems at every z on the grid and keep M(z, 0).

    ``z_mask`` = ``disk`` solves inside |z| <= grid extent (the region the
    reconstruction uses) and leaves identity values outside; ``square``
    solves every grid point.  Batches sweep row-major; with ``warm_start``
    each batch starts from the previous batch's solution.
    """
    if z_axis is None:
        z_axis = default_z_axis()
    solver = DbarSolver(s, tol=tol, restart=restart, maxiter=maxiter)
    n_z = len(z_axis)
    Z = z_axis[None, :] + 1j * z_axis[:, None]
    if z_mask == "disk":
        mask = np.abs(Z) <= z_axis[-1] + 1e-12
    elif z_mask == "square":
        mask = np.ones_like(Z, dtype=bool)
    else:
        raise ValueError(f"unknown z_mask {z_mask!r}")

    zs = Z[mask]
    batches = [(i, zs[i:i + batch]) for i in range(0, len(zs), batch)]

    if workers > 1:
        with mp.get_context("fork").Pool(
                workers, initializer=_init_zworker,
                initargs=(solver, warm_start)) as pool:
            results = pool.map(_solve_zbatch_worker, batches,
                               chunksize=max(1, len(batches) // (workers * 8)))
    else:
        _init_zworker(solver, warm_start)
        results = [_solve_zbatch_worker(t) for t in batches]

    m = np.empty((4, len(zs)), dtype=complex)
    iters = np.empty(len(zs), dtype=int)
    res = np.empty(len(zs))
    for (i, zb), (vals, it, rs) in zip(batches, results):
        m[:, i:i + len(zb)] = vals
        iters[i:i + len(zb)] = it
        res[i:i + len(zb)] = rs

    fields = []
    for comp in range(4):
        full = np.zeros((n_z, n_z), dtype=complex)
        if comp in (0, 2):
            full[:] = 1.0              # identity values off the solved set
        full[mask] = m[comp]
        fields.append(full)
    it_full = np.zeros((n_z, n_z), dtype=int)
    it_full[mask] = iters

    failures = [(complex(z), float(r)) for z, r in zip(zs[res > tol], res[res > tol])]
    field = CgoFieldAtZero(z_axis=z_axis, m11=fields[0], m12=fields[1],
                           m22=fields[2], m21=fields[3], solved=mask,
                           iterations=it_full, max_residual=float(res.max()))
    if failures:
        raise DbarConvergenceError(failures, field=field)
    return field


_ZWORKER: dict = {}


def _init_zworker(solver, warm_start):
    _ZWORKER["solver"] = solver
    _ZWORKER["warm"] = warm_start
    _ZWORKER["x_prev"] = None


def _solve_zbatch_worker(task):
    i, zb = task
    solver: DbarSolver = _ZWORKER["solver"]
    x0 = None
    prev = _ZWORKER.get("x_prev")
    if _ZWORKER["warm"] and prev is not None and len(prev) == 2 * len(zb):
        x0 = prev
    fields, iters, res = solver.solve_batch(zb, x0=x0)
    if _ZWORKER["warm"]:
        n = solver.n
        x_prev = np.empty((2 * len(zb), n, n), dtype=complex)
        x_prev[0::2] = fields[:, 0]    # m11
        x_prev[1::2] = fields[:, 2]    # m22
        _ZWORKER["x_prev"] = x_prev
    c = solver._center
    return fields[:, :, c, c].T, iters, res


# --- binary dump ---------------------------------------------------------------

def save_field_bin(field: CgoFieldAtZero, path) -> None:
    """Binary layout: int32 n_z, then per component (m11, m12, m21, m22)
    the row-major Re plane then Im plane as float64."""
    n_z = len(field.z_axis)
    with open(path, "wb") as f:
        np.asarray([n_z], dtype="<i4").tofile(f)
        for comp in (field.m11, field.m12, field.m21, field.m22):
            comp.real.astype("<f8").tofile(f)
            comp.imag.astype("<f8").tofile(f)


def load_field_bin(path) -> tuple[np.ndarray, ...]:
    with open(path, "rb") as f:
        n_z = int(np.fromfile(f, dtype="<i4", count=1)[0])
        comps = []
        for _ in range(4):
            re = np.fromfile(f, dtype="<f8", count=n_z * n_z).reshape(n_z, n_z)
            im = np.fromfile(f, dtype="<f8", count=n_z * n_z).reshape(n_z, n_z)
            comps.append(re + 1j * im)
    return tuple(comps)
