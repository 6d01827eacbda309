"""Boundary traces of the exponentially growing solutions.

For each complex frequency k the traces of the two growing solutions at the
electrode centers solve Fredholm systems of the second kind,

    u1(z) = exp(ikz)/(ik)   - int G0(z - zeta)   [dDN u1](zeta) dS(zeta),
    u2(z) = exp(-ik zb)/(-ik) - int G0(-zb + zetab) [dDN u2](zeta) dS(zeta),

where dDN = DN_gamma - DN_1 and G0 is the logarithmic kernel (the standard
substitute for the exponentially behaved Green's function; the kernel is
k-independent, so one LU factorization serves every k).  The off-diagonal
traces follow by quadrature,

    psi12(z) = int exp(i kb (z-zeta)) / (4 pi (z-zeta)) [dDN u2](zeta) dS,
    psi21(z) = int conj(exp(i k (z-zeta)) / (4 pi (z-zeta))) [dDN u1](zeta) dS,

with the singular node zeroed.  Quadrature is the uniform-weight trapezoid
rule on the periodic electrode circle, ds = 2 pi / L per node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .dn_map import DNMatrix, apply_delta_dn

__all__ = ["KGrid", "CGOTraceSet", "g0_kernel", "BoundaryTraceSolver",
           "solve_traces"]


@dataclass(frozen=True)
class KGrid:
    """Uniform n x n grid over [-K, K]^2, k = 0 excluded (n even).

    ``points[iy, ix] = axis[ix] + 1j * axis[iy]``.
    """

    K: float
    n: int = 128

    def __post_init__(self):
        if self.K <= 0:
            raise ValueError("cutoff K must be positive")
        if self.n % 2 != 0:
            raise ValueError("n must be even so the grid excludes k = 0")

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.K, self.K, self.n)

    @property
    def points(self) -> np.ndarray:
        ax = self.axis
        return ax[None, :] + 1j * ax[:, None]


@dataclass
class CGOTraceSet:
    """Boundary traces and cached dDN products for every k on the grid.

    Arrays have shape grid.points.shape + (L,).  ``valid`` flags k points
    whose solve produced finite values; invalid points are zeroed downstream.
    """

    grid: KGrid
    electrode_angles: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    psi12: np.ndarray
    psi21: np.ndarray
    delta_dn_u1: np.ndarray
    delta_dn_u2: np.ndarray
    valid: np.ndarray

    @property
    def electrode_centers(self) -> np.ndarray:
        return np.exp(1j * self.electrode_angles)


def g0_kernel(z, zeta) -> np.ndarray:
    """Logarithmic kernel (1/2pi) log|z - zeta|, zero on the diagonal z == zeta."""
    d = np.abs(np.asarray(z) - np.asarray(zeta))
    with np.errstate(divide="ignore"):
        out = np.log(d) / (2.0 * np.pi)
    return np.where(d == 0, 0.0, out)


class BoundaryTraceSolver:
    """Shared dense system for the boundary integral equations.

    The discretized Fredholm matrix I + ds * G0 * dDN does not depend on k;
    it is factorized once and reused for all right-hand sides.

    ``trace_method`` selects how the psi boundary integrals are evaluated:

    * ``quadrature`` (default): uniform-weight sum with the singular node
      zeroed, plus the Plemelj half-residue phi(z)/(4z) that turns the
      principal value into the one-sided trace the scattering identities
      need.  The punctured sum damps boundary mode n by (2n-1)/L, which
      low-passes the scattering transform exactly like the reference
      implementation of this reconstruction.
    * ``spectral``: exact one-sided trace on the Fourier span of the nodes
      (used by the validation suite; mode-exact in the Born regime).
    """

    def __init__(self, m_gamma: DNMatrix, m_one: DNMatrix,
                 trace_method: str = "quadrature"):
        if not (m_gamma.radius_scaled and m_one.radius_scaled):
            raise ValueError("boundary solve requires unit-disk-scaled DN matrices")
        self.angles = m_gamma.electrode_angles
        self.centers = np.exp(1j * self.angles)
        L = len(self.angles)
        self.L = L
        self.ds = 2.0 * np.pi / L
        phi = m_gamma.basis()
        self.delta_pointwise = phi @ (m_gamma.entries - m_one.entries) @ phi.T
        g0 = g0_kernel(self.centers[:, None], self.centers[None, :])
        system = np.eye(L) + self.ds * g0 @ self.delta_pointwise
        cond = np.linalg.cond(system)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(
                f"boundary system ill-conditioned (cond {cond:.2e}); "
                "possible exceptional point")
        self._lu = sla.lu_factor(system)
        self._system = system
        if trace_method not in ("quadrature", "spectral"):
            raise ValueError(f"unknown trace_method {trace_method!r}")
        self.trace_method = trace_method
        # Exact one-sided trace of the Cauchy-type boundary integral on the
        # Fourier span of the nodes: analysis into modes p in (-L/2, 0],
        # action 2 pi z^(p-1), synthesis at the nodes.  Fused into one matrix.
        p = -np.arange(0, L // 2 + 1)
        analysis = np.exp(-1j * p[:, None] * self.angles[None, :]) / L
        synthesis = np.exp(1j * (p[None, :] - 1) * self.angles[:, None])
        self._cauchy_trace = 0.5 * synthesis @ analysis

    def incident(self, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Incident traces exp(ikz)/(ik) and exp(-ik zb)/(-ik) at the centers."""
        k = np.asarray(k, dtype=complex)[..., None]
        z = self.centers
        return (np.exp(1j * k * z) / (1j * k),
                np.exp(-1j * k * np.conj(z)) / (-1j * k))

    def solve_u(self, k) -> tuple[np.ndarray, np.ndarray]:
        """Traces u1, u2 for one k or an array of k (trailing electrode axis)."""
        k = np.asarray(k, dtype=complex)
        if np.any(k == 0):
            raise ValueError("boundary integral equations do not hold for k = 0")
        u01, u02 = self.incident(k)
        rhs = np.concatenate([u01.reshape(-1, self.L),
                              u02.reshape(-1, self.L)], axis=0)
        sol = sla.lu_solve(self._lu, rhs.T).T
        nk = u01.size // self.L
        u1 = sol[:nk].reshape(u01.shape)
        u2 = sol[nk:].reshape(u02.shape)
        return u1, u2

    def residual(self, k, u1, u2) -> float:
        """Relative residual of the discretized equations at a solution."""
        u01, u02 = self.incident(k)
        r1 = u1 @ self._system.T - u01
        r2 = u2 @ self._system.T - u02
        denom = max(np.linalg.norm(u01.ravel()), np.linalg.norm(u02.ravel()))
        return max(np.linalg.norm(r1.ravel()), np.linalg.norm(r2.ravel())) / denom

    def delta_dn(self, u: np.ndarray) -> np.ndarray:
        """Cached pointwise samples of dDN applied to boundary traces."""
        return u @ self.delta_pointwise.T

    def psi(self, k, d1: np.ndarray, d2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Off-diagonal traces from the cached dDN products for one/batched k."""
        if self.trace_method == "spectral":
            k = np.asarray(k, dtype=complex)[..., None]
            z = self.centers
            ekz = np.exp(1j * np.conj(k) * z)
            psi12 = ekz * ((d2 / ekz) @ self._cauchy_trace.T)
            ekz2 = np.exp(1j * k * z)
            psi21 = np.conj(ekz2 * ((np.conj(d1) / ekz2) @ self._cauchy_trace.T))
            return psi12, psi21

        k = np.asarray(k, dtype=complex)[..., None, None]
        z = self.centers
        dz = z[:, None] - z[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            k12 = np.exp(1j * np.conj(k) * dz) / (4.0 * np.pi * dz)
            k21 = np.conj(np.exp(1j * k * dz) / (4.0 * np.pi * dz))
        eye = np.eye(self.L, dtype=bool)
        k12[..., eye] = 0.0
        k21[..., eye] = 0.0
        psi12 = self.ds * np.einsum("...lm,...m->...l", k12, d2) + d2 / (4.0 * z)
        psi21 = self.ds * np.einsum("...lm,...m->...l", k21, d1) + d1 / (4.0 * np.conj(z))
        return psi12, psi21


def solve_traces(m_gamma: DNMatrix, m_one: DNMatrix, grid: KGrid,
                 workers: int = 1, chunk: int = 2048,
                 trace_method: str = "quadrature") -> CGOTraceSet:
    """Solve the boundary systems and psi traces for every k on the grid.

    Each k is independent; ``workers > 1`` splits the grid across processes
    with the DN matrices shared read-only.
    """
    solver = BoundaryTraceSolver(m_gamma, m_one, trace_method=trace_method)
    ks = grid.points.ravel()
    chunks = [ks[i:i + chunk] for i in range(0, len(ks), chunk)]

    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(
                workers, initializer=_init_worker, initargs=(solver,)) as pool:
            parts = pool.map(_solve_chunk_worker, chunks)
    else:
        parts = [_solve_chunk(solver, c) for c in chunks]

    out = [np.concatenate([p[i] for p in parts], axis=0) for i in range(6)]
    shape = grid.points.shape + (solver.L,)
    u1, u2, psi12, psi21, d1, d2 = (a.reshape(shape) for a in out)
    finite = np.isfinite(u1).all(axis=-1) & np.isfinite(u2).all(axis=-1) \
        & np.isfinite(psi12).all(axis=-1) & np.isfinite(psi21).all(axis=-1)
    for a in (u1, u2, psi12, psi21, d1, d2):
        a[~finite] = 0.0
    return CGOTraceSet(grid=grid, electrode_angles=solver.angles,
                       u1=u1, u2=u2, psi12=psi12, psi21=psi21,
                       delta_dn_u1=d1, delta_dn_u2=d2, valid=finite)


_WORKER_SOLVER: BoundaryTraceSolver | None = None


def _init_worker(solver):
    global _WORKER_SOLVER
    _WORKER_SOLVER = solver


def _solve_chunk_worker(ks):
    return _solve_chunk(_WORKER_SOLVER, ks)


def _solve_chunk(solver, ks):
    u1, u2 = solver.solve_u(ks)
    d1 = solver.delta_dn(u1)
    d2 = solver.delta_dn(u2)
    psi12, psi21 = solver.psi(ks, d1, d2)
    return u1, u2, psi12, psi21, d1, d2
