"""Complete electrode model forward solver.

Solves div(gamma grad u) = 0 on a triangulated disk with the complete
electrode model: prescribed net current through each electrode, contact
impedance coupling the boundary potential to the electrode voltage, zero
flux on the gaps, and the ground condition sum(U_l) = 0 imposed through a
Lagrange multiplier.

The weak form over (u, U) with test functions (v, V) is

    int gamma grad u . grad v
      + sum_l (1/z_l) int_{e_l} (u - U_l)(v - V_l) ds  =  sum_l I_l V_l,

which yields a complex-symmetric sparse system assembled from linear
triangular elements.  Distinct current patterns reuse one factorization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DiskMesh, ElectrodeLayout
from .phantom import AdmittivityField

__all__ = ["CurrentPattern", "trig_patterns", "solve_cem", "add_noise",
           "save_voltages_csv", "load_voltages_csv"]

_CONSERVATION_TOL = 1e-12


@dataclass(frozen=True)
class CurrentPattern:
    """Per-electrode currents for one injection; charge must be conserved."""

    index: int
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        object.__setattr__(self, "values", v)
        norm = np.linalg.norm(v)
        if norm > 0 and abs(v.sum()) > _CONSERVATION_TOL * norm:
            raise ValueError(f"pattern {self.index}: currents do not sum to zero")


def trig_patterns(L: int, amplitude: float = 0.002) -> list[CurrentPattern]:
    """The L-1 trigonometric current patterns of amplitude C.

    I^j_l = C cos(j theta_l) for 1 <= j <= L/2 and
    I^j_l = C sin((L/2 - j) theta_l) for L/2 < j <= L-1, with
    theta_l = 2 pi l / L.
    """
    if L % 2 != 0:
        raise ValueError("number of electrodes must be even")
    theta = 2.0 * np.pi * np.arange(1, L + 1) / L
    out = []
    for j in range(1, L):
        if j <= L // 2:
            vals = amplitude * np.cos(j * theta)
        else:
            vals = amplitude * np.sin((L // 2 - j) * theta)
        vals = vals - vals.mean()   # kill accumulated roundoff in the sum
        out.append(CurrentPattern(index=j, values=vals))
    return out


def _assemble(mesh: DiskMesh, gamma_tri: np.ndarray):
    """CEM system matrix blocks for per-triangle admittivity values."""
    verts, tri = mesh.vertices, mesh.triangles
    n, L = len(verts), mesh.layout.count
    zc = mesh.layout.contact_impedance

    # Per-triangle gradients of the P1 hat functions.
    v0, v1, v2 = verts[tri[:, 0]], verts[tri[:, 1]], verts[tri[:, 2]]
    area2 = (np.conj(v1 - v0) * (v2 - v0)).imag          # 2 * area, positive
    # grad phi_i = rot90(opposite edge) / (2 area); encode as complex numbers.
    g = np.stack([v2 - v1, v0 - v2, v1 - v0], axis=1) * 1j / area2[:, None]
    # K_local[i, j] = gamma * area * grad_i . grad_j
    dots = (g[:, :, None] * np.conj(g[:, None, :])).real
    k_local = gamma_tri[:, None, None] * dots * (0.5 * area2)[:, None, None]

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    A = sp.coo_matrix((k_local.ravel().astype(complex), (rows, cols)),
                      shape=(n, n)).tocsr()

    # Electrode terms: boundary mass (1/z) int phi_i phi_j, coupling and diag.
    C = sp.lil_matrix((n, L), dtype=complex)
    d = np.zeros(L, dtype=complex)
    mass_r, mass_c, mass_v = [], [], []
    for l, edge_ids in enumerate(mesh.electrode_edges):
        for i, j in mesh.boundary_edges[edge_ids]:
            s = abs(verts[j] - verts[i])
            mass_r += [i, j, i, j]
            mass_c += [i, j, j, i]
            mass_v += [s / (3 * zc), s / (3 * zc), s / (6 * zc), s / (6 * zc)]
            C[i, l] -= s / (2 * zc)
            C[j, l] -= s / (2 * zc)
            d[l] += s / zc
    A = A + sp.coo_matrix((mass_v, (mass_r, mass_c)), shape=(n, n))
    return A.tocsr(), C.tocsr(), d


class CemSolver:
    """Factorized CEM operator for one mesh and admittivity."""

    def __init__(self, mesh: DiskMesh, field: AdmittivityField):
        if abs(mesh.radius - field.domain_radius) > 1e-12 * mesh.radius:
            raise ValueError("mesh radius does not match the phantom domain")
        self.mesh = mesh
        self.L = mesh.layout.count
        gamma_tri = field.sample_grid(mesh.triangle_centroids())
        A, C, d = _assemble(mesh, gamma_tri)
        n = A.shape[0]
        ones = np.ones((self.L, 1))
        K = sp.bmat([
            [A,      C,                 None],
            [C.T,    sp.diags(d),       ones],
            [None,   ones.T,            None],
        ], format="csc", dtype=complex)
        self._n = n
        self._lu = spla.splu(K)
        self._K = K

    def solve(self, pattern: CurrentPattern) -> tuple[np.ndarray, np.ndarray]:
        """Interior potential at the vertices and grounded electrode voltages."""
        I = np.asarray(pattern.values, dtype=complex)
        if np.linalg.norm(I) == 0:
            raise ValueError("all-zero current pattern")
        rhs = np.zeros(self._n + self.L + 1, dtype=complex)
        rhs[self._n:self._n + self.L] = I
        x = self._lu.solve(rhs)
        res = np.linalg.norm(self._K @ x - rhs) / np.linalg.norm(rhs)
        if res > 1e-10:
            raise RuntimeError(f"CEM solve residual {res:.2e} exceeds 1e-10")
        u = x[:self._n]
        V = x[self._n:self._n + self.L]
        return u, V - V.mean()


def solve_cem(mesh: DiskMesh, field: AdmittivityField, layout: ElectrodeLayout,
              patterns) -> tuple[np.ndarray, np.ndarray]:
    """Solve the CEM for one pattern or a list of patterns.

    Returns (potentials, voltages) with a leading pattern axis when a list
    is given.  ``layout`` must match the one the mesh was built with.
    """
    if (layout.count != mesh.layout.count
            or abs(layout.width - mesh.layout.width) > 1e-12
            or layout.contact_impedance != mesh.layout.contact_impedance):
        raise ValueError("layout differs from the one embedded in the mesh")
    solver = CemSolver(mesh, field)
    if isinstance(patterns, CurrentPattern):
        return solver.solve(patterns)
    us, vs = [], []
    for p in patterns:
        u, V = solver.solve(p)
        us.append(u)
        vs.append(V)
    return np.array(us), np.array(vs)


def add_noise(voltages: np.ndarray, eta: float, seed: int) -> np.ndarray:
    """Relative Gaussian noise, scaled per current pattern and component.

    For each pattern j the real and imaginary parts get independent N(0,1)
    vectors scaled by eta * max|Re V^j| and eta * max|Im V^j| respectively.
    Noise comes from numpy's PCG64 generator (ziggurat normals), so a seed
    fully determines the output.
    """
    if eta < 0:
        raise ValueError("noise amplitude must be >= 0")
    V = np.atleast_2d(np.asarray(voltages, dtype=complex))
    rng = np.random.default_rng(seed)
    out = np.empty_like(V)
    for j in range(V.shape[0]):
        re_amp = eta * np.max(np.abs(V[j].real))
        im_amp = eta * np.max(np.abs(V[j].imag))
        re = V[j].real + re_amp * rng.standard_normal(V.shape[1])
        im = V[j].imag + im_amp * rng.standard_normal(V.shape[1])
        out[j] = re + 1j * im
    return out.reshape(np.shape(voltages))


def save_voltages_csv(voltages: np.ndarray, path) -> None:
    """One row per pattern; Re/Im columns per electrode."""
    V = np.atleast_2d(voltages)
    L = V.shape[1]
    header = ",".join(f"re_{l+1},im_{l+1}" for l in range(L))
    flat = np.empty((V.shape[0], 2 * L))
    flat[:, 0::2] = V.real
    flat[:, 1::2] = V.imag
    np.savetxt(path, flat, delimiter=",", header=header, comments="", fmt="%.17e")


def load_voltages_csv(path) -> np.ndarray:
    flat = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return flat[:, 0::2] + 1j * flat[:, 1::2]
