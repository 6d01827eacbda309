"""Discrete Dirichlet-to-Neumann matrices in the trigonometric basis.

The measured data are electrode currents and voltages.  With currents
normalized to unit l2-norm (and voltages scaled by the same per-pattern
factor), the matrix of inner products R[m, j] = <t^m, v^j> approximates the
Neumann-to-Dirichlet map.  Its inverse, multiplied by the geometry factor
L / (2 pi r), is the matrix of the DN map of the radius-r disk in the trig
basis orthonormalized on the boundary circle.  Multiplying the entries by r
then yields the DN matrix of the equivalent unit-disk problem, which is the
scaling all reconstruction formulas assume.

Applying the difference (DN_gamma - DN_1) to point samples at the electrode
centers reduces to synthesis . matrix . analysis with the same normalized
patterns, exact on their span and annihilating constants.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["DNMatrix", "trig_basis", "build_dn", "scale_to_unit_disk",
           "scale_background", "apply_delta_dn", "save_dn_csv", "load_dn_csv"]


def trig_basis(L: int) -> np.ndarray:
    """Columns: the L-1 trig patterns at angles 2*pi*l/L, unit l2-norm."""
    theta = 2.0 * np.pi * np.arange(1, L + 1) / L
    cols = []
    for j in range(1, L):
        if j <= L // 2:
            v = np.cos(j * theta)
        else:
            v = np.sin((L // 2 - j) * theta)
        cols.append(v / np.linalg.norm(v))
    return np.column_stack(cols)


@dataclass(frozen=True)
class DNMatrix:
    """DN map matrix in the normalized trig-pattern basis.

    ``entries`` is (L-1) x (L-1).  ``radius`` records the disk the data came
    from; ``radius_scaled`` is set once the unit-disk scaling has been
    applied.  ``background`` is the admittivity the map was rescaled by
    (1 when unscaled).
    """

    entries: np.ndarray
    electrode_angles: np.ndarray
    radius: float
    radius_scaled: bool = False
    background: complex = 1.0 + 0.0j

    @property
    def n_electrodes(self) -> int:
        return len(self.electrode_angles)

    def basis(self) -> np.ndarray:
        return trig_basis(self.n_electrodes)

    @classmethod
    def from_eigenvalues(cls, eigenvalues, L: int) -> "DNMatrix":
        """Diagonal DN matrix of a rotationally symmetric unit-disk problem.

        ``eigenvalues`` maps mode number n >= 1 to the DN eigenvalue; the
        trig patterns j = 1..L/2 carry mode j and j = L/2+1..L-1 carry mode
        j - L/2.
        """
        lam = [eigenvalues(j if j <= L // 2 else j - L // 2) for j in range(1, L)]
        return cls(entries=np.diag(np.asarray(lam, dtype=complex)),
                   electrode_angles=2.0 * np.pi * np.arange(1, L + 1) / L,
                   radius=1.0, radius_scaled=True)


def build_dn(patterns, voltages: np.ndarray, radius: float) -> DNMatrix:
    """DN matrix from applied currents and measured (grounded) voltages.

    Currents are normalized to unit l2-norm and the voltages scaled by the
    same factor; the resulting ND inner-product matrix is inverted.
    """
    currents = np.array([p.values for p in patterns])
    V = np.asarray(voltages, dtype=complex)
    if currents.shape != V.shape:
        raise ValueError("need one voltage vector per current pattern")
    P, L = currents.shape
    if P != L - 1:
        raise ValueError(f"need L-1 = {L-1} patterns, got {P}")
    norms = np.linalg.norm(currents, axis=1)
    T = currents / norms[:, None]
    if not np.allclose(T @ T.T, np.eye(P), atol=1e-10):
        raise ValueError("current patterns are not orthonormal after scaling")
    nd = T @ (V / norms[:, None]).T
    cond = np.linalg.cond(nd)
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError(f"ND matrix is singular (cond {cond:.2e})")
    entries = np.linalg.inv(nd) * (L / (2.0 * np.pi * radius))
    return DNMatrix(entries=entries,
                    electrode_angles=2.0 * np.pi * np.arange(1, L + 1) / L,
                    radius=radius)


def scale_to_unit_disk(m: DNMatrix, r: float) -> DNMatrix:
    """Rescale data from a radius-r disk to the unit disk (entries * r)."""
    if m.radius_scaled:
        raise ValueError("DN matrix already scaled to the unit disk")
    if abs(r - m.radius) > 1e-12 * max(1.0, m.radius):
        raise ValueError(f"scaling radius {r} does not match data radius {m.radius}")
    return replace(m, entries=m.entries * r, radius_scaled=True)


def scale_background(m: DNMatrix, gamma0: complex) -> DNMatrix:
    """Rescale the map to the unit-background problem gamma/gamma0.

    Since the admittivity equation is invariant under constant rescaling of
    its coefficient, DN_{gamma/gamma0} = DN_gamma / gamma0: for a phantom
    whose admittivity equals gamma0 near the boundary this makes the scaled
    map agree with DN_1 on high-order modes, which is what the
    reconstruction of the scaled problem assumes.  The reconstruction is
    multiplied back by gamma0 at the end.
    """
    if gamma0.real <= 0:
        raise ValueError("background admittivity must have positive real part")
    return replace(m, entries=m.entries / gamma0, background=gamma0)


def apply_delta_dn(m_gamma: DNMatrix, m_one: DNMatrix, f: np.ndarray) -> np.ndarray:
    """Point samples of (DN_gamma - DN_1) f at the electrode centers.

    ``f`` holds samples of a boundary function at the electrode centers
    (trailing axis); the action is exact on the span of the trig basis.
    """
    if m_gamma.radius_scaled != m_one.radius_scaled:
        raise ValueError("DN matrices have mismatched radius scaling")
    if not np.allclose(m_gamma.electrode_angles, m_one.electrode_angles):
        raise ValueError("DN matrices use different electrode layouts")
    phi = m_gamma.basis()
    delta = m_gamma.entries - m_one.entries
    return np.asarray(f, dtype=complex) @ phi @ delta.T @ phi.T


def save_dn_csv(m: DNMatrix, path) -> None:
    """CSV with a metadata header, then the Re block and the Im block."""
    n = m.entries.shape[0]
    with open(path, "w") as f:
        f.write(f"# dn_matrix L={m.n_electrodes} radius={m.radius!r} "
                f"radius_scaled={int(m.radius_scaled)} "
                f"background={m.background.real!r}{m.background.imag:+}j "
                f"normalization=unit-l2-trig-patterns\n")
        for block in (m.entries.real, m.entries.imag):
            for i in range(n):
                f.write(",".join(f"{x:.17e}" for x in block[i]) + "\n")


def load_dn_csv(path) -> DNMatrix:
    with open(path) as f:
        head = f.readline().split()
        meta = dict(kv.split("=") for kv in head[2:])
        rows = [np.fromstring(line, sep=",") for line in f]
    n = len(rows) // 2
    entries = np.array(rows[:n]) + 1j * np.array(rows[n:])
    L = int(meta["L"])
    return DNMatrix(entries=entries,
                    electrode_angles=2.0 * np.pi * np.arange(1, L + 1) / L,
                    radius=float(meta["radius"]),
                    radius_scaled=bool(int(meta["radius_scaled"])),
                    background=complex(meta["background"]))
