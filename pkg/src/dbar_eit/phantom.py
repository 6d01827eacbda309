"""Complex admittivity phantoms on a disk.

A phantom is a piecewise-constant admittivity gamma = sigma + i*eps defined
by a background value and a list of elliptical or circular inclusions.  The
chest presets place two "lungs" and one "heart" on the unit-disk layout and
scale them to the physical disk radius.

For radially layered phantoms (one concentric circular inclusion) the
Dirichlet-to-Neumann map diagonalizes on the trigonometric basis, and
``radial_dn_eigenvalue`` gives its eigenvalues in closed form.  This is the
independent oracle used to validate the finite element forward solver.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "Region",
    "AdmittivityField",
    "RadialPhantom",
    "chest_phantom",
    "load_phantom_file",
    "radial_dn_eigenvalue",
]


@dataclass(frozen=True)
class Region:
    """One inclusion: an ellipse (rotation in radians) or a disk.

    ``semi_axes = (a, b)`` are measured along the rotated x/y axes; a disk is
    an ellipse with a == b and rotation 0.
    """

    center: complex
    semi_axes: tuple[float, float]
    rotation: float
    value: complex
    name: str = ""

    def contains(self, z: np.ndarray | complex) -> np.ndarray | bool:
        w = (np.asarray(z) - self.center) * np.exp(-1j * self.rotation)
        a, b = self.semi_axes
        return (w.real / a) ** 2 + (w.imag / b) ** 2 <= 1.0

    def max_extent(self) -> float:
        return abs(self.center) + max(self.semi_axes)


@dataclass(frozen=True)
class AdmittivityField:
    """Piecewise-constant admittivity on the disk |z| <= domain_radius.

    Overlapping regions resolve by last-listed-wins.  Region geometry is
    stored in unit-disk coordinates and scaled by ``domain_radius`` when
    sampling physical points.
    """

    regions: tuple[Region, ...] = ()
    background: complex = 1.0 + 0.0j
    domain_radius: float = 0.15

    def __post_init__(self):
        if self.background.real <= 0:
            raise ValueError("background must have positive real part")
        if self.background.imag < 0:
            raise ValueError("background permittivity must be >= 0")
        for r in self.regions:
            if r.value.real <= 0:
                raise ValueError(f"region {r.name!r} must have positive real part")
            if r.value.imag < 0:
                raise ValueError(f"region {r.name!r} has negative permittivity")
            if r.max_extent() > 1.0 + 1e-12:
                raise ValueError(f"region {r.name!r} extends outside the unit-disk layout")

    def sample(self, z: complex) -> complex:
        """Admittivity at one physical point; raises outside the domain."""
        if abs(z) > self.domain_radius * (1.0 + 1e-9):
            raise ValueError(f"point {z} outside disk of radius {self.domain_radius}")
        return complex(self.sample_grid(np.asarray([z]))[0])

    def sample_grid(self, z: np.ndarray) -> np.ndarray:
        """Vectorized sampling of physical points; no domain check.

        Points outside every region get the background value, so the field
        extends by its background off the disk (used when rasterizing on a
        square grid that overhangs the domain).
        """
        zu = np.asarray(z, dtype=complex) / self.domain_radius
        out = np.full(zu.shape, complex(self.background), dtype=complex)
        for r in self.regions:  # later regions overwrite earlier ones
            out[r.contains(zu)] = r.value
        return out

    def scaled_by(self, gamma0: complex) -> "AdmittivityField":
        """Field divided by a reference admittivity (unitary near-boundary value)."""
        return AdmittivityField(
            regions=tuple(
                Region(r.center, r.semi_axes, r.rotation, r.value / gamma0, r.name)
                for r in self.regions
            ),
            background=self.background / gamma0,
            domain_radius=self.domain_radius,
        )


@dataclass(frozen=True)
class RadialPhantom:
    """Concentric circular inclusion: gamma_inner for |z| < rho, else gamma_outer.

    ``inclusion_radius`` is a fraction of the disk radius, in (0, 1).
    """

    inclusion_radius: float
    gamma_inner: complex
    gamma_outer: complex

    def __post_init__(self):
        if not 0.0 < self.inclusion_radius < 1.0:
            raise ValueError("inclusion_radius must be in (0, 1)")
        if self.gamma_inner.real <= 0 or self.gamma_outer.real <= 0:
            raise ValueError("admittivities must have positive real part")

    def as_field(self, domain_radius: float = 0.15) -> AdmittivityField:
        inner = Region(0j, (self.inclusion_radius, self.inclusion_radius), 0.0,
                       self.gamma_inner, name="inclusion")
        return AdmittivityField(regions=(inner,), background=self.gamma_outer,
                                domain_radius=domain_radius)


def radial_dn_eigenvalue(p: RadialPhantom, n: int) -> complex:
    """Unit-disk DN eigenvalue for the boundary mode e^{i n theta}.

    Separation of variables with u = A s^|n| inside and
    u = (B s^|n| + C s^{-|n|}) outside the inclusion gives

        lambda_n = |n| * gamma_outer * (1 + mu rho^{2|n|}) / (1 - mu rho^{2|n|}),
        mu = (gamma_inner - gamma_outer) / (gamma_inner + gamma_outer).

    Constant boundary functions (n = 0) are in the kernel of the DN map.
    """
    if n == 0:
        raise ValueError("n = 0: constants are in the kernel of the DN map")
    m = abs(n)
    mu = (p.gamma_inner - p.gamma_outer) / (p.gamma_inner + p.gamma_outer)
    t = mu * p.inclusion_radius ** (2 * m)
    return m * p.gamma_outer * (1.0 + t) / (1.0 - t)


# --- presets -----------------------------------------------------------------

def _parse_complex(s: str) -> complex:
    return complex(s.replace(" ", "").replace("i", "j"))


def load_phantom_file(path) -> AdmittivityField:
    """Read a phantom from a key/value preset file (INI sections).

    The ``[phantom]`` section holds ``background`` and ``domain_radius``;
    each other section is one region with ``center``, ``semi_axes``,
    ``rotation`` and ``value`` keys (unit-disk coordinates).
    """
    cp = configparser.ConfigParser()
    read = cp.read(str(path))
    if not read:
        raise FileNotFoundError(path)
    background = _parse_complex(cp["phantom"].get("background", "1+0j"))
    radius = float(cp["phantom"].get("domain_radius", "0.15"))
    regions = []
    for sec in cp.sections():
        if sec == "phantom":
            continue
        g = cp[sec]
        cx, cy = (float(v) for v in g["center"].split(","))
        a, b = (float(v) for v in g["semi_axes"].split(","))
        regions.append(Region(
            center=complex(cx, cy),
            semi_axes=(a, b),
            rotation=float(g.get("rotation", "0")),
            value=_parse_complex(g["value"]),
            name=sec,
        ))
    return AdmittivityField(regions=tuple(regions), background=background,
                            domain_radius=radius)


def chest_phantom(preset: str | None = None, *,
                  heart: complex | None = None,
                  lungs: complex | None = None,
                  background: complex | None = None,
                  domain_radius: float = 0.15) -> AdmittivityField:
    """Two lung ellipses and one heart ellipse on the unit-disk layout.

    ``preset`` is one of ``example1``/``example2``/``example3`` and reads the
    packaged geometry files; explicit organ values override the preset (or
    build the default geometry when no preset is given).
    """
    if preset is not None:
        with resources.as_file(resources.files("dbar_eit") / "presets" / f"{preset}.ini") as p:
            fld = load_phantom_file(p)
        if heart is None and lungs is None and background is None:
            return fld
        regions = tuple(
            Region(r.center, r.semi_axes, r.rotation,
                   heart if (r.name == "heart" and heart is not None) else
                   lungs if (r.name.startswith("lung") and lungs is not None) else r.value,
                   r.name)
            for r in fld.regions
        )
        return AdmittivityField(regions=regions,
                                background=background if background is not None else fld.background,
                                domain_radius=fld.domain_radius)

    heart = 1.0 + 0.0j if heart is None else heart
    lungs = 1.0 + 0.0j if lungs is None else lungs
    background = 1.0 + 0.0j if background is None else background
    return AdmittivityField(regions=_default_organs(heart, lungs),
                            background=background, domain_radius=domain_radius)


def _default_organs(heart: complex, lungs: complex) -> tuple[Region, ...]:
    return (
        Region(complex(-0.44, -0.08), (0.27, 0.50), +0.30, lungs, name="lung_left"),
        Region(complex(+0.44, -0.08), (0.27, 0.50), -0.30, lungs, name="lung_right"),
        Region(complex(+0.06, +0.50), (0.30, 0.24), 0.0, heart, name="heart"),
    )


def write_phantom_file(fld: AdmittivityField, path) -> None:
    """Write a phantom back to the preset file format."""
    cp = configparser.ConfigParser()
    cp["phantom"] = {
        "background": _fmt_complex(fld.background),
        "domain_radius": repr(fld.domain_radius),
    }
    for i, r in enumerate(fld.regions):
        cp[r.name or f"region{i}"] = {
            "center": f"{r.center.real!r}, {r.center.imag!r}",
            "semi_axes": f"{r.semi_axes[0]!r}, {r.semi_axes[1]!r}",
            "rotation": repr(r.rotation),
            "value": _fmt_complex(r.value),
        }
    with open(path, "w") as f:
        cp.write(f)


def _fmt_complex(v: complex) -> str:
    return f"{v.real!r}{v.imag:+}j".replace("+-", "-")


def organ_masks(fld: AdmittivityField, z_grid: np.ndarray, dilate: int = 0) -> dict[str, np.ndarray]:
    """Boolean masks of the phantom organs on a unit-disk z grid.

    ``z_grid`` holds unit-disk coordinates (the reconstruction grid); masks
    are optionally dilated by ``dilate`` pixels for localization checks.
    """
    from scipy.ndimage import binary_dilation

    masks: dict[str, np.ndarray] = {}
    for r in fld.regions:
        m = np.asarray(r.contains(z_grid), dtype=bool)
        if dilate > 0:
            m = binary_dilation(m, iterations=dilate)
        if r.name in masks:
            masks[r.name] = masks[r.name] | m
        else:
            masks[r.name] = m
    return masks
