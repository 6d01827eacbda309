"""Run configuration: flat INI sections with paper-default values."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

__all__ = ["RunConfig", "load_config", "save_config", "apply_overrides"]


@dataclass(frozen=True)
class RunConfig:
    # phantom
    preset: str = "example1"
    phantom_file: str = ""
    # forward problem
    radius: float = 0.15
    electrodes: int = 32
    electrode_width: float = 0.029
    contact_impedance: float = 0.0057
    current_amplitude: float = 0.002
    target_triangles: int = 4538
    noise_eta: float = 0.0
    noise_seed: int = 42
    # scattering
    cutoff: float = 5.5
    kgrid_n: int = 128
    trace_method: str = "quadrature"
    truncation: str = "square"
    truncation_radius: float = 0.0       # 0 -> use cutoff
    odd_m: int = 64
    # dbar solve
    gmres_tol: float = 1e-6
    gmres_restart: int = 30
    gmres_maxiter: int = 200
    z_n: int = 128
    z_extent: float = 1.1
    z_mask: str = "disk"
    z_batch: int = 8
    warm_start: bool = True
    # run
    workers: int = 0                      # 0 -> min(4, cpu count)

    def __post_init__(self):
        numeric = ["radius", "electrode_width", "contact_impedance",
                   "current_amplitude", "cutoff", "gmres_tol", "z_extent"]
        for name in numeric:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ["electrodes", "target_triangles", "kgrid_n", "odd_m",
                     "gmres_restart", "gmres_maxiter", "z_n", "z_batch"]:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_eta < 0:
            raise ValueError("noise_eta must be >= 0")
        if self.odd_m * 2 + 1 > 2 * self.kgrid_n:
            raise ValueError("odd grid finer than twice the scattering grid")

    def effective_workers(self) -> int:
        if self.workers > 0:
            return self.workers
        import os
        return max(1, min(4, os.cpu_count() or 1))


_SECTIONS = {
    "phantom": ["preset", "phantom_file"],
    "forward": ["radius", "electrodes", "electrode_width", "contact_impedance",
                "current_amplitude", "target_triangles", "noise_eta", "noise_seed"],
    "scattering": ["cutoff", "kgrid_n", "trace_method", "truncation",
                   "truncation_radius", "odd_m"],
    "dbar": ["gmres_tol", "gmres_restart", "gmres_maxiter", "z_n", "z_extent",
             "z_mask", "z_batch", "warm_start"],
    "run": ["workers"],
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(name: str, raw: str):
    t = _FIELD_TYPES[name]
    if t == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser()
    if not cp.read(str(path)):
        raise FileNotFoundError(path)
    kwargs = {}
    for section, names in _SECTIONS.items():
        if not cp.has_section(section):
            continue
        for name in names:
            if cp.has_option(section, name):
                kwargs[name] = _convert(name, cp.get(section, name))
    return RunConfig(**kwargs)


def save_config(cfg: RunConfig, path) -> None:
    cp = configparser.ConfigParser()
    for section, names in _SECTIONS.items():
        cp[section] = {n: str(getattr(cfg, n)) for n in names}
    with open(path, "w") as f:
        cp.write(f)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` or ``key=value`` command-line overrides."""
    updates = {}
    for item in overrides:
        key, _, value = item.partition("=")
        if not value:
            raise ValueError(f"override {item!r} is not key=value")
        name = key.split(".")[-1].strip()
        if name not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {name!r}")
        updates[name] = _convert(name, value)
    return replace(cfg, **updates)
