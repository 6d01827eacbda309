"""End-to-end pipeline: simulate -> DN -> traces -> scattering -> D-bar -> image.

Every stage writes its artifacts before the next starts, so a failing run
leaves partial results behind and reports the stage that broke.  Timings go
to a separate file (timings.json) so that the value-bearing artifacts of two
identical runs compare bit-for-bit.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from . import cgo, dbar, dn_map, fem, mesh, phantom, reconstruct, scattering
from .config import RunConfig, save_config

__all__ = ["StageError", "run_pipeline", "run_simulate", "run_reconstruct",
           "compare_runs"]


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def _load_phantom(cfg: RunConfig) -> phantom.AdmittivityField:
    if cfg.phantom_file:
        return phantom.load_phantom_file(cfg.phantom_file)
    return phantom.chest_phantom(cfg.preset)


def run_simulate(cfg: RunConfig, out: Path, timings: dict) -> dict:
    """Stages 'simulate' and 'dn': voltages for gamma and for gamma == 1,
    then the scaled DN matrices."""
    state: dict = {}
    stage = "simulate"
    try:
        t0 = time.perf_counter()
        fld = _load_phantom(cfg)
        layout = mesh.ElectrodeLayout(count=cfg.electrodes, width=cfg.electrode_width,
                                      contact_impedance=complex(cfg.contact_impedance))
        msh = mesh.build_disk_mesh(cfg.radius, cfg.target_triangles, layout)
        mesh.save_mesh(msh, out / "mesh.txt")
        phantom.write_phantom_file(fld, out / "phantom.ini")
        patterns = fem.trig_patterns(cfg.electrodes, cfg.current_amplitude)
        one = phantom.AdmittivityField(regions=(), background=1.0 + 0.0j,
                                       domain_radius=cfg.radius)
        _, v_gamma = fem.solve_cem(msh, fld, layout, patterns)
        _, v_one = fem.solve_cem(msh, one, layout, patterns)
        v_gamma = fem.add_noise(v_gamma, cfg.noise_eta, cfg.noise_seed)
        fem.save_voltages_csv(v_gamma, out / "voltages_gamma.csv")
        fem.save_voltages_csv(v_one, out / "voltages_one.csv")
        state.update(field=fld, patterns=patterns, v_gamma=v_gamma, v_one=v_one)
        timings[stage] = time.perf_counter() - t0
    except Exception as e:
        raise StageError(stage, e) from e

    stage = "dn"
    try:
        t0 = time.perf_counter()
        gamma0 = complex(state["field"].background)
        dn_gamma = dn_map.build_dn(state["patterns"], state["v_gamma"], cfg.radius)
        dn_one = dn_map.build_dn(state["patterns"], state["v_one"], cfg.radius)
        dn_gamma = dn_map.scale_to_unit_disk(dn_gamma, cfg.radius)
        dn_one = dn_map.scale_to_unit_disk(dn_one, cfg.radius)
        dn_gamma = dn_map.scale_background(dn_gamma, gamma0)
        dn_map.save_dn_csv(dn_gamma, out / "dn_gamma.csv")
        dn_map.save_dn_csv(dn_one, out / "dn_one.csv")
        state.update(dn_gamma=dn_gamma, dn_one=dn_one, gamma0=gamma0)
        timings[stage] = time.perf_counter() - t0
    except Exception as e:
        raise StageError(stage, e) from e
    return state


def run_reconstruct(cfg: RunConfig, out: Path, timings: dict,
                    state: dict | None = None) -> dict:
    """Stages 'traces' through 'recon', reading DN artifacts when needed."""
    if state is None or "dn_gamma" not in state:
        state = dict(state or {})
        state["dn_gamma"] = dn_map.load_dn_csv(out / "dn_gamma.csv")
        state["dn_one"] = dn_map.load_dn_csv(out / "dn_one.csv")
        state["gamma0"] = complex(state["dn_gamma"].background)
        if (out / "phantom.ini").exists():
            state["field"] = phantom.load_phantom_file(out / "phantom.ini")
    workers = cfg.effective_workers()

    stage = "traces"
    try:
        t0 = time.perf_counter()
        grid = cgo.KGrid(K=cfg.cutoff, n=cfg.kgrid_n)
        traces = cgo.solve_traces(state["dn_gamma"], state["dn_one"], grid,
                                  workers=workers, trace_method=cfg.trace_method)
        state["traces"] = traces
        timings[stage] = time.perf_counter() - t0
    except Exception as e:
        raise StageError(stage, e) from e

    stage = "scattering"
    try:
        t0 = time.perf_counter()
        s = scattering.compute_s(state["traces"])
        radius = cfg.truncation_radius or cfg.cutoff
        s = scattering.truncate(s, mode=cfg.truncation, radius=radius)
        s = scattering.to_odd_grid(s, m=cfg.odd_m)
        scattering.save_scattering_csv(s, out / "scattering.csv")
        state["scattering"] = s
        timings[stage] = time.perf_counter() - t0
    except Exception as e:
        raise StageError(stage, e) from e

    stage = "dbar"
    try:
        t0 = time.perf_counter()
        z_axis = np.linspace(-cfg.z_extent, cfg.z_extent, cfg.z_n)
        field = dbar.solve_all_z(s, z_axis=z_axis, tol=cfg.gmres_tol,
                                 restart=cfg.gmres_restart, maxiter=cfg.gmres_maxiter,
                                 workers=workers, batch=cfg.z_batch,
                                 z_mask=cfg.z_mask, warm_start=cfg.warm_start)
        dbar.save_field_bin(field, out / "mfield.bin")
        state["mfield"] = field
        timings[stage] = time.perf_counter() - t0
    except Exception as e:
        raise StageError(stage, e) from e

    stage = "recon"
    try:
        t0 = time.perf_counter()
        m_plus, m_minus = reconstruct.m_plus_minus(field)
        q = reconstruct.compute_q(m_plus, m_minus, field.h_z, solved=field.solved)
        loggamma = reconstruct.cauchy_transform_loggamma(q, "Q21")
        result = reconstruct.finalize(loggamma, state["gamma0"], field.z_axis,
                                      metadata={"cutoff": cfg.cutoff,
                                                "truncation": s.truncation,
                                                "kgrid_n": cfg.kgrid_n,
                                                "odd_m": cfg.odd_m,
                                                "z_n": cfg.z_n,
                                                "gmres_tol": cfg.gmres_tol})
        reconstruct.save_recon_csv(result, out / "sigma.csv", out / "epsilon.csv")
        reconstruct.save_heatmap_ppm(result.sigma, out / "sigma.ppm")
        reconstruct.save_heatmap_ppm(result.epsilon, out / "epsilon.ppm")
        state["result"] = result
        _write_metrics(cfg, state, out)
        timings[stage] = time.perf_counter() - t0
    except Exception as e:
        raise StageError(stage, e) from e
    return state


def run_pipeline(cfg: RunConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.ini")
    timings: dict = {}
    try:
        state = run_simulate(cfg, out, timings)
        state = run_reconstruct(cfg, out, timings, state)
    finally:
        with open(out / "timings.json", "w") as f:
            json.dump({k: round(v, 3) for k, v in timings.items()}, f,
                      indent=2, sort_keys=True)
            f.write("\n")
    return state


def _write_metrics(cfg: RunConfig, state: dict, out: Path) -> None:
    result: reconstruct.ReconResult = state["result"]
    fld: phantom.AdmittivityField | None = state.get("field")
    z = result.z_axis[None, :] + 1j * result.z_axis[:, None]

    metrics: dict = {
        "clamped_pixels": result.clamped_pixels,
        "background": [result.background.real, result.background.imag],
        "metadata": result.metadata,
        "gmres_iterations_max": int(state["mfield"].iterations.max()),
        "gmres_residual_max": state["mfield"].max_residual,
        "scattering_zeroed_nonfinite": state["scattering"].zeroed_nonfinite,
    }

    sig, eps = result.sigma, result.epsilon
    for name, plane in (("sigma", sig), ("epsilon", eps)):
        imax = np.unravel_index(np.nanargmax(plane), plane.shape)
        imin = np.unravel_index(np.nanargmin(plane), plane.shape)
        metrics[f"{name}_max"] = float(plane[imax])
        metrics[f"{name}_min"] = float(plane[imin])
        metrics[f"{name}_argmax"] = [float(z[imax].real), float(z[imax].imag)]
        metrics[f"{name}_argmin"] = [float(z[imin].real), float(z[imin].imag)]

    if fld is not None:
        values = [fld.background] + [r.value for r in fld.regions]
        smax, smin = max(v.real for v in values), min(v.real for v in values)
        emax, emin = max(v.imag for v in values), min(v.imag for v in values)
        metrics["truth_sigma_range"] = [smin, smax]
        metrics["truth_epsilon_range"] = [emin, emax]
        if smax > smin:
            metrics["dynamic_range_sigma"] = reconstruct.dynamic_range(sig, smax, smin)
        else:
            metrics["dynamic_range_sigma"] = None
        if emax > emin:
            metrics["dynamic_range_epsilon"] = reconstruct.dynamic_range(eps, emax, emin)
        else:
            metrics["dynamic_range_epsilon"] = None
        if smax == smin and emax == emin:
            metrics["dynamic_range_undefined"] = True

        unit = z  # reconstruction grid is unit-disk scaled
        masks = phantom.organ_masks(fld, unit, dilate=2)
        for name, plane in (("sigma", sig), ("epsilon", eps)):
            imax = np.unravel_index(np.nanargmax(plane), plane.shape)
            imin = np.unravel_index(np.nanargmin(plane), plane.shape)
            metrics[f"{name}_max_region"] = next(
                (nm for nm, m in masks.items() if m[imax]), "background")
            metrics[f"{name}_min_region"] = next(
                (nm for nm, m in masks.items() if m[imin]), "background")
            for nm, m in masks.items():
                metrics[f"{name}_mean_{nm}"] = float(np.nanmean(plane[m]))

    reconstruct.save_metrics_json(metrics, out / "metrics.json")


# --- comparing two runs ---------------------------------------------------------

_COMPARE_SKIP = {"timings.json", "config.ini"}


def compare_runs(dir_a, dir_b) -> dict:
    """Sup-norm and relative-L2 differences per shared numeric artifact."""
    a, b = Path(dir_a), Path(dir_b)
    report: dict = {}
    names = sorted(p.name for p in a.iterdir()
                   if p.is_file() and p.name not in _COMPARE_SKIP)
    for name in names:
        pb = b / name
        if not pb.exists():
            report[name] = {"missing_in_b": True}
            continue
        va = _load_numeric(a / name)
        vb = _load_numeric(pb)
        if va is None:
            report[name] = {"identical_bytes":
                            (a / name).read_bytes() == pb.read_bytes()}
            continue
        if va.shape != vb.shape:
            raise ValueError(f"{name}: shape mismatch {va.shape} vs {vb.shape}")
        d = np.abs(va - vb)
        denom = np.linalg.norm(np.nan_to_num(va))
        report[name] = {
            "sup": float(np.nanmax(d)) if d.size else 0.0,
            "rel_l2": float(np.linalg.norm(np.nan_to_num(va - vb))
                            / (denom if denom > 0 else 1.0)),
        }
    return report


def _load_numeric(path: Path):
    if path.suffix == ".csv":
        skip = 1 if _has_header(path) else 0
        try:
            return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
        except ValueError:
            return None
    if path.suffix == ".bin":
        comps = dbar.load_field_bin(path)
        return np.stack(comps)
    return None


def _has_header(path: Path) -> bool:
    with open(path) as f:
        first = f.readline()
    head = first.split(",")[0].strip().lstrip("-")
    try:
        float(head)
        return False
    except ValueError:
        return True
