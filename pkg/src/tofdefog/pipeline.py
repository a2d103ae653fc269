"""End-to-end orchestration: defog runs, scene files, run manifests."""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import CameraModel, DepthImage, PhasorImage
from .forward import MeasuredScattering, MediumParams, ScatterProfile, SceneSpec
from .gridfile import read_grid, write_grid
from .irls import IrlsState, ScatteringField, SolverConfig, binarize_weights, estimate_scattering
from .recon import ObjectMask, fuse_masks, reconstruct_depth, recover_direct

THREADS_ENV = "TOFDEFOG_THREADS"


def max_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        return 2
    return max(n, 1)


@dataclass
class DefogResult:
    amp_coarse: IrlsState
    amp_fine: IrlsState
    phase_coarse: IrlsState
    phase_fine: IrlsState
    scattering_amp: ScatteringField
    scattering_phase: ScatteringField
    mask_amp: ObjectMask
    mask_phase: ObjectMask
    fused_mask: ObjectMask
    direct: PhasorImage
    depth: DepthImage

    def solver_summary(self) -> dict:
        out = {}
        for name, state in (
            ("amplitude_coarse", self.amp_coarse),
            ("amplitude_fine", self.amp_fine),
            ("phase_coarse", self.phase_coarse),
            ("phase_fine", self.phase_fine),
        ):
            out[name] = {
                "outer_iterations": state.outer_iterations,
                "objective_history": state.objective_history,
                "cg_iterations": state.cg_iterations,
                "sigma": state.sigma,
            }
        return out


def defog(obs: PhasorImage, cam: CameraModel,
          amp_cfg: SolverConfig, phase_cfg: SolverConfig,
          threads: int | None = None) -> DefogResult:
    """Estimate scattering in both domains, fuse masks, recover depth.

    The amplitude and phase solvers are independent and may run
    concurrently; the thread count is capped by the TOFDEFOG_THREADS
    environment variable.  Results do not depend on the execution order.
    """
    threads = max_threads() if threads is None else max(threads, 1)
    if threads >= 2:
        with ThreadPoolExecutor(max_workers=2) as pool:
            amp_future = pool.submit(estimate_scattering, obs.amplitude, amp_cfg)
            phase_future = pool.submit(estimate_scattering, obs.phase, phase_cfg)
            amp_coarse, amp_fine, scat_amp = amp_future.result()
            phase_coarse, phase_fine, scat_phase = phase_future.result()
    else:
        amp_coarse, amp_fine, scat_amp = estimate_scattering(obs.amplitude, amp_cfg)
        phase_coarse, phase_fine, scat_phase = estimate_scattering(obs.phase, phase_cfg)

    mask_amp = binarize_weights(amp_fine.w, amp_cfg.mask_threshold)
    mask_phase = binarize_weights(phase_fine.w, phase_cfg.mask_threshold)
    fused = fuse_masks(mask_amp, mask_phase)
    direct = recover_direct(obs, scat_amp, scat_phase)
    depth = reconstruct_depth(direct, cam, fused)
    return DefogResult(
        amp_coarse=amp_coarse, amp_fine=amp_fine,
        phase_coarse=phase_coarse, phase_fine=phase_fine,
        scattering_amp=scat_amp, scattering_phase=scat_phase,
        mask_amp=mask_amp, mask_phase=mask_phase, fused_mask=fused,
        direct=direct, depth=depth,
    )


# -- scene documents ---------------------------------------------------------

def load_scene(path) -> SceneSpec:
    """Read a scene JSON; grid references resolve relative to the file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(str(path)))

    def grid(name):
        return read_grid(os.path.join(base, doc[name])).values

    cam = CameraModel(**doc["camera"])
    medium = MediumParams(**doc["medium"])
    scat_doc = dict(doc.get("scattering", {"source": "analytic"}))
    source = scat_doc.pop("source", "analytic")
    if source == "analytic":
        scattering = ScatterProfile(**scat_doc)
    elif source == "measured-image":
        scattering = MeasuredScattering(
            amplitude=read_grid(os.path.join(base, scat_doc["amplitude"])).values,
            phase=read_grid(os.path.join(base, scat_doc["phase"])).values,
        )
    else:
        raise ValueError(f"unknown scattering source {source!r}")
    labels = None
    if "labels_map" in doc:
        labels = np.rint(grid("labels_map")).astype(np.int64)
    return SceneSpec(
        depth_map=grid("depth_map"),
        reflectance_map=grid("reflectance_map"),
        cam=cam,
        medium=medium,
        scattering=scattering,
        labels=labels,
    )


def save_scene(scene: SceneSpec, path) -> None:
    """Write a scene JSON plus its referenced grids next to it."""
    base = os.path.dirname(os.path.abspath(str(path)))
    os.makedirs(base, exist_ok=True)
    write_grid(os.path.join(base, "depth_gt.tofgrid"), scene.depth_map, "depth")
    write_grid(os.path.join(base, "reflectance.tofgrid"), scene.reflectance_map,
               "amplitude", units="albedo")
    doc = {
        "camera": {
            "modulation_frequency_hz": scene.cam.modulation_frequency_hz,
            "rows": scene.cam.rows,
            "cols": scene.cam.cols,
        },
        "medium": {
            "beta": scene.medium.beta,
            "g": scene.medium.g,
            "z0": scene.medium.z0,
            "z_saturate": scene.medium.z_saturate,
        },
        "depth_map": "depth_gt.tofgrid",
        "reflectance_map": "reflectance.tofgrid",
    }
    if isinstance(scene.scattering, ScatterProfile):
        p = scene.scattering
        doc["scattering"] = {
            "source": "analytic",
            "flip_row": p.flip_row,
            "amplitude_falloff": p.amplitude_falloff,
            "phase_falloff": p.phase_falloff,
        }
        if p.amplitude_peak is not None:
            doc["scattering"]["amplitude_peak"] = p.amplitude_peak
        if p.phase_peak is not None:
            doc["scattering"]["phase_peak"] = p.phase_peak
    else:
        write_grid(os.path.join(base, "scattering_amp_in.tofgrid"),
                   scene.scattering.amplitude, "amplitude")
        write_grid(os.path.join(base, "scattering_phase_in.tofgrid"),
                   scene.scattering.phase, "phase")
        doc["scattering"] = {
            "source": "measured-image",
            "amplitude": "scattering_amp_in.tofgrid",
            "phase": "scattering_phase_in.tofgrid",
        }
    if scene.labels is not None:
        write_grid(os.path.join(base, "labels.tofgrid"),
                   scene.labels.astype(np.float64), "label")
        doc["labels_map"] = "labels.tofgrid"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


# -- run manifests ------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, config: dict, inputs: list, outputs: list,
                   solver: dict | None = None, timings: dict | None = None) -> dict:
    return {
        "tool": "tofdefog",
        "command": command,
        "created_unix": time.time(),
        "config": config,
        "inputs": {os.path.basename(str(p)): file_sha256(p) for p in inputs},
        "input_paths": {os.path.basename(str(p)): os.path.abspath(str(p)) for p in inputs},
        "outputs": {os.path.basename(str(p)): file_sha256(p) for p in outputs},
        "solver": solver or {},
        "timings_s": timings or {},
    }


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
