"""Measurement-range simulation: saturation and residual-direct curves.

Sweeping an object over depth z produces four curves: the backscatter
amplitude and phase accumulated up to z, and the residuals left after
subtracting that backscatter from the total observation, which show how
much direct component survives at each depth.  The usable measurement
range sits between the depth where the backscatter has saturated and the
depth where the residual direct component disappears into it.

Curve values are raw model units (reflectance / mm^2 for amplitudes,
radians for phases).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import CameraModel, wrap_phase
from .forward import MediumParams, direct_phasor, scattering_phasor

DEFAULT_Z_GRID = (10.0, 10000.0, 10.0)  # start, stop, step (mm)


@dataclass
class RangeSweep:
    """Depth-sweep curves; see module docstring for units."""

    z_mm: np.ndarray
    alpha_s: np.ndarray
    phi_s: np.ndarray
    residual_amp: np.ndarray
    residual_phase: np.ndarray


def default_z_grid(medium: MediumParams, cam: CameraModel) -> np.ndarray:
    start, stop, step = DEFAULT_Z_GRID
    start = max(start, medium.z0)
    stop = min(stop + 0.5 * step, cam.unambiguous_range_mm)
    return np.arange(start, stop, step)


def sweep(medium: MediumParams, cam: CameraModel, reflectance: float = 1.0,
          z_grid=None) -> RangeSweep:
    """Evaluate the saturation and residual curves over a depth grid."""
    if z_grid is None:
        z_grid = default_z_grid(medium, cam)
    z_grid = np.asarray(z_grid, dtype=np.float64)
    if z_grid.size == 0 or np.any(np.diff(z_grid) <= 0):
        raise ValueError("z_grid must be non-empty and strictly increasing")
    if z_grid[0] < medium.z0 or z_grid[-1] >= cam.unambiguous_range_mm:
        raise ValueError("z_grid must lie within [z0, unambiguous range)")

    scat = np.array([scattering_phasor(z, medium, cam) for z in z_grid])
    direct = direct_phasor(z_grid, reflectance, medium, cam)
    total = direct + scat

    alpha_s = np.abs(scat)
    # zero scattering carries no phase; report 0 by convention
    phi_s = np.where(alpha_s > 0, wrap_phase(np.angle(scat)), 0.0)
    residual_amp = np.abs(total) - alpha_s
    residual_phase = wrap_phase(np.angle(total) - np.where(alpha_s > 0, np.angle(scat), 0.0))

    return RangeSweep(
        z_mm=z_grid,
        alpha_s=alpha_s,
        phi_s=phi_s,
        residual_amp=residual_amp,
        residual_phase=residual_phase,
    )


def find_range(sweep_: RangeSweep, sat_tol: float = 0.01,
               bg_tol: float = 0.01) -> tuple[float, float]:
    """Usable measurement range (z_saturate, z_background) from the curves.

    z_saturate: smallest z whose backscatter amplitude is within sat_tol of
    the far-end value.  z_background: smallest z where the residual direct
    amplitude has dropped below bg_tol of the saturated backscatter level
    (the signal it has to be distinguished from); math.inf when the direct
    component never becomes negligible, e.g. beta = 0.
    """
    if not (0 < sat_tol < 1) or not (0 < bg_tol < 1):
        raise ValueError("tolerances must lie in (0, 1)")
    alpha_max = float(sweep_.alpha_s[-1])
    if alpha_max <= 0.0:
        z_sat = float(sweep_.z_mm[0])
        return z_sat, math.inf
    sat_ok = (1.0 - sweep_.alpha_s / alpha_max) < sat_tol
    z_sat = float(sweep_.z_mm[np.argmax(sat_ok)]) if sat_ok.any() else math.inf
    bg_ok = np.abs(sweep_.residual_amp) < bg_tol * float(np.max(sweep_.alpha_s))
    z_bg = float(sweep_.z_mm[np.argmax(bg_ok)]) if bg_ok.any() else math.inf
    return z_sat, z_bg


def write_csv(sweep_: RangeSweep, path):
    """Emit the sweep as CSV: z_mm, alpha_s, phi_s, residual_amp, residual_phase."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_mm", "alpha_s", "phi_s", "residual_amp", "residual_phase"])
        for i in range(sweep_.z_mm.size):
            writer.writerow(
                [
                    f"{sweep_.z_mm[i]:.6g}",
                    f"{sweep_.alpha_s[i]:.9e}",
                    f"{sweep_.phi_s[i]:.9e}",
                    f"{sweep_.residual_amp[i]:.9e}",
                    f"{sweep_.residual_phase[i]:.9e}",
                ]
            )


def write_gnuplot_script(csv_path, script_path, png_path=None):
    """Companion gnuplot script plotting the four curves from the CSV."""
    png_path = png_path or str(csv_path) + ".png"
    lines = [
        "set datafile separator ','",
        f"set output '{png_path}'",
        "set terminal pngcairo size 1200,800",
        "set multiplot layout 2,2",
        "set xlabel 'z (mm)'",
        f"plot '{csv_path}' using 1:2 with lines title 'alpha_s'",
        f"plot '{csv_path}' using 1:3 with lines title 'phi_s'",
        f"plot '{csv_path}' using 1:4 with lines title 'residual amplitude'",
        f"plot '{csv_path}' using 1:5 with lines title 'residual phase'",
        "unset multiplot",
    ]
    with open(script_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
