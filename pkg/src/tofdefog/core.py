"""Phasor-domain image types and phase/depth conversion.

A continuous-wave ToF observation at a pixel is a complex phasor
``amplitude * exp(j*phase)``.  Observables are kept in polar form
(amplitude, phase) because that is what the sensor reports; sums and
differences go through rectangular form internally.

Conventions used throughout the package:
  * distances are millimeters, phases are radians wrapped to [0, 2*pi),
  * grids are 2-D float64 numpy arrays, row-major, shape (rows, cols).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Speed of light in mm/s; all distances in this package are millimeters.
SPEED_OF_LIGHT_MM_S = 2.99792458e11

# Below this amplitude (sensor units) the phase of a phasor is numerically
# meaningless and is reported as 0 / flagged invalid downstream.
AMPLITUDE_EPSILON = 1e-9

TWO_PI = 2.0 * np.pi


def wrap_phase(phase):
    """Wrap phase values into [0, 2*pi)."""
    return np.mod(phase, TWO_PI)


@dataclass(frozen=True)
class CameraModel:
    """Continuous-wave ToF camera: modulation frequency and sensor size."""

    modulation_frequency_hz: float
    rows: int = 424
    cols: int = 512
    speed_of_light_mm_per_s: float = SPEED_OF_LIGHT_MM_S

    def __post_init__(self):
        if not (self.modulation_frequency_hz > 0):
            raise ValueError("modulation_frequency_hz must be positive")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("sensor dimensions must be positive")

    @property
    def unambiguous_range_mm(self) -> float:
        """Largest depth representable without phase wrapping, c/(2f)."""
        return self.speed_of_light_mm_per_s / (2.0 * self.modulation_frequency_hz)

    @property
    def phase_per_mm(self) -> float:
        """Phase shift accumulated per mm of depth, 4*pi*f/c."""
        return 4.0 * np.pi * self.modulation_frequency_hz / self.speed_of_light_mm_per_s


@dataclass
class PhasorImage:
    """Paired amplitude and wrapped-phase grids of equal shape."""

    amplitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.amplitude.shape != self.phase.shape:
            raise ValueError(
                f"amplitude shape {self.amplitude.shape} != phase shape {self.phase.shape}"
            )
        if np.any(self.amplitude < 0):
            raise ValueError("amplitude must be non-negative")
        if not np.all(np.isfinite(self.amplitude)) or not np.all(np.isfinite(self.phase)):
            raise ValueError("phasor grids must be finite")
        self.phase = wrap_phase(self.phase)

    @property
    def shape(self):
        return self.amplitude.shape

    def to_complex(self) -> np.ndarray:
        """Rectangular form, amplitude * exp(j*phase)."""
        return self.amplitude * np.exp(1j * self.phase)

    @classmethod
    def from_complex(cls, values: np.ndarray) -> "PhasorImage":
        """Polar form of a complex grid.

        Pixels with modulus below AMPLITUDE_EPSILON get phase 0: the
        argument of a near-zero complex number carries no information.
        """
        values = np.asarray(values, dtype=np.complex128)
        amplitude = np.abs(values)
        phase = wrap_phase(np.angle(values))
        phase[amplitude < AMPLITUDE_EPSILON] = 0.0
        return cls(amplitude=amplitude, phase=phase)

    def valid(self) -> np.ndarray:
        """Pixels whose amplitude is large enough for the phase to be defined."""
        return self.amplitude >= AMPLITUDE_EPSILON


@dataclass
class DepthImage:
    """Metric depth grid (mm) with a validity mask.

    Invalid pixels hold +inf so depth grids round-trip through files that
    encode background as IEEE infinity.
    """

    depth: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.valid is None:
            self.valid = np.isfinite(self.depth)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.depth.shape:
            raise ValueError("depth and validity shapes differ")
        self.depth = np.where(self.valid, self.depth, np.inf)

    @property
    def shape(self):
        return self.depth.shape


def phase_to_depth(phase, cam: CameraModel):
    """Depth (mm) from phase shift: z = c*phi / (4*pi*f).

    Accepts scalars or arrays; phase must be finite and in [0, 2*pi).
    """
    phase = np.asarray(phase, dtype=np.float64)
    if not np.all(np.isfinite(phase)):
        raise ValueError("phase must be finite")
    if np.any(phase < 0) or np.any(phase >= TWO_PI):
        raise ValueError("phase must lie in [0, 2*pi)")
    depth = phase / cam.phase_per_mm
    return depth if depth.ndim else float(depth)


def depth_to_phase(depth_mm, cam: CameraModel):
    """Phase shift from depth; rejects depths at or beyond c/(2f).

    No wrapping is applied: a depth outside the unambiguous range is an
    input error, not a silently aliased measurement.
    """
    depth_mm = np.asarray(depth_mm, dtype=np.float64)
    if not np.all(np.isfinite(depth_mm)):
        raise ValueError("depth must be finite")
    if np.any(depth_mm < 0) or np.any(depth_mm >= cam.unambiguous_range_mm):
        raise ValueError(
            f"depth must lie in [0, {cam.unambiguous_range_mm:.3f}) mm"
        )
    phase = depth_mm * cam.phase_per_mm
    return phase if phase.ndim else float(phase)


def _check_same_shape(a: PhasorImage, b: PhasorImage):
    if a.shape != b.shape:
        raise ValueError(f"phasor image shapes differ: {a.shape} vs {b.shape}")


def phasor_add(a: PhasorImage, b: PhasorImage) -> PhasorImage:
    """Per-pixel complex sum of two phasor images."""
    _check_same_shape(a, b)
    return PhasorImage.from_complex(a.to_complex() + b.to_complex())


def phasor_subtract(a: PhasorImage, b: PhasorImage) -> PhasorImage:
    """Per-pixel complex difference a - b of two phasor images."""
    _check_same_shape(a, b)
    return PhasorImage.from_complex(a.to_complex() - b.to_complex())
