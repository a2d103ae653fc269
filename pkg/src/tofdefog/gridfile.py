"""TOFGRID container: a JSON header plus raw float32 payload.

Canonical form is a single file: UTF-8 JSON header, one NUL byte, then
rows*cols little-endian float32 values in row-major order.  A sidecar mode
(header JSON referencing a .bin payload next to it) is kept for debugging.

Domains carry their value contracts: phase grids hold radians in
[0, 2*pi); depth grids use +inf for background; weights lie in [0, 1].
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .core import TWO_PI

MAGIC = "TOFGRID"
VERSION = 1
DOMAINS = ("amplitude", "phase", "depth", "weight", "label")

DEFAULT_UNITS = {
    "amplitude": "sensor",
    "phase": "rad",
    "depth": "mm",
    "weight": "1",
    "label": "id",
}


class GridFormatError(ValueError):
    """Malformed TOFGRID header or payload."""


@dataclass
class GridFile:
    values: np.ndarray          # float64 view of the stored float32 payload
    domain: str
    units: str

    @property
    def shape(self):
        return self.values.shape


def _validate_domain_values(values: np.ndarray, domain: str, where: str):
    if domain == "phase":
        if np.any(~np.isfinite(values)) or np.any(values < 0) or np.any(values >= TWO_PI):
            raise GridFormatError(f"{where}: phase values must lie in [0, 2*pi)")
    elif domain == "depth":
        if np.any(np.isnan(values)) or np.any(values < 0):
            raise GridFormatError(f"{where}: depth values must be non-negative (inf = background)")
    elif domain == "amplitude":
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise GridFormatError(f"{where}: amplitude values must be finite and non-negative")
    elif domain == "weight":
        if np.any(~np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
            raise GridFormatError(f"{where}: weights must lie in [0, 1]")
    elif domain == "label":
        if np.any(np.isnan(values)):
            raise GridFormatError(f"{where}: labels must not be NaN")


def write_grid(path, values, domain: str, units: str | None = None,
               sidecar: bool = False) -> None:
    """Write a grid; float64 input is cast to the stored float32."""
    if domain not in DOMAINS:
        raise GridFormatError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise GridFormatError("grids must be 2-D")
    _validate_domain_values(values, domain, str(path))
    payload = np.ascontiguousarray(values, dtype="<f4")
    if domain == "phase":
        # float32 rounding can push valid values just past 2*pi; those are
        # the angle 0 up to storage precision
        payload = np.where(payload.astype(np.float64) >= TWO_PI, np.float32(0.0), payload)
    header = {
        "magic": MAGIC,
        "version": VERSION,
        "rows": int(values.shape[0]),
        "cols": int(values.shape[1]),
        "dtype": "f32",
        "units": units if units is not None else DEFAULT_UNITS[domain],
        "domain": domain,
    }
    if sidecar:
        payload_name = os.path.basename(str(path)) + ".bin"
        header["payload_file"] = payload_name
        with open(os.path.join(os.path.dirname(str(path)) or ".", payload_name), "wb") as fh:
            fh.write(payload.tobytes())
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(header, fh, sort_keys=True)
    else:
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
            fh.write(b"\x00")
            fh.write(payload.tobytes())


def _parse_header(raw: bytes, where: str) -> dict:
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFormatError(f"{where}: malformed header JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise GridFormatError(f"{where}: missing TOFGRID magic")
    if header.get("version") != VERSION:
        raise GridFormatError(f"{where}: unsupported version {header.get('version')!r}")
    if header.get("dtype") != "f32":
        raise GridFormatError(f"{where}: unsupported dtype {header.get('dtype')!r}")
    if header.get("domain") not in DOMAINS:
        raise GridFormatError(f"{where}: unknown domain {header.get('domain')!r}")
    for key in ("rows", "cols"):
        if not isinstance(header.get(key), int) or header[key] <= 0:
            raise GridFormatError(f"{where}: bad {key} in header")
    return header


def read_grid(path) -> GridFile:
    """Read either container form; validates payload size and domain values."""
    with open(path, "rb") as fh:
        data = fh.read()
    sep = data.find(b"\x00")
    if sep >= 0:
        header = _parse_header(data[:sep], str(path))
        payload = data[sep + 1:]
    else:
        header = _parse_header(data, str(path))
        payload_file = header.get("payload_file")
        if not payload_file:
            raise GridFormatError(f"{path}: sidecar header lacks payload_file")
        sidecar_path = os.path.join(os.path.dirname(str(path)) or ".", payload_file)
        if not os.path.exists(sidecar_path):
            raise GridFormatError(f"{path}: payload file {payload_file} not found")
        with open(sidecar_path, "rb") as fh:
            payload = fh.read()
    expected = header["rows"] * header["cols"] * 4
    if len(payload) != expected:
        raise GridFormatError(
            f"{path}: payload size mismatch: expected {expected} bytes, "
            f"got {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(header["rows"], header["cols"])
    values = values.astype(np.float64)
    _validate_domain_values(values, header["domain"], str(path))
    return GridFile(values=values, domain=header["domain"], units=header["units"])
