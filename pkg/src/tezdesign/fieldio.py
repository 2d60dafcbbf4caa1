"""Result serialization: field maps (CSV + binary), trajectory and report CSVs.

All files are written atomically (temp file + rename).  The binary field map
is little-endian: magic "TEZF", u32 version, u32 nx, u32 ny, then f64 grid
metadata (x0, y0, dx, dy, lambda0) followed by row-major samples of four f64
per grid point (Ex.re, Ex.im, Ey.re, Ey.im).
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FieldMap",
    "FieldMapError",
    "write_field_map_csv",
    "write_field_map_binary",
    "read_field_map_binary",
    "write_csv",
]

MAGIC = b"TEZF"
VERSION = 1


class FieldMapError(ValueError):
    """Corrupt or mismatched field-map file."""


@dataclass
class FieldMap:
    """Complex E samples on a regular grid: ex/ey have shape (ny, nx)."""

    origin: tuple[float, float]
    spacing: tuple[float, float]
    lambda0: float
    ex: np.ndarray
    ey: np.ndarray

    def __post_init__(self):
        self.ex = np.asarray(self.ex, dtype=complex)
        self.ey = np.asarray(self.ey, dtype=complex)
        if self.ex.shape != self.ey.shape or self.ex.ndim != 2:
            raise FieldMapError("ex/ey must be 2D arrays of identical shape")

    @property
    def nx(self) -> int:
        return self.ex.shape[1]

    @property
    def ny(self) -> int:
        return self.ex.shape[0]

    def points(self) -> np.ndarray:
        x = self.origin[0] + self.spacing[0] * np.arange(self.nx)
        y = self.origin[1] + self.spacing[1] * np.arange(self.ny)
        xx, yy = np.meshgrid(x, y)
        return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: list[str], rows) -> None:
    """CSV with a single header row; floats serialized with shortest round-trip."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_field_map_csv(path: str, fm: FieldMap) -> None:
    header = ["ix", "iy", "x_nm", "y_nm", "ex_re_V_per_m", "ex_im_V_per_m",
              "ey_re_V_per_m", "ey_im_V_per_m"]
    rows = []
    for iy in range(fm.ny):
        for ix in range(fm.nx):
            rows.append([
                ix, iy,
                (fm.origin[0] + ix * fm.spacing[0]) / 1e-9,
                (fm.origin[1] + iy * fm.spacing[1]) / 1e-9,
                fm.ex[iy, ix].real, fm.ex[iy, ix].imag,
                fm.ey[iy, ix].real, fm.ey[iy, ix].imag,
            ])
    write_csv(path, header, rows)


def write_field_map_binary(path: str, fm: FieldMap) -> None:
    head = MAGIC + struct.pack("<IIIddddd", VERSION, fm.nx, fm.ny,
                               fm.origin[0], fm.origin[1],
                               fm.spacing[0], fm.spacing[1], fm.lambda0)
    data = np.empty((fm.ny, fm.nx, 4), dtype="<f8")
    data[:, :, 0] = fm.ex.real
    data[:, :, 1] = fm.ex.imag
    data[:, :, 2] = fm.ey.real
    data[:, :, 3] = fm.ey.imag
    _atomic_write_bytes(path, head + data.tobytes())


def read_field_map_binary(path: str) -> FieldMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise FieldMapError(f"{path}: not a TEZF field map")
    version, nx, ny, x0, y0, dx, dy, lambda0 = struct.unpack("<IIIddddd", raw[4:4 + 52])
    if version != VERSION:
        raise FieldMapError(f"{path}: unsupported version {version}")
    expected = 4 + 52 + ny * nx * 4 * 8
    if len(raw) != expected:
        raise FieldMapError(f"{path}: truncated payload ({len(raw)} != {expected})")
    data = np.frombuffer(raw[4 + 52:], dtype="<f8").reshape(ny, nx, 4)
    return FieldMap(
        origin=(x0, y0), spacing=(dx, dy), lambda0=lambda0,
        ex=data[:, :, 0] + 1j * data[:, :, 1],
        ey=data[:, :, 2] + 1j * data[:, :, 3],
    )
