"""Aligned VIS / DSM rasters and their on-disk formats.

VIS imagery is stored as binary PPM (``P6``, maxval 255).  Heights are stored
in a small fixed binary layout::

    DSMF 1\\n<w> <h>\\n<nodata>\\n<w*h little-endian float32, row-major>

Rasters are immutable once built; every operation returns a new object.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "AlignmentReport",
    "HeightRaster",
    "RasterFormatError",
    "RgbRaster",
    "load_dsm",
    "load_vis",
    "resample",
    "save_dsm",
    "save_vis",
    "validate_alignment",
]

DEFAULT_NODATA = -9999.0


class RasterFormatError(ValueError):
    """Raised when a raster file cannot be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RgbRaster:
    """8-bit color image, shape ``(height, width, 3)``."""

    pixels: np.ndarray
    gsd: float | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("raster dimensions must be positive")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.width, self.height)

    def __eq__(self, other):
        if not isinstance(other, RgbRaster):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class HeightRaster:
    """Surface heights in meters, shape ``(height, width)``, float32.

    Cells equal to ``nodata`` (or NaN when ``nodata`` is NaN) carry no height.
    """

    values: np.ndarray
    nodata: float = DEFAULT_NODATA
    gsd: float | None = None
    _valid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"expected non-empty (h, w) heights, got shape {vals.shape}")
        nodata = float(np.float32(self.nodata))
        valid = ~np.isnan(vals) if math.isnan(nodata) else vals != np.float32(nodata)
        if not np.all(np.isfinite(vals[valid])):
            raise ValueError("non-nodata heights must be finite")
        object.__setattr__(self, "values", _freeze(vals))
        object.__setattr__(self, "nodata", nodata)
        object.__setattr__(self, "_valid", _freeze(valid))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of cells that hold a height."""
        return self._valid

    def __eq__(self, other):
        if not isinstance(other, HeightRaster):
            return NotImplemented
        same_nodata = (self.nodata == other.nodata) or (
            math.isnan(self.nodata) and math.isnan(other.nodata)
        )
        return same_nodata and self.values.tobytes() == other.values.tobytes()


Raster = Union[RgbRaster, HeightRaster]


@dataclass(frozen=True)
class AlignmentReport:
    aligned: bool
    vis_dims: tuple[int, int]
    dsm_dims: tuple[int, int]
    message: str


# ---------------------------------------------------------------------------
# PPM
# ---------------------------------------------------------------------------

_WS = b" \t\r\n\v\f"


def _read_header_tokens(data: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset just past the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    pos = start
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in _WS:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise RasterFormatError("malformed header: unexpected end of file", pos)
        begin = pos
        while pos < n and data[pos] not in _WS and data[pos] != ord("#"):
            pos += 1
        tokens.append(data[begin:pos])
    if pos >= n or data[pos] not in _WS:
        raise RasterFormatError("malformed header: missing whitespace after header", pos)
    return tokens, pos + 1


def _parse_positive_int(token: bytes, what: str, offset: int) -> int:
    if not token.isdigit():
        raise RasterFormatError(f"malformed header: {what} {token!r} is not an integer", offset)
    value = int(token)
    if value < 1:
        raise RasterFormatError(f"malformed header: {what} must be positive", offset)
    return value


def load_vis(path: str | Path, gsd: float | None = None) -> RgbRaster:
    """Read a binary (P6) PPM with maxval 255."""
    data = Path(path).read_bytes()
    if len(data) < 2:
        raise RasterFormatError("malformed header: file too short", 0)
    magic = data[:2]
    if magic != b"P6":
        if magic[:1] == b"P" and magic[1:2] in b"12345":
            raise RasterFormatError(f"unsupported format {magic.decode()!r}; only P6 is accepted", 0)
        raise RasterFormatError("malformed header: missing P6 magic", 0)
    tokens, body = _read_header_tokens(data, 3, 2)
    w = _parse_positive_int(tokens[0], "width", 2)
    h = _parse_positive_int(tokens[1], "height", 2)
    maxval = _parse_positive_int(tokens[2], "maxval", 2)
    if maxval != 255:
        raise RasterFormatError(f"unsupported maxval {maxval}; only 255 is accepted", 2)
    need = 3 * w * h
    have = len(data) - body
    if have < need:
        raise RasterFormatError(
            f"truncated pixel data: expected {need} bytes, found {have}", len(data)
        )
    px = np.frombuffer(data, dtype=np.uint8, count=need, offset=body).reshape(h, w, 3)
    return RgbRaster(px.copy(), gsd=gsd)


def save_vis(raster: RgbRaster, path: str | Path) -> None:
    header = f"P6\n{raster.width} {raster.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.pixels.tobytes())


# ---------------------------------------------------------------------------
# DSMF
# ---------------------------------------------------------------------------

_DSMF_HEADER = re.compile(rb"DSMF 1\n(\d+) (\d+)\n([^\n]+)\n")


def load_dsm(path: str | Path, gsd: float | None = None) -> HeightRaster:
    """Read a DSMF v1 height grid."""
    data = Path(path).read_bytes()
    if not data.startswith(b"DSMF"):
        raise RasterFormatError("bad magic: expected 'DSMF'", 0)
    m = _DSMF_HEADER.match(data)
    if m is None:
        raise RasterFormatError("malformed DSMF header", 0)
    w, h = int(m.group(1)), int(m.group(2))
    if w < 1 or h < 1:
        raise RasterFormatError("malformed DSMF header: dimensions must be positive", 5)
    try:
        nodata = float(m.group(3).decode("ascii"))
    except ValueError:
        raise RasterFormatError("malformed DSMF header: nodata is not a number", m.start(3)) from None
    body = m.end()
    need = 4 * w * h
    have = len(data) - body
    if have != need:
        raise RasterFormatError(
            f"payload size mismatch: header declares {w}x{h} ({need} bytes), found {have} bytes",
            body,
        )
    vals = np.frombuffer(data, dtype="<f4", offset=body).reshape(h, w).astype(np.float32)
    return HeightRaster(vals, nodata=nodata, gsd=gsd)


def save_dsm(raster: HeightRaster, path: str | Path) -> None:
    header = f"DSMF 1\n{raster.width} {raster.height}\n{raster.nodata!r}\n".encode("ascii")
    Path(path).write_bytes(header + raster.values.astype("<f4").tobytes())


def validate_alignment(vis: RgbRaster, dsm: HeightRaster) -> AlignmentReport:
    vd, dd = vis.dims, dsm.dims
    if vd == dd:
        msg = f"aligned: VIS and DSM are both {vd[0]}x{vd[1]}"
        return AlignmentReport(True, vd, dd, msg)
    msg = f"misaligned: VIS is {vd[0]}x{vd[1]} but DSM is {dd[0]}x{dd[1]}"
    return AlignmentReport(False, vd, dd, msg)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _area_weights(n_in: int, factor: float) -> np.ndarray:
    """Row-stochastic matrix averaging input cells into ceil(n_in / factor) cells."""
    n_out = math.ceil(n_in / factor)
    lo = np.arange(n_out) * factor
    hi = np.minimum(lo + factor, n_in)
    edges = np.arange(n_in + 1, dtype=np.float64)
    # overlap of [lo, hi) with each input cell [i, i+1)
    overlap = np.clip(
        np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1]),
        0.0,
        None,
    )
    return overlap


def _bilinear_weights(n_out: int, n_in: int) -> np.ndarray:
    """Interpolation matrix mapping ``n_in`` samples onto ``n_out`` pixel centers."""
    wts = np.zeros((n_out, n_in))
    if n_in == 1:
        wts[:, 0] = 1.0
        return wts
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 2)
    t = src - i0
    rows = np.arange(n_out)
    wts[rows, i0] = 1.0 - t
    wts[rows, i0 + 1] += t
    return wts


def _apply_separable(grid: np.ndarray, wy: np.ndarray, wx: np.ndarray) -> np.ndarray:
    # grid: (h, w) or (h, w, c)
    out = np.tensordot(wy, grid, axes=(1, 0))
    out = np.tensordot(out, wx, axes=(1, 1))
    if grid.ndim == 3:
        out = np.moveaxis(out, 1, 2)
    return out


def _masked_separable(values, valid, wy, wx):
    weights = _apply_separable(valid.astype(np.float64), wy, wx)
    sums = _apply_separable(np.where(valid, values, 0.0), wy, wx)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / weights
    return out, weights > 1e-12


def resample(raster: Raster, factor: float, mode: str = "down") -> Raster:
    """Degrade a raster's resolution.

    ``mode="down"`` area-averages by ``factor`` giving ``ceil(dim / factor)``
    pixels per axis; ``mode="down-then-up"`` then bilinearly interpolates back
    to the original dimensions.  NoData cells are excluded from both steps.
    """
    if not factor >= 1:
        raise ValueError(f"resample factor must be >= 1, got {factor}")
    if mode not in ("down", "down-then-up"):
        raise ValueError(f"unknown resample mode {mode!r}")
    if factor == 1:
        return raster

    h, w = raster.height, raster.width
    ay, ax = _area_weights(h, factor), _area_weights(w, factor)
    if mode == "down-then-up":
        by = _bilinear_weights(h, ay.shape[0])
        bx = _bilinear_weights(w, ax.shape[0])

    if isinstance(raster, RgbRaster):
        grid = raster.pixels.astype(np.float64)
        ay_n = ay / ay.sum(axis=1, keepdims=True)
        ax_n = ax / ax.sum(axis=1, keepdims=True)
        out = _apply_separable(grid, ay_n, ax_n)
        if mode == "down-then-up":
            out = _apply_separable(out, by, bx)
        out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
        gsd = None if raster.gsd is None else raster.gsd * (factor if mode == "down" else 1.0)
        return RgbRaster(out, gsd=gsd)

    vals = raster.values.astype(np.float64)
    out, ok = _masked_separable(vals, raster.valid, ay, ax)
    if mode == "down-then-up":
        out, ok = _masked_separable(np.where(ok, out, 0.0), ok, by, bx)
    nodata = raster.nodata
    out = np.where(ok, out, nodata).astype(np.float32)
    gsd = None if raster.gsd is None else raster.gsd * (factor if mode == "down" else 1.0)
    return HeightRaster(out, nodata=nodata, gsd=gsd)
