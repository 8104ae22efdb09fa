"""Core grid types, error computation, and bit-exact file I/O.

Conventions used everywhere in the package: row-major arrays indexed
``[y, x]`` with y pointing down, float64 in memory, float32 on disk.
The error sign convention is ground truth minus prediction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FileFormatError, ParameterError

# Little-endian float32 202021.25 spells the bytes "PIEH" (Middlebury .flo).
FLO_MAGIC = 202021.25
# Distinct tag for uncertainty files so .flo and .unc cannot be confused.
UNC_MAGIC = 202122.25


def _grid(data, name: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement field (u, v) in px/frame."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _grid(self.u, "u")
        v = _grid(self.v, "v")
        if u.shape != v.shape:
            raise DimensionError(f"u shape {u.shape} != v shape {v.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape


@dataclass(frozen=True)
class UncertaintyField:
    """Per-pixel, per-component standard deviations in px. Strictly positive."""

    sigma_u: np.ndarray
    sigma_v: np.ndarray

    def __post_init__(self):
        su = _grid(self.sigma_u, "sigma_u")
        sv = _grid(self.sigma_v, "sigma_v")
        if su.shape != sv.shape:
            raise DimensionError(f"sigma_u shape {su.shape} != sigma_v shape {sv.shape}")
        if np.any(su <= 0) or np.any(sv <= 0):
            raise ParameterError("uncertainty values must be strictly positive")
        object.__setattr__(self, "sigma_u", su)
        object.__setattr__(self, "sigma_v", sv)

    @property
    def height(self) -> int:
        return self.sigma_u.shape[0]

    @property
    def width(self) -> int:
        return self.sigma_u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.sigma_u.shape


@dataclass(frozen=True)
class ImagePair:
    """Two co-registered grayscale particle images.

    In-memory intensities are real-valued and clamped to [0, 255]; the
    on-disk representation (PGM) is 8-bit.
    """

    frame_a: np.ndarray
    frame_b: np.ndarray

    def __post_init__(self):
        a = np.clip(_grid(self.frame_a, "frame_a"), 0.0, 255.0)
        b = np.clip(_grid(self.frame_b, "frame_b"), 0.0, 255.0)
        if a.shape != b.shape:
            raise DimensionError(f"frame_a shape {a.shape} != frame_b shape {b.shape}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "frame_a", a)
        object.__setattr__(self, "frame_b", b)

    @property
    def height(self) -> int:
        return self.frame_a.shape[0]

    @property
    def width(self) -> int:
        return self.frame_a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frame_a.shape


@dataclass(frozen=True)
class ErrorField:
    """Signed per-component flow error plus the endpoint error magnitude."""

    e_u: np.ndarray
    e_v: np.ndarray
    epe: np.ndarray

    def __post_init__(self):
        eu = _grid(self.e_u, "e_u")
        ev = _grid(self.e_v, "e_v")
        ep = _grid(self.epe, "epe")
        if not (eu.shape == ev.shape == ep.shape):
            raise DimensionError("error component shapes disagree")
        if np.any(np.abs(ep - np.sqrt(eu**2 + ev**2)) > 1e-9):
            raise ParameterError("epe is inconsistent with sqrt(e_u^2 + e_v^2)")
        object.__setattr__(self, "e_u", eu)
        object.__setattr__(self, "e_v", ev)
        object.__setattr__(self, "epe", ep)

    @property
    def shape(self) -> tuple[int, int]:
        return self.e_u.shape


def error_field(pred: FlowField, gt: FlowField) -> ErrorField:
    """Per-component error (ground truth minus prediction) and endpoint error."""
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    e_u = gt.u - pred.u
    e_v = gt.v - pred.v
    return ErrorField(e_u=e_u, e_v=e_v, epe=np.sqrt(e_u**2 + e_v**2))


# ---------------------------------------------------------------------------
# .flo / .unc: magic float32, int32 width, int32 height, then row-major
# interleaved float32 channel pairs. All little-endian.
# ---------------------------------------------------------------------------


def _write_two_channel(path, magic: float, c0: np.ndarray, c1: np.ndarray) -> None:
    h, w = c0.shape
    interleaved = np.empty((h, w, 2), dtype="<f4")
    interleaved[..., 0] = c0
    interleaved[..., 1] = c1
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", magic, w, h))
        f.write(interleaved.tobytes())


def _read_two_channel(path, magic: float, other_magic: float, kind: str):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FileFormatError(f"truncated {kind} header", offset=len(data))
    file_magic, w, h = struct.unpack_from("<fii", data, 0)
    if file_magic != magic:
        if file_magic == other_magic:
            raise FileFormatError(
                f"magic {file_magic!r} belongs to the other two-channel format; "
                f"refusing to read it as {kind}",
                offset=0,
            )
        raise FileFormatError(f"bad {kind} magic number {file_magic!r}", offset=0)
    if w <= 0:
        raise FileFormatError(f"nonpositive width {w}", offset=4)
    if h <= 0:
        raise FileFormatError(f"nonpositive height {h}", offset=8)
    expected = 12 + 4 * 2 * w * h
    if len(data) < expected:
        raise FileFormatError(
            f"truncated {kind} payload: expected {expected} bytes, got {len(data)}",
            offset=len(data),
        )
    if len(data) > expected:
        raise FileFormatError(f"{len(data) - expected} trailing bytes after {kind} payload", offset=expected)
    payload = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2)
    if not np.all(np.isfinite(payload)):
        raise FileFormatError(f"non-finite values in {kind} payload", offset=12)
    return payload[..., 0].astype(np.float64), payload[..., 1].astype(np.float64)


def write_flo(field: FlowField, path) -> None:
    """Write a FlowField in the Middlebury .flo interchange format."""
    _write_two_channel(path, FLO_MAGIC, field.u, field.v)


def read_flo(path) -> FlowField:
    """Read a Middlebury .flo file. Rejects malformed files deterministically."""
    u, v = _read_two_channel(path, FLO_MAGIC, UNC_MAGIC, "flow")
    return FlowField(u=u, v=v)


def write_unc(field: UncertaintyField, path) -> None:
    """Write an UncertaintyField using the .flo layout with the .unc magic."""
    _write_two_channel(path, UNC_MAGIC, field.sigma_u, field.sigma_v)


def read_unc(path) -> UncertaintyField:
    """Read an .unc uncertainty file."""
    su, sv = _read_two_channel(path, UNC_MAGIC, FLO_MAGIC, "uncertainty")
    if np.any(su <= 0) or np.any(sv <= 0):
        raise FileFormatError("nonpositive uncertainty values in payload", offset=12)
    return UncertaintyField(sigma_u=su, sigma_v=sv)


# ---------------------------------------------------------------------------
# P5 binary PGM, maxval 255.
# ---------------------------------------------------------------------------


def write_pgm(grid, path) -> None:
    """Write a grayscale image as binary PGM, rounding reals to nearest byte."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"image must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError("image contains non-finite values")
    h, w = arr.shape
    raster = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(raster.tobytes())


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos : pos + 1].isspace():
            pos += 1
        elif data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FileFormatError("unexpected end of PGM header", offset=start)
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255. Returns a float64 grid."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FileFormatError("not a binary PGM (missing P5 header)", offset=0)
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise FileFormatError(f"non-numeric PGM header token {token!r}", offset=pos) from None
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise FileFormatError(f"nonpositive PGM dimensions {w}x{h}", offset=pos)
    if maxval != 255:
        raise FileFormatError(f"unsupported PGM maxval {maxval} (must be 255)", offset=pos)
    pos += 1  # single whitespace byte separates header from raster
    expected = pos + w * h
    if len(data) < expected:
        raise FileFormatError(
            f"truncated PGM raster: expected {expected} bytes, got {len(data)}",
            offset=len(data),
        )
    if len(data) > expected:
        raise FileFormatError(f"{len(data) - expected} trailing bytes after PGM raster", offset=expected)
    raster = np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w)
    return raster.astype(np.float64)


def read_image_pair(path_a, path_b) -> ImagePair:
    """Load two PGM frames as an ImagePair."""
    a = read_pgm(path_a)
    b = read_pgm(path_b)
    return ImagePair(frame_a=a, frame_b=b)
