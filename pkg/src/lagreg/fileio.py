"""Field files, PGM import/export and atomic writes.

A field file is a short text header followed by raw little-endian float64
values::

    LAGREG-FIELD 1
    kind: image
    dtype: f64
    layout: lex-first-fastest
    m: 128 128
    omega: 0 1 0 1
    shape: 16384
    end

``shape`` lists the payload dimensions, slowest first. Images store one
value per cell; velocities store ``d x (nt + 1) x ncells`` (component, then
time node, then cell); point sets store ``d x npts`` (component-major). Cell
indices run first axis fastest.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .field import ImageField, VelocityField
from .grid import Grid

MAGIC = "LAGREG-FIELD 1"
LAYOUT = "lex-first-fastest"
KINDS = ("image", "velocity", "points")
_MAX_HEADER = 64 * 1024


class FieldFormatError(ValueError):
    """Raised for malformed or inconsistent field files."""


@dataclass
class FieldFile:
    kind: str
    grid: Grid | None
    data: np.ndarray
    shape: tuple[int, ...]
    nt: int = 0
    meta: dict = field(default_factory=dict)

    def to_image(self) -> ImageField:
        if self.kind != "image":
            raise FieldFormatError(f"expected an image file, got kind {self.kind!r}")
        return ImageField(self.grid, self.data)

    def to_velocity(self) -> VelocityField:
        if self.kind != "velocity":
            raise FieldFormatError(f"expected a velocity file, got kind {self.kind!r}")
        return VelocityField(self.grid, self.nt, self.data)

    def to_points(self) -> np.ndarray:
        """Points as an ``npts x d`` array."""
        if self.kind != "points":
            raise FieldFormatError(f"expected a points file, got kind {self.kind!r}")
        return self.data.reshape(self.shape).T.copy()


def atomic_write(path, payload: bytes) -> None:
    """Write to a temporary file next to ``path``, then rename over it."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _fmt(values) -> str:
    return " ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in values)


def _describe(obj, grid):
    if isinstance(obj, ImageField):
        return "image", obj.grid, obj.data, (obj.grid.ncells,), 0
    if isinstance(obj, VelocityField):
        shape = (obj.grid.d, obj.nt + 1, obj.grid.ncells)
        return "velocity", obj.grid, obj.data, shape, obj.nt
    pts = np.atleast_2d(np.asarray(obj, dtype=np.float64))
    if pts.ndim != 2:
        raise FieldFormatError(f"points must be an npts x d array, got shape {pts.shape}")
    if grid is not None and grid.d != pts.shape[1]:
        raise FieldFormatError(f"points of dimension {pts.shape[1]} do not match a {grid.d}D grid")
    return "points", grid, pts.T.ravel(), (pts.shape[1], pts.shape[0]), 0


def encode_field(obj, grid: Grid | None = None, meta: dict | None = None) -> bytes:
    """Serialize an image, velocity or ``npts x d`` point array."""
    kind, g, data, shape, nt = _describe(obj, grid)
    data = np.asarray(data)
    if data.dtype != np.float64:
        raise FieldFormatError(f"unsupported dtype {data.dtype}; only float64 is stored")
    lines = [MAGIC, f"kind: {kind}", "dtype: f64", f"layout: {LAYOUT}"]
    if g is not None:
        lines += [f"m: {_fmt(g.m)}", f"omega: {_fmt(g.omega)}"]
    if kind == "velocity":
        lines.append(f"nt: {nt}")
    lines.append(f"shape: {_fmt(shape)}")
    for key, val in (meta or {}).items():
        if not key.isidentifier() or key in _RESERVED or "\n" in str(val):
            raise FieldFormatError(f"invalid metadata entry {key!r}")
        lines.append(f"meta.{key}: {val}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    return header + data.astype("<f8").tobytes()


def save_field(path, obj, grid: Grid | None = None, meta: dict | None = None) -> None:
    atomic_write(path, encode_field(obj, grid, meta))


_RESERVED = {"kind", "dtype", "layout", "m", "omega", "nt", "shape"}


def _parse_header(raw: bytes):
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FieldFormatError("header is not ASCII") from exc
    lines = text.split("\n")
    if lines[0] != MAGIC:
        raise FieldFormatError("missing field-file magic line")
    entries = {}
    for line in lines[1:]:
        if line == "end":
            return entries
        key, sep, val = line.partition(": ")
        if not sep:
            raise FieldFormatError(f"malformed header line {line!r}")
        if key in entries:
            raise FieldFormatError(f"duplicate header key {key!r}")
        entries[key] = val
    raise FieldFormatError("header has no 'end' line")


def _ints(s: str, key: str) -> tuple[int, ...]:
    try:
        out = tuple(int(x) for x in s.split())
    except ValueError as exc:
        raise FieldFormatError(f"header key {key!r} must hold integers, got {s!r}") from exc
    if not out or any(k <= 0 for k in out):
        raise FieldFormatError(f"header key {key!r} must hold positive integers, got {s!r}")
    return out


def decode_field(blob: bytes) -> FieldFile:
    end = blob.find(b"\nend\n", 0, _MAX_HEADER)
    if end < 0:
        raise FieldFormatError("no header terminator found")
    hdr = _parse_header(blob[: end + 5])
    payload = blob[end + 5 :]

    for key in ("kind", "dtype", "layout", "shape"):
        if key not in hdr:
            raise FieldFormatError(f"header lacks required key {key!r}")
    kind = hdr["kind"]
    if kind not in KINDS:
        raise FieldFormatError(f"unknown field kind {kind!r}")
    if hdr["dtype"] != "f64":
        raise FieldFormatError(f"unsupported dtype {hdr['dtype']!r}")
    if hdr["layout"] != LAYOUT:
        raise FieldFormatError(f"unsupported layout {hdr['layout']!r}")
    shape = _ints(hdr["shape"], "shape")

    grid = None
    if "m" in hdr or "omega" in hdr:
        if not ("m" in hdr and "omega" in hdr):
            raise FieldFormatError("header must give both 'm' and 'omega'")
        try:
            omega = tuple(float(x) for x in hdr["omega"].split())
            grid = Grid(omega, _ints(hdr["m"], "m"))
        except (ValueError, TypeError) as exc:
            raise FieldFormatError(f"invalid grid in header: {exc}") from exc
    elif kind != "points":
        raise FieldFormatError(f"{kind} files need 'm' and 'omega'")

    nt = 0
    if kind == "velocity":
        try:
            nt = int(hdr.get("nt", ""))
        except ValueError as exc:
            raise FieldFormatError("velocity header needs an integer 'nt'") from exc
        expected = (grid.d, nt + 1, grid.ncells)
    elif kind == "image":
        expected = (grid.ncells,)
    else:
        expected = shape if grid is None else (grid.d, shape[-1])
    if shape != expected:
        raise FieldFormatError(f"declared shape {shape} does not match the grid, expected {expected}")

    count = int(np.prod(shape))
    if len(payload) != 8 * count:
        raise FieldFormatError(f"payload holds {len(payload)} bytes, header declares {count} float64 values")
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    meta = {k[5:]: v for k, v in hdr.items() if k.startswith("meta.")}
    unknown = set(hdr) - _RESERVED - {k for k in hdr if k.startswith("meta.")}
    if unknown:
        raise FieldFormatError(f"unknown header keys {sorted(unknown)}")
    return FieldFile(kind, grid, data, shape, nt, meta)


def load_field(path) -> FieldFile:
    with open(path, "rb") as fh:
        return decode_field(fh.read())


# PGM -------------------------------------------------------------------------


class PGMError(ValueError):
    pass


def _pgm_tokens(blob: bytes, count: int):
    """First ``count`` whitespace-separated header tokens and the offset after them."""
    tokens, pos, n = [], 0, len(blob)
    while len(tokens) < count:
        while pos < n and (blob[pos : pos + 1].isspace() or blob[pos : pos + 1] == b"#"):
            if blob[pos : pos + 1] == b"#":
                while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        tokens.append(blob[start:pos])
    return tokens, pos


def import_pgm(path, omega=None) -> ImageField:
    """Read a P2/P5 grayscale PGM as an image with values in ``[0, 1]``.

    The top row of the file is the row of highest ``x2``. ``omega`` defaults
    to square pixels with the longer side spanning ``(0, 1)``.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    magic = blob[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"not a grayscale PGM (magic {magic!r})")
    try:
        (_, w, h, maxval), pos = _pgm_tokens(blob, 4)
        W, H, maxv = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise PGMError("malformed PGM header") from exc
    if W <= 0 or H <= 0:
        raise PGMError(f"invalid PGM size {W}x{H}")
    if not 0 < maxv < 65536:
        raise PGMError(f"unsupported PGM bit depth (maxval {maxv})")
    if magic == b"P2":
        try:
            vals = np.array(blob[pos:].split(), dtype=np.int64)
        except ValueError as exc:
            raise PGMError("non-integer sample in P2 data") from exc
        if vals.size < W * H:
            raise PGMError(f"P2 data holds {vals.size} samples, expected {W * H}")
        vals = vals[: W * H]
    else:
        dt = np.dtype(">u2") if maxv > 255 else np.dtype("u1")
        raster = blob[pos + 1 :]
        need = W * H * dt.itemsize
        if len(raster) < need:
            raise PGMError(f"P5 raster holds {len(raster)} bytes, expected {need}")
        vals = np.frombuffer(raster[:need], dtype=dt).astype(np.int64)
    if np.any(vals > maxv) or np.any(vals < 0):
        raise PGMError("sample exceeds maxval")
    img = vals.reshape(H, W)[::-1].astype(float) / maxv
    if omega is None:
        s = float(max(W, H))
        omega = (0.0, W / s, 0.0, H / s)
    g = Grid(tuple(omega), (W, H))
    return ImageField(g, img.ravel())


def encode_pgm(f: ImageField, vrange=(0.0, 1.0)) -> bytes:
    """Binary 8-bit PGM bytes; ``vrange=None`` scales by the data extrema."""
    g = f.grid
    if g.d != 2:
        raise PGMError(f"PGM export needs a 2D image, got {g.d}D")
    lo, hi = (float(f.data.min()), float(f.data.max())) if vrange is None else map(float, vrange)
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((f.data - lo) / span, 0.0, 1.0)
    pix = np.rint(255.0 * scaled).astype(np.uint8)
    raster = pix.reshape(g.m[1], g.m[0])[::-1]
    return f"P5\n{g.m[0]} {g.m[1]}\n255\n".encode("ascii") + raster.tobytes()


def export_pgm(f: ImageField, path, vrange=(0.0, 1.0)) -> None:
    atomic_write(path, encode_pgm(f, vrange))
