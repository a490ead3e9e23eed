"""Density grids: data model, PGM/CSV file I/O, binarization and image metrics.

Raster convention: values are stored row-major with row 0 at the *top* of the
image, while physical coordinates have y pointing up.  Pixel ``(i, j)``
(column ``i``, row ``j``) is centred at::

    x = (i + 0.5) * w / nx
    y = h - (j + 0.5) * h / ny
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import GridParseError, GridRangeError

PathLike = Union[str, os.PathLike]

PGM_MAXVAL = 255


@dataclass(frozen=True)
class GridSpec:
    """Element counts and physical extents of a regular 2D grid."""

    nx: int
    ny: int
    w: float = 1.0
    h: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid counts must be integers >= 1, got nx={self.nx}, ny={self.ny}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"physical extents must be positive, got w={self.w}, h={self.h}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def unit_scaled(cls, nx: int, ny: int) -> "GridSpec":
        """Spec whose longer side has physical length 1."""
        m = max(nx, ny)
        return cls(nx, ny, nx / m, ny / m)

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(ny, nx)`` of the raster."""
        return (self.ny, self.nx)

    @property
    def dx(self) -> float:
        return self.w / self.nx

    @property
    def dy(self) -> float:
        return self.h / self.ny

    @property
    def pitch(self) -> float:
        """Mean pixel size, used to convert pixel lengths to physical ones."""
        return 0.5 * (self.dx + self.dy)

    def pixel_center(self, i, j):
        """Physical centre of pixel column ``i``, row ``j`` (arrays allowed)."""
        x = (np.asarray(i) + 0.5) * self.dx
        y = self.h - (np.asarray(j) + 0.5) * self.dy
        return x, y

    def pixel_of(self, x, y):
        """Inverse of :meth:`pixel_center` returning fractional ``(i, j)``."""
        i = np.asarray(x) / self.dx - 0.5
        j = (self.h - np.asarray(y)) / self.dy - 0.5
        return i, j

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        x, y = self.pixel_center(i, j)
        return np.broadcast_to(x[None, :], self.shape), np.broadcast_to(y[:, None], self.shape)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["nx"]), int(d["ny"]), float(d["w"]), float(d["h"]))


class DensityGrid:
    """Immutable scalar field in [0, 1] on a :class:`GridSpec`.

    ``values`` is a read-only ``(ny, nx)`` float64 array.
    """

    __slots__ = ("spec", "values")

    def __init__(self, spec: GridSpec, values, *, check: bool = True):
        arr = np.array(values, dtype=np.float64)
        if arr.size != spec.nx * spec.ny:
            raise ValueError(f"expected {spec.nx * spec.ny} values for a {spec.nx}x{spec.ny} grid, got {arr.size}")
        arr = arr.reshape(spec.shape)
        if check:
            bad = ~((arr >= 0.0) & (arr <= 1.0))
            if bad.any():
                j, i = np.argwhere(bad)[0]
                raise GridRangeError(f"value {arr[j, i]!r} at row {j}, column {i} is outside [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("DensityGrid is immutable")

    @classmethod
    def zeros(cls, spec: GridSpec) -> "DensityGrid":
        return cls(spec, np.zeros(spec.shape), check=False)

    @classmethod
    def ones(cls, spec: GridSpec) -> "DensityGrid":
        return cls(spec, np.ones(spec.shape), check=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.spec.shape

    def is_binary(self) -> bool:
        v = self.values
        return bool(np.all((v == 0.0) | (v == 1.0)))

    def with_values(self, values) -> "DensityGrid":
        return DensityGrid(self.spec, values)

    def __eq__(self, other):
        if not isinstance(other, DensityGrid):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self):
        return f"DensityGrid({self.spec.nx}x{self.spec.ny}, w={self.spec.w:g}, h={self.spec.h:g}, mean={self.values.mean():.4g})"


def _same_shape(a: DensityGrid, b: DensityGrid) -> None:
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens (with their byte offsets) and the offset just past the
    last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise GridParseError(f"unexpected end of PGM header at byte offset {pos}")
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos], start))
    return tokens, pos


def _header_int(tok: bytes, offset: int, what: str) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise GridParseError(f"bad PGM {what} {tok!r} at byte offset {offset}") from None
    if v < 1:
        raise GridParseError(f"PGM {what} must be positive, got {v} at byte offset {offset}")
    return v


def _read_pgm(path: Path) -> tuple[np.ndarray, int, int]:
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise GridParseError(f"{path}: not a PGM file (magic {magic!r} at byte offset 0)")
    toks, pos = _pgm_tokens(data, 4)
    nx = _header_int(*toks[1], "width")
    ny = _header_int(*toks[2], "height")
    maxval = _header_int(*toks[3], "maxval")
    if maxval > 65535:
        raise GridParseError(f"{path}: maxval {maxval} exceeds 65535 at byte offset {toks[3][1]}")
    npix = nx * ny
    if magic == b"P5":
        pos += 1  # exactly one whitespace byte separates header and raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = npix * dtype.itemsize
        raster = data[pos:pos + need]
        if len(raster) != need:
            raise GridParseError(f"{path}: raster truncated at byte offset {pos + len(raster)}, "
                                 f"expected {need} bytes")
        pix = np.frombuffer(raster, dtype=dtype).astype(np.float64)
    else:
        body = data[pos:]
        lines = body.split(b"\n")
        # header may end mid-line; line numbers below are relative to the file
        first_line = data[:pos].count(b"\n") + 1
        vals = []
        for k, line in enumerate(lines):
            line = line.split(b"#", 1)[0]
            for tok in line.split():
                try:
                    vals.append(int(tok))
                except ValueError:
                    raise GridParseError(f"{path}: bad pixel value {tok!r} on line {first_line + k}") from None
        if len(vals) != npix:
            raise GridParseError(f"{path}: expected {npix} pixel values, found {len(vals)}")
        pix = np.asarray(vals, dtype=np.float64)
    if (pix > maxval).any() or (pix < 0).any():
        k = int(np.argmax((pix > maxval) | (pix < 0)))
        raise GridParseError(f"{path}: pixel {k} value {pix[k]:g} exceeds maxval {maxval}")
    return (pix / maxval).reshape(ny, nx), nx, ny


def _read_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise GridParseError(f"{path}: non-numeric entry on line {lineno}") from None
            if rows and len(vals) != len(rows[0]):
                raise GridParseError(f"{path}: line {lineno} has {len(vals)} columns, expected {len(rows[0])}")
            for k, v in enumerate(vals):
                if not 0.0 <= v <= 1.0:
                    raise GridRangeError(f"{path}: value {v!r} on line {lineno}, column {k + 1} is outside [0, 1]")
            rows.append(vals)
    if not rows:
        raise GridParseError(f"{path}: empty CSV grid")
    return np.asarray(rows, dtype=np.float64)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = path.suffix.lower().lstrip(".")
    if fmt not in ("pgm", "csv"):
        raise ValueError(f"unsupported grid format {fmt!r} (use 'pgm' or 'csv')")
    return fmt


def load_grid(path: PathLike, format: str | None = None, *, w: float | None = None,
              h: float | None = None) -> DensityGrid:
    """Load a density grid from a P2/P5 PGM or a CSV file.

    PGM densities are ``pixel / maxval``.  Unless ``w``/``h`` are given the
    physical extents default to ``nx / max(nx, ny)`` and ``ny / max(nx, ny)``.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "pgm":
        values, nx, ny = _read_pgm(path)
    else:
        values = _read_csv(path)
        ny, nx = values.shape
    default = GridSpec.unit_scaled(nx, ny)
    spec = GridSpec(nx, ny, default.w if w is None else w, default.h if h is None else h)
    return DensityGrid(spec, values)


def atomic_write(path: PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def save_grid(grid: DensityGrid, path: PathLike, format: str | None = None) -> None:
    """Write a grid as binary PGM (maxval 255) or as lossless CSV."""
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "pgm":
        pix = np.rint(grid.values * PGM_MAXVAL).astype(np.uint8)
        header = f"P5\n{grid.spec.nx} {grid.spec.ny}\n{PGM_MAXVAL}\n".encode("ascii")
        atomic_write(path, header + pix.tobytes())
    else:
        buf = io.StringIO()
        for row in grid.values:
            buf.write(",".join(repr(float(v)) for v in row))
            buf.write("\n")
        atomic_write(path, buf.getvalue().encode("ascii"))


# --------------------------------------------------------------------------
# binarization and metrics
# --------------------------------------------------------------------------

def binarize(grid: DensityGrid, threshold: float = 0.5) -> DensityGrid:
    """Map values strictly above ``threshold`` to 1.0 and the rest to 0.0."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return DensityGrid(grid.spec, (grid.values > threshold).astype(np.float64), check=False)


def dice_values(a: np.ndarray, b: np.ndarray) -> float:
    """Dice coefficient of two equally shaped arrays; 1.0 if both are all zero."""
    denom = a.sum() + b.sum()
    if denom == 0.0:
        return 1.0
    return float(2.0 * (a * b).sum() / denom)


def dice(a: DensityGrid, b: DensityGrid) -> float:
    """Soft dice ``2 sum(a b) / (sum a + sum b)``."""
    _same_shape(a, b)
    return dice_values(a.values, b.values)


def volume_fraction(grid: DensityGrid) -> float:
    return float(grid.values.mean())
