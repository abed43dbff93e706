"""File formats: raw float grids, CSV tables, 16-bit PGM previews, key = value configs.

Raw grids start with one ASCII header line::

    LDCT1 <kind> <rows> <cols> <stage>

followed by ``rows * cols`` little-endian float32 values in row-major order.
``kind`` names what the grid holds (image, sinogram, weights, mask, ...)
and ``stage`` records the processing stage of the values (for example
``counts``, ``line-integral`` or ``p-value`` for sinograms).
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MAGIC",
    "KINDS",
    "FormatError",
    "RawGrid",
    "write_raw",
    "read_raw",
    "write_table",
    "read_table",
    "write_pgm",
    "read_pgm",
    "parse_config",
    "read_config",
]

MAGIC = "LDCT1"
KINDS = ("image", "sinogram", "weights", "mask", "pvalues")
_TOKEN = re.compile(r"^[A-Za-z0-9_.+-]+$")
_MAX_HEADER = 256


class FormatError(ValueError):
    """A file does not follow the expected layout; the message says where."""


@dataclass(frozen=True)
class RawGrid:
    data: np.ndarray
    kind: str
    stage: str


def write_raw(path, data, kind: str, stage: str = "none") -> None:
    """Write a 2D array as an LDCT1 raw grid (values stored as float32)."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f"raw grids are 2D, got shape {data.shape}")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    if not _TOKEN.match(stage):
        raise ValueError(f"stage tag {stage!r} must be a single token")
    header = f"{MAGIC} {kind} {data.shape[0]} {data.shape[1]} {stage}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_raw(path, kind: str | None = None) -> RawGrid:
    """Read an LDCT1 raw grid, optionally insisting on its ``kind``."""
    blob = Path(path).read_bytes()
    end = blob.find(b"\n", 0, _MAX_HEADER)
    if end < 0:
        raise FormatError(f"{path}: line 1: no header terminator within {_MAX_HEADER} bytes")
    try:
        fields = blob[:end].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: line 1, byte {exc.start}: header is not ASCII") from None
    if len(fields) != 5:
        raise FormatError(f"{path}: line 1: expected 5 header fields, found {len(fields)}")
    magic, got_kind, rows, cols, stage = fields
    if magic != MAGIC:
        raise FormatError(f"{path}: line 1, byte 0: bad magic {magic!r}, expected {MAGIC!r}")
    if got_kind not in KINDS:
        raise FormatError(f"{path}: line 1: unknown kind {got_kind!r}")
    if kind is not None and got_kind != kind:
        raise FormatError(f"{path}: line 1: holds a {got_kind}, expected a {kind}")
    try:
        rows, cols = int(rows), int(cols)
    except ValueError:
        raise FormatError(f"{path}: line 1: rows/cols must be integers, got {fields[2]!r} {fields[3]!r}") from None
    if rows <= 0 or cols <= 0:
        raise FormatError(f"{path}: line 1: non-positive size {rows}x{cols}")
    offset = end + 1
    expected = rows * cols * 4
    payload = len(blob) - offset
    if payload != expected:
        raise FormatError(
            f"{path}: byte offset {offset}: payload holds {payload} bytes, header implies {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(rows, cols).astype(np.float32)
    return RawGrid(data, got_kind, stage)


def write_table(path, header, rows) -> None:
    """CSV table with a fixed column count; floats are written with ``repr``."""
    header = list(header)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(rows):
            row = list(row)
            if len(row) != len(header):
                raise ValueError(f"row {i} has {len(row)} fields, header has {len(header)}")
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty table") from None
        rows = []
        for row in reader:
            if len(row) != len(header):
                raise FormatError(
                    f"{path}: line {reader.line_num}: {len(row)} fields, header has {len(header)}"
                )
            rows.append(row)
    return header, rows


def write_pgm(path, img, vmin: float | None = None, vmax: float | None = None) -> tuple[float, float]:
    """16-bit binary PGM preview; values are clamped to ``[vmin, vmax]``.

    The linear map is stored in a ``# scale vmin vmax`` comment so that
    :func:`read_pgm` can undo it up to quantisation. Returns ``(vmin, vmax)``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM export needs a 2D image")
    vmin = float(img.min()) if vmin is None else float(vmin)
    vmax = float(img.max()) if vmax is None else float(vmax)
    if not vmax > vmin:
        vmax = vmin + 1.0
    q = np.round((np.clip(img, vmin, vmax) - vmin) / (vmax - vmin) * 65535.0).astype(">u2")
    rows, cols = img.shape
    header = f"P5\n# scale {vmin!r} {vmax!r}\n{cols} {rows}\n65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.tobytes())
    return vmin, vmax


def read_pgm(path, rescale: bool = True) -> np.ndarray:
    """Read a 16-bit PGM written by :func:`write_pgm`."""
    blob = Path(path).read_bytes()
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(blob):
            raise FormatError(f"{path}: byte {pos}: truncated header")
        if blob[pos : pos + 1] == b"#":
            end = blob.index(b"\n", pos)
            comments.append(blob[pos + 1 : end].decode("ascii").split())
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos].decode("ascii"))
    pos += 1
    if tokens[0] != "P5":
        raise FormatError(f"{path}: byte 0: not a binary PGM (magic {tokens[0]!r})")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 65535:
        raise FormatError(f"{path}: maxval {maxval}; only 16-bit files are supported")
    if len(blob) - pos != rows * cols * 2:
        raise FormatError(f"{path}: byte offset {pos}: payload size does not match {cols}x{rows}")
    q = np.frombuffer(blob, dtype=">u2", offset=pos).reshape(rows, cols).astype(np.float64)
    if not rescale:
        return q
    scale = next((c for c in comments if c and c[0] == "scale"), None)
    if scale is None:
        return q / 65535.0
    vmin, vmax = float(scale[1]), float(scale[2])
    return vmin + q / 65535.0 * (vmax - vmin)


def parse_config(text: str, schema: dict | None = None, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    ``schema`` maps each allowed key to a converter (``int``, ``float``,
    ``str``, ``bool`` or a callable). Unknown keys and bad values raise
    :class:`FormatError` naming the line.
    """
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}: line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise FormatError(f"{source}: line {lineno}: empty key")
        if schema is not None:
            if key not in schema:
                raise FormatError(f"{source}: line {lineno}: unknown key {key!r}")
            try:
                value = _convert(schema[key], value)
            except ValueError as exc:
                raise FormatError(f"{source}: line {lineno}: bad value for {key!r}: {exc}") from None
        out[key] = value
    return out


def _convert(kind, value: str):
    if kind is bool:
        v = value.lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind is float:
        v = float(value)
        if math.isnan(v):
            raise ValueError("NaN is not allowed")
        return v
    return kind(value)


def read_config(path, schema: dict | None = None) -> dict:
    return parse_config(Path(path).read_text(), schema, str(path))
