"""CSV and PGM helpers."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np


class SchemaError(ValueError):
    """A file does not have the expected columns or shape."""


def fmt(x) -> str:
    """17 significant digits: float64 values survive a write/read round trip."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(row[h]) if not isinstance(row[h], str) else row[h] for h in header])
    Path(path).write_text(buf.getvalue())


def read_csv(path, required=()) -> dict:
    """Columns of a numeric CSV as float arrays (``t`` as int)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = {}
    for j, name in enumerate(header):
        try:
            vals = [float(r[j]) for r in rows]
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: bad value in column {name}: {exc}") from None
        cols[name] = np.array(vals, dtype=int if name == "t" else float)
    return cols


def read_pgm(path) -> np.ndarray:
    """Binary 8-bit PGM (``P5``) as floats in [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise SchemaError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise SchemaError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(float) / 255.0


def write_pgm(path, image) -> None:
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if img.ndim != 2:
        raise SchemaError("PGM image must be 2-D")
    pix = np.rint(img * 255.0).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pix.tobytes())
