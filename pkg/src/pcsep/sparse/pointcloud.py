"""Point-cloud frames and PLY input/output."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import EmptyInputError, ParseError

FEATURE_SOURCES = ("depth", "rgb")


@dataclass
class PointCloudFrame:
    """Unordered points with optional per-point rgb colours in [0, 1]."""

    coordinates: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coordinates = np.asarray(self.coordinates, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.coordinates):
                raise ValueError(
                    f"{len(self.coordinates)} coordinates but {len(self.colors)} colour rows"
                )

    def __len__(self) -> int:
        return len(self.coordinates)

    def features(self, source: str = "depth") -> np.ndarray:
        """Per-point feature rows: raw coordinates (depth) or colours (rgb)."""
        if source == "depth":
            return self.coordinates.copy()
        if source == "rgb":
            if self.colors is None:
                raise EmptyInputError("rgb features requested but the frame has no colours")
            return self.colors.copy()
        raise ValueError(f"feature source must be one of {FEATURE_SOURCES}, got {source!r}")


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_KNOWN = {"x", "y", "z", "red", "green", "blue"}


def _parse_header(buf: bytes, path):
    if not buf.startswith(b"ply"):
        raise ParseError("missing 'ply' magic", 0, path)
    pos = 0
    fmt = None
    elements = []  # (name, count, [(prop, dtype) or (prop, 'list', ...)], offset)
    while True:
        end = buf.find(b"\n", pos)
        if end < 0:
            raise ParseError("unterminated PLY header", pos, path)
        line = buf[pos:end].decode("ascii", errors="replace").strip()
        line_start = pos
        pos = end + 1
        if not line or line == "ply" or line.startswith(("comment", "obj_info")):
            continue
        words = line.split()
        if words[0] == "format":
            if len(words) < 2 or words[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format line {line!r}", line_start, path)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise ParseError(f"bad element line {line!r}", line_start, path)
            elements.append([words[1], int(words[2]), []])
        elif words[0] == "property":
            if not elements:
                raise ParseError("property before any element", line_start, path)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise ParseError(f"unknown list types in {line!r}", line_start, path)
                elements[-1][2].append((words[4], ("list", _PLY_TYPES[words[2]], _PLY_TYPES[words[3]])))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
            else:
                raise ParseError(f"bad property line {line!r}", line_start, path)
        elif words[0] == "end_header":
            break
        else:
            raise ParseError(f"unexpected header line {line!r}", line_start, path)
    if fmt is None:
        raise ParseError("PLY header has no format line", 0, path)
    return fmt, elements, pos


def _frame_from_columns(cols, count, path):
    for axis in "xyz":
        if axis not in cols:
            raise ParseError(f"vertex element lacks property {axis!r}", 0, path)
    coords = np.stack([cols[a].astype(np.float64) for a in "xyz"], axis=1)
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        raw = np.stack([cols[c] for c in ("red", "green", "blue")], axis=1)
        if raw.dtype.kind == "f":
            colors = np.clip(raw.astype(np.float64), 0.0, 1.0)
        else:
            colors = raw.astype(np.float64) / float(np.iinfo(raw.dtype).max)
    return PointCloudFrame(coords.reshape(count, 3), colors)


def read_ply(path) -> PointCloudFrame:
    """Read the vertex element of an ascii or binary little-endian PLY file."""
    path = str(path)
    buf = Path(path).read_bytes()
    fmt, elements, pos = _parse_header(buf, path)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise ParseError("PLY file has no vertex element", 0, path)
    vertex = elements[names.index("vertex")]
    unknown = [p for p, _ in vertex[2] if p not in _KNOWN]
    if unknown:
        warnings.warn(f"{path}: ignoring unknown PLY vertex properties {unknown}", stacklevel=2)
    if fmt == "ascii":
        lines_start = pos
        text_lines = buf[pos:].split(b"\n")
        line_offsets = np.cumsum([0] + [len(t) + 1 for t in text_lines[:-1]]) + lines_start
        li = 0
        for name, count, props in elements:
            if name != "vertex":
                li += count
                continue
            if any(isinstance(t, tuple) for _, t in props):
                raise ParseError("list properties on vertex are not supported", lines_start, path)
            rows = []
            for n in range(count):
                if li + n >= len(text_lines) or not text_lines[li + n].strip():
                    off = line_offsets[min(li + n, len(line_offsets) - 1)]
                    raise ParseError(f"expected {count} vertex rows, found {n}", off, path)
                fields = text_lines[li + n].split()
                if len(fields) < len(props):
                    raise ParseError(f"vertex row {n} has {len(fields)} values, need {len(props)}",
                                     line_offsets[li + n], path)
                try:
                    rows.append([float(f) for f in fields[:len(props)]])
                except ValueError:
                    raise ParseError(f"non-numeric value in vertex row {n}", line_offsets[li + n], path) from None
            table = np.array(rows, dtype=np.float64).reshape(count, len(props))
            cols = {}
            for k, (prop, dt) in enumerate(props):
                cols[prop] = table[:, k].astype(dt) if np.dtype(dt).kind in "iu" else table[:, k]
            return _frame_from_columns(cols, count, path)
    # binary little endian: elements are laid out back to back
    for name, count, props in elements:
        if any(isinstance(t, tuple) for _, t in props):
            if name == "vertex":
                raise ParseError("list properties on vertex are not supported", pos, path)
            raise ParseError(f"cannot skip list element {name!r} preceding vertex data", pos, path)
        dtype = np.dtype([(p, "<" + t) for p, t in props])
        nbytes = dtype.itemsize * count
        if pos + nbytes > len(buf):
            raise ParseError(f"truncated {name} data: need {nbytes} bytes", len(buf), path)
        if name == "vertex":
            table = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
            return _frame_from_columns({p: table[p] for p, _ in props}, count, path)
        pos += nbytes
    raise ParseError("vertex element not found", pos, path)  # pragma: no cover


def write_ply(path, frame: PointCloudFrame, binary: bool = True) -> None:
    """Write x,y,z as float32 and, if present, colours as uchar."""
    n = len(frame)
    props = [("x", "f4"), ("y", "f4"), ("z", "f4")]
    if frame.colors is not None:
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}"]
    header += [f"property {'float' if t == 'f4' else 'uchar'} {p}" for p, t in props]
    header.append("end_header")
    table = np.zeros(n, dtype=[(p, "<" + t) for p, t in props])
    for k, axis in enumerate("xyz"):
        table[axis] = frame.coordinates[:, k]
    if frame.colors is not None:
        rgb = np.round(np.clip(frame.colors, 0, 1) * 255).astype(np.uint8)
        for k, c in enumerate(("red", "green", "blue")):
            table[c] = rgb[:, k]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(table.tobytes())
        else:
            for row in table:
                fh.write((" ".join(repr(float(v)) if isinstance(v, np.floating) else str(v)
                                   for v in row) + "\n").encode("ascii"))
