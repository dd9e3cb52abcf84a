"""Minimal RIFF/WAVE reader and writer.

Reads 16-bit PCM and 32-bit float, mono or stereo.  Writes mono 16-bit PCM;
samples outside [-1, 1] are saturated and a warning is logged.
"""

from __future__ import annotations

import logging
import os
import struct
from typing import Tuple

import numpy as np

from .dsp import AudioClip
from .errors import DataError, ParseError

log = logging.getLogger(__name__)

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def read_wav(path) -> AudioClip:
    """Return samples as float64 ``[n]`` (mono) or ``[n, 2]`` (stereo)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    return parse_wav(buf, path)


def parse_wav(buf: bytes, path=None) -> AudioClip:
    if len(buf) < 12:
        raise ParseError("file too short for a RIFF header", len(buf), path)
    if buf[0:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise ParseError("not a RIFF/WAVE file", 0, path)
    pos = 12
    fmt = None
    data: Tuple[int, int] = None
    while pos + 8 <= len(buf):
        cid = buf[pos:pos + 4]
        (size,) = struct.unpack_from("<I", buf, pos + 4)
        body = pos + 8
        if body + size > len(buf):
            if cid == b"data":
                raise ParseError(f"data chunk claims {size} bytes but file ends early", body, path)
            raise ParseError(f"chunk {cid!r} truncated", pos, path)
        if cid == b"fmt ":
            if size < 16:
                raise ParseError("fmt chunk shorter than 16 bytes", pos, path)
            tag, channels, rate, _, block, bits = struct.unpack_from("<HHIIHH", buf, body)
            if tag == _EXTENSIBLE and size >= 40:
                (tag,) = struct.unpack_from("<H", buf, body + 24)
            fmt = (tag, channels, rate, block, bits, body)
        elif cid == b"data":
            data = (body, size)
        pos = body + size + (size & 1)
    if fmt is None:
        raise ParseError("missing fmt chunk", pos, path)
    if data is None:
        raise ParseError("missing data chunk", pos, path)
    tag, channels, rate, block, bits, fmt_off = fmt
    if channels not in (1, 2):
        raise ParseError(f"unsupported channel count {channels}", fmt_off + 2, path)
    if tag == _PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == _FLOAT and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise ParseError(f"unsupported sample format (tag {tag}, {bits} bits)", fmt_off, path)
    if rate == 0:
        raise ParseError("sample rate is zero", fmt_off + 4, path)
    start, size = data
    frame_bytes = channels * bits // 8
    n = size // frame_bytes
    raw = np.frombuffer(buf, dtype=dtype, count=n * channels, offset=start)
    x = raw.astype(np.float64) * scale
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise ParseError("non-finite sample", start + bad * (bits // 8), path)
    if channels == 2:
        x = x.reshape(n, 2)
    return AudioClip(x, int(rate))


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono 16-bit PCM, saturating out-of-range samples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"write_wav writes mono audio, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("refusing to write NaN/Inf samples")
    n_clip = int(np.count_nonzero(np.abs(x) > 1.0))
    if n_clip:
        log.warning("clipping %d of %d samples to [-1, 1] while writing %s", n_clip, len(x), path)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _PCM, 1, sample_rate, sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + payload)
    os.replace(tmp, path)
