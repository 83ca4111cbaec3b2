"""SEIQ v1 interchange files.

Layout::

    b"SEIQ0001" | u32 LE header length | UTF-8 JSON header | interleaved float32 LE (I, Q, I, Q, ...)

The header records ``shape`` (complex samples, row-major) plus free-form metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SEIQ0001"


def write_seiq(path, samples: np.ndarray, **header) -> None:
    x = np.asarray(samples, dtype=complex)
    meta = dict(header)
    meta["shape"] = list(x.shape)
    meta["format"] = "cf32_le"
    hdr = json.dumps(meta, sort_keys=True).encode()
    inter = np.empty(x.size * 2, dtype="<f4")
    inter[0::2] = x.real.reshape(-1)
    inter[1::2] = x.imag.reshape(-1)
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(hdr)) + hdr + inter.tobytes())


def read_seiq(path) -> tuple[np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a SEIQ v1 file")
    (n,) = struct.unpack("<I", data[8:12])
    meta = json.loads(data[12:12 + n].decode())
    raw = np.frombuffer(data, dtype="<f4", offset=12 + n)
    shape = meta.get("shape", [raw.size // 2])
    if raw.size != 2 * int(np.prod(shape)):
        raise ValueError(f"{path}: payload has {raw.size} floats, header expects {2 * int(np.prod(shape))}")
    x = (raw[0::2].astype(np.float64) + 1j * raw[1::2]).reshape(shape)
    return x, meta
