"""Binary checkpoint format.

Layout (little-endian)::

    b"TVC1"  u32 version
    u32 len  config snapshot (UTF-8)
    records: u32 name_len, name, u8 dtype, u8 ndim, u32 dims..., payload
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from tvts.errors import FormatError

MAGIC = b"TVC1"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2, np.dtype("<i4"): 3, np.dtype("u1"): 4}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


def encode_checkpoint(tensors: dict[str, np.ndarray], config_text: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dt not in DTYPE_CODES:
            raise FormatError(f"cannot store dtype {arr.dtype} for {name!r}")
        nb = name.encode("utf-8")
        parts += [struct.pack("<I", len(nb)), nb,
                  struct.pack("<BB", DTYPE_CODES[dt], arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape),
                  np.ascontiguousarray(arr, dtype=dt.newbyteorder("<")).tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], str]:
    if len(blob) < 16:
        raise FormatError(f"{source}: truncated checkpoint ({len(blob)} bytes)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError(f"{source}: CRC mismatch (stored {crc:#010x}, computed {zlib.crc32(body):#010x})")
    if body[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {body[:4]!r} at byte offset 0")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version} at byte offset 4")
    (clen,) = struct.unpack_from("<I", body, 8)
    pos = 12
    config_text = body[pos:pos + clen].decode("utf-8")
    pos += clen
    tensors: dict[str, np.ndarray] = {}
    try:
        while pos < len(body):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            if code not in CODE_DTYPES:
                raise FormatError(f"{source}: unknown dtype code {code} at byte offset {pos - 2}")
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            dt = CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise FormatError(f"{source}: record {name!r} overruns the file at byte offset {pos}")
            tensors[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"{source}: truncated record at byte offset {pos}") from exc
    return tensors, config_text


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], config_text: str = "") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(tensors, config_text))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(blob, str(path))
