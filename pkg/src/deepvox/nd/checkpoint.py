"""DVCK checkpoint container.

Layout (all integers little-endian uint32):
    magic "DVCK" | version | n_blocks
    per block: name_len | name (UTF-8) | ndim | dims... | float32 data
    trailing CRC32 over every preceding byte

Values are stored as float32.  Integer bookkeeping (epoch counters, step
counts) survives the round trip exactly as long as it stays below 2**24,
which is comfortably true here.
"""

import struct
import zlib

import numpy as np

MAGIC = b"DVCK"
VERSION = 1


def save_blocks(path, blocks):
    """blocks: ordered mapping name -> array-like (stored float32)."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(blocks))]
    for name, value in blocks.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype=np.float32)
        if arr.ndim:
            arr = np.ascontiguousarray(arr)  # keep 0-d 0-d (ascontiguousarray lifts to 1-d)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f4", copy=False).tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def load_blocks(path):
    """Read a DVCK file back into {name: float32 array}; verifies magic,
    version, and the trailing CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ValueError(f"not a DVCK checkpoint: {path}")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ValueError(f"checkpoint CRC mismatch (corrupt file): {path}")
    version, n_blocks = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version} in {path}")
    pos = 12
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        name = payload[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", payload, pos) if ndim else ()
        pos += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        blocks[name] = arr.copy()
    if pos != len(payload):
        raise ValueError(f"trailing bytes in checkpoint: {path}")
    return blocks
