"""Self-describing binary checkpoints.

Layout, all little-endian:

    magic "CDTR" | uint32 version | uint32 tensor count
    per tensor: uint32 name length | utf-8 name | uint32 rank
                | uint64 extent per rank | float64 values, C order

Every value is a float64, so round-trips are bit-exact. Strings (the
embedded config JSON) ride along as rank-1 tensors of codepoints under
reserved ``meta.`` names.
"""

import struct

import numpy as np

MAGIC = b"CDTR"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def encode_text(text):
    return np.array([float(ord(c)) for c in text], dtype=np.float64)


def decode_text(arr):
    return "".join(chr(int(v)) for v in np.asarray(arr).reshape(-1))


def save_checkpoint(path, arrays):
    """Write named float64 arrays; insertion order is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            # asarray, not ascontiguousarray: the latter puffs rank-0 up to
            # rank 1 and the shape would not round-trip
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path):
    """Read a checkpoint back into an ordered name -> array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
        off += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        end = off + 8 * n
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated tensor {name!r}")
        out[name] = np.frombuffer(blob[off:end], dtype="<f8").reshape(shape).copy()
        off = end
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out
