"""Portable binary weight container.

Layout (all integers little-endian u32):

    magic "NLSAL1" | tensor count | per tensor:
        name length | name bytes (utf-8) | 4 dims | raw little-endian f64

Every tensor is stored 4-d; lower-rank arrays are promoted by prepending
size-1 dims (a (C,) bias becomes (1,1,1,C)). Entries are written in sorted
name order so equal contents always produce identical bytes.
"""

import struct

import numpy as np

MAGIC = b"NLSAL1"


class WeightFormatError(ValueError):
    """Raised for malformed or truncated weight files."""


def promote_shape(shape):
    """Left-pad a shape with 1s to rank 4."""
    shape = tuple(int(d) for d in shape)
    if len(shape) > 4:
        raise WeightFormatError(f"tensors above rank 4 are not storable: {shape}")
    return (1,) * (4 - len(shape)) + shape


def save_weights(path, arrays):
    """Write a name -> ndarray mapping. Returns the byte count written."""
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        dims = promote_shape(arr.shape)
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<4I", *dims))
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_weights(path):
    """Read a weight file back into a dict of name -> 4-d float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    pos = len(MAGIC)

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise WeightFormatError(f"{path}: truncated while reading {what}")
        piece = blob[pos : pos + n]
        pos += n
        return piece

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        if name in out:
            raise WeightFormatError(f"{path}: duplicate tensor name {name!r}")
        dims = struct.unpack("<4I", take(16, f"shape of {name!r}"))
        nbytes = 8 * int(np.prod(dims))
        data = take(nbytes, f"data of {name!r}")
        out[name] = np.frombuffer(data, dtype="<f8").reshape(dims).copy()
    if pos != len(blob):
        raise WeightFormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return out
