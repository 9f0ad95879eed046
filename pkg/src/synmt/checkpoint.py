"""Versioned binary checkpoints.

Byte layout (all integers little-endian, all floats little-endian
IEEE 754), designed so any implementation can read it:

    magic          8 bytes   b"SYNMTCKP"
    format_version uint32    currently 1
    header_len     uint32
    header         UTF-8 JSON (model/run config echo, vocabularies)
    n_params       uint32
    then per parameter, in file order:
        name_len   uint16
        name       UTF-8 bytes
        dtype      uint8     4 = float32, 8 = float64
        ndim       uint8
        dims       uint32 * ndim
        data       raw floats, row-major, dtype * prod(dims) bytes
"""

import json
import struct

import numpy as np

MAGIC = b"SYNMTCKP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, header):
    """params: dict name -> tensor-like with .data; header: JSON-able dict."""
    hdr = dict(header)
    hdr["format_version"] = FORMAT_VERSION
    blob = json.dumps(hdr).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            arr = np.asarray(p.data if hasattr(p, "data") else p)
            nb = name.encode("utf-8")
            itemsize = arr.dtype.itemsize
            if itemsize not in (4, 8):
                raise CheckpointError(f"unsupported dtype {arr.dtype}")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", itemsize, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(f"<f{itemsize}", copy=False).tobytes())


def load_checkpoint(path):
    """Returns (header dict, dict name -> numpy array)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    off = 16
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    (n_params,) = struct.unpack_from("<I", raw, off)
    off += 4
    params = {}
    for _ in range(n_params):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        itemsize, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype=f"<f{itemsize}", count=count,
                            offset=off).reshape(shape)
        off += itemsize * count
        if name in params:
            raise CheckpointError(f"duplicate parameter {name}")
        params[name] = arr.copy()
    if off != len(raw):
        raise CheckpointError("trailing bytes after last parameter")
    return header, params
