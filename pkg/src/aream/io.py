"""File formats: ATSR tensors, binary PGM label maps, flat key=value config.

ATSR layout (all little-endian)::

    "ATSR" | version u8 (=1) | dtype u8 (1=float64, 2=uint8) | ndim u8 | 0 u8
    | ndim x u64 extents | row-major payload
"""

import os
import re
import struct

import numpy as np

MAGIC = b"ATSR"
VERSION = 1
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("u1")}
DTYPE_CODES = {np.dtype("<f8"): 1, np.dtype("u1"): 2}
_HEADER = struct.Struct("<4sBBBB")


class TensorFormatError(ValueError):
    """Malformed tensor file."""

    def __init__(self, msg, path=None):
        self.path = path
        super().__init__(f"{path}: {msg}" if path else msg)


class BadMagicError(TensorFormatError):
    pass


class BadVersionError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class PgmFormatError(ValueError):
    pass


def encode_tensor(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.uint8:
        code = 2
    else:
        arr = arr.astype("<f8", copy=False)
        if not np.all(np.isfinite(arr)):
            raise ValueError("refusing to write non-finite values")
        code = 1
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    dt = DTYPES[code]
    header = _HEADER.pack(MAGIC, VERSION, code, arr.ndim, 0)
    extents = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + extents + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_tensor(buf, path=None):
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError(f"file too short for header ({len(buf)} bytes)", path)
    magic, version, code, ndim, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}", path)
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}", path)
    if code not in DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}", path)
    if reserved != 0:
        raise TensorFormatError("reserved header byte is not zero", path)
    off = _HEADER.size
    if len(buf) < off + 8 * ndim:
        raise TruncatedPayloadError("file ends inside the extent table", path)
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dt = DTYPES[code]
    expected = dt.itemsize * int(np.prod(shape, dtype=np.uint64))
    got = len(buf) - off
    if got < expected:
        raise TruncatedPayloadError(f"payload has {got} bytes, expected {expected}", path)
    if got > expected:
        raise TensorFormatError(f"{got - expected} trailing bytes after payload", path)
    arr = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape)
    if code == 1:
        if not np.all(np.isfinite(arr)):
            raise TensorFormatError("payload contains non-finite values", path)
        return arr.astype(np.float64)
    return arr.copy()


def write_tensor(path, arr):
    with open(path, "wb") as f:
        f.write(encode_tensor(arr))


def read_tensor(path):
    with open(path, "rb") as f:
        return decode_tensor(f.read(), path=str(path))


def write_pgm(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-d, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("label values must fit in 0..255")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(labels.astype(np.uint8).tobytes())


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_pgm(path):
    with open(path, "rb") as f:
        buf = f.read()
    pos, fields = 0, []
    for _ in range(4):
        m = _PGM_TOKEN.match(buf, pos)
        if m is None:
            raise PgmFormatError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise PgmFormatError(f"{path}: not a binary PGM (P5)")
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError:
        raise PgmFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise PgmFormatError(f"{path}: only maxval 255 is supported")
    pos += 1  # single whitespace byte after maxval
    data = buf[pos:pos + w * h]
    if len(data) != w * h:
        raise PgmFormatError(f"{path}: expected {w * h} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ValueError(f"{path}:{n}: empty key")
            out[key] = value
    return out


def write_config(path, params):
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(params):
            f.write(f"{key} = {format_value(params[key])}\n")


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
