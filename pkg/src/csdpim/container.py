"""On-disk integer tensor container.

Layout: 4-byte magic "TNSC", a 4-byte little-endian header length, a JSON
manifest {name, dtype, shape, layout, byte_order, checksum}, then the raw
row-major little-endian payload. The checksum is the SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import FormatError

MAGIC = b"TNSC"

_DTYPES = {"i8": np.dtype("<i1"), "i32": np.dtype("<i4")}
_DTYPE_NAMES = {v: k for k, v in _DTYPES.items()}


def save_tensor(path, array, name: str = "") -> None:
    array = np.asarray(array)
    if array.dtype not in _DTYPE_NAMES:
        if np.issubdtype(array.dtype, np.integer):
            lo, hi = int(array.min(initial=0)), int(array.max(initial=0))
            target = "<i1" if -128 <= lo and hi <= 127 else "<i4"
            array = array.astype(target)
        else:
            raise FormatError(f"unsupported dtype {array.dtype}")
    payload = np.ascontiguousarray(array).tobytes()
    manifest = {
        "name": name,
        "dtype": _DTYPE_NAMES[array.dtype],
        "shape": list(array.shape),
        "layout": "row-major",
        "byte_order": "little-endian",
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(4, "little"))
        fh.write(head)
        fh.write(payload)


def load_tensor(path, with_name: bool = False):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        head_len = int.from_bytes(fh.read(4), "little")
        try:
            manifest = json.loads(fh.read(head_len))
        except ValueError as exc:
            raise FormatError(f"{path}: bad manifest: {exc}") from exc
        payload = fh.read()
    dtype = _DTYPES.get(manifest.get("dtype"))
    if dtype is None:
        raise FormatError(f"{path}: unsupported dtype {manifest.get('dtype')!r}")
    shape = tuple(manifest["shape"])
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    if hashlib.sha256(payload).hexdigest() != manifest["checksum"]:
        raise FormatError(f"{path}: checksum mismatch")
    array = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if with_name:
        return array, manifest.get("name", "")
    return array
