"""Binary container for named tensors plus a small JSON header of scalars.

Layout::

    uint64  index length n (little-endian)
    n bytes UTF-8 JSON: {"scalars": {...}, "tensors": [[name, nbytes], ...]}
    tensor records in index order, each in the golden-file format
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from typing import Mapping

from .tensor import Tensor, tensor_from_bytes, tensor_to_bytes


def pack_state(tensors: Mapping[str, Tensor], scalars: Mapping | None = None) -> bytes:
    records = [(name, tensor_to_bytes(t)) for name, t in tensors.items()]
    index = {"scalars": dict(scalars or {}), "tensors": [[name, len(rec)] for name, rec in records]}
    head = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(head)) + head + b"".join(rec for _, rec in records)


def unpack_state(buf: bytes) -> tuple[OrderedDict, dict]:
    if len(buf) < 8:
        raise ValueError("truncated state container")
    (n,) = struct.unpack_from("<Q", buf, 0)
    if 8 + n > len(buf):
        raise ValueError("truncated state index")
    try:
        index = json.loads(buf[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ValueError(f"corrupt state index: {err}") from None
    pos = 8 + n
    tensors = OrderedDict()
    for name, size in index["tensors"]:
        if pos + size > len(buf):
            raise ValueError(f"truncated record for {name!r}")
        tensors[name] = tensor_from_bytes(buf[pos:pos + size])
        pos += size
    if pos != len(buf):
        raise ValueError("trailing bytes after the last record")
    return tensors, index["scalars"]
