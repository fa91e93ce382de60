"""Single-file binary container for fitted models.

Layout: 8-byte magic, uint32 header length, a compact JSON header (format
version, model kind, configuration, and a segment directory), then the raw
little-endian array segments back to back.  Arrays are float32, uint32, int32,
or the fixed-width tree-node record; writing the same model twice produces
byte-identical files.
"""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"SALIQA\x00\x01"
FORMAT_VERSION = 1

_SCALAR_DTYPES = {"<f4", "<u4", "<i4"}


def _dtype_descr(dtype: np.dtype) -> Any:
    if dtype.names:
        return [[name, dtype.fields[name][0].str] for name in dtype.names]
    return dtype.str


def _descr_to_dtype(descr: Any) -> np.dtype:
    if isinstance(descr, str):
        if descr not in _SCALAR_DTYPES:
            raise FormatError(f"unsupported dtype {descr!r}")
        return np.dtype(descr)
    if isinstance(descr, list):
        fields = []
        for item in descr:
            if not (isinstance(item, list) and len(item) == 2 and item[1] in _SCALAR_DTYPES):
                raise FormatError(f"unsupported record field {item!r}")
            fields.append((str(item[0]), item[1]))
        return np.dtype(fields)
    raise FormatError(f"unsupported dtype descriptor {descr!r}")


def _coerce(arr: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(arr)
    if a.dtype.names:
        return a
    if a.dtype == np.float32 or a.dtype == np.uint32 or a.dtype == np.int32:
        return a.astype(a.dtype.newbyteorder("<"), copy=False)
    raise FormatError(f"arrays must be float32/uint32/int32 or records, got {a.dtype}")


def write_container(
    dest: str | Path | BinaryIO,
    kind: str,
    config: dict[str, Any],
    arrays: dict[str, np.ndarray],
) -> int:
    """Serialize ``arrays`` with a JSON header.  Returns bytes written."""
    segments = []
    payloads = []
    offset = 0
    for name, arr in arrays.items():
        a = _coerce(arr)
        raw = a.tobytes()
        segments.append(
            {
                "name": name,
                "dtype": _dtype_descr(a.dtype),
                "shape": list(a.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "segments": segments,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def _emit(fh: BinaryIO) -> int:
        fh.write(MAGIC)
        fh.write(np.uint32(len(head)).tobytes())
        fh.write(head)
        for raw in payloads:
            fh.write(raw)
        return len(MAGIC) + 4 + len(head) + offset

    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            return _emit(fh)
    return _emit(dest)


def container_bytes(kind: str, config: dict[str, Any], arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    write_container(buf, kind, config, arrays)
    return buf.getvalue()


def read_container(src: str | Path | BinaryIO) -> tuple[str, dict[str, Any], dict[str, np.ndarray]]:
    """Parse a container; returns (kind, config, arrays)."""
    if isinstance(src, (str, Path)):
        with open(src, "rb") as fh:
            data = fh.read()
    else:
        data = src.read()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a saliqa model file")
    hlen = int(np.frombuffer(data, dtype="<u4", count=1, offset=len(MAGIC))[0])
    start = len(MAGIC) + 4
    if start + hlen > len(data):
        raise FormatError("truncated header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"invalid header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {header.get('format_version')!r}")
    base = start + hlen
    arrays: dict[str, np.ndarray] = {}
    for seg in header.get("segments", []):
        dtype = _descr_to_dtype(seg["dtype"])
        lo = base + int(seg["offset"])
        hi = lo + int(seg["nbytes"])
        if hi > len(data):
            raise FormatError(f"segment {seg['name']!r} exceeds file size")
        arr = np.frombuffer(data[lo:hi], dtype=dtype)
        arrays[seg["name"]] = arr.reshape(seg["shape"]).copy()
    return str(header.get("kind", "")), dict(header.get("config", {})), arrays
