"""File helpers: atomic writes, JSON-lines, the tensor checkpoint container."""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"TFLOWCK1"
FORMAT_VERSION = 1


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def dumps_jsonl(rows: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=False) + "\n" for r in rows)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    atomic_write_text(path, dumps_jsonl(rows))


# checkpoint container -------------------------------------------------------
#
# layout: MAGIC | u64 header_len (LE) | header JSON (utf-8) | tensor payloads
# header["tensors"] = [{"name", "shape", "offset"}], offsets relative to payload start,
# payloads are float64 little-endian, row-major.

def save_checkpoint(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    header = dict(header)
    header["format_version"] = FORMAT_VERSION
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    header["tensors"] = entries
    head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    atomic_write_bytes(path, MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {header.get('format_version')}")
    payload = memoryview(raw)[start + hlen:]
    tensors = {}
    for e in header.pop("tensors"):
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return header, tensors
