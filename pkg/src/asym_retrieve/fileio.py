"""On-disk formats shared by checkpoints and indexes, plus JSONL helpers.

Framed binary layout: an 8-byte little-endian unsigned header length, the
UTF-8 JSON header itself, then one little-endian float64 blob holding all
arrays concatenated in declaration order.
"""

import json
import struct
from pathlib import Path

import numpy as np

_LEN_FMT = "<Q"
_LEN_SIZE = struct.calcsize(_LEN_FMT)


def write_framed(path, header: dict, arrays) -> None:
    """Write a JSON header plus float64 arrays to ``path``."""
    blob = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays
    )
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(_LEN_FMT, len(head)))
        fh.write(head)
        fh.write(blob)


def read_framed(path):
    """Read back (header, flat float64 array); caller slices per its schema."""
    with open(path, "rb") as fh:
        raw_len = fh.read(_LEN_SIZE)
        if len(raw_len) != _LEN_SIZE:
            raise ValueError(f"{path}: truncated header length prefix")
        (head_len,) = struct.unpack(_LEN_FMT, raw_len)
        head = fh.read(head_len)
        if len(head) != head_len:
            raise ValueError(f"{path}: truncated JSON header")
        header = json.loads(head.decode("utf-8"))
        blob = fh.read()
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    return header, flat


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from None
    return rows


def write_jsonl(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
