"""Run artifacts: trajectory log, parameter snapshot, summary record.

All three formats are deterministic: identical runs produce byte-identical
``trajectory.jsonl`` and ``params.bin`` files.  Floats are rendered with 17
significant digits, which round-trips IEEE-754 doubles exactly.

``params.bin`` layout (all little-endian):

    bytes 0..3    magic ``b"PIER"``
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..11   precision in bits, uint32 (64 or 32)
    bytes 12..19  element count, uint64
    bytes 20..    raw IEEE-754 data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

PARAMS_MAGIC = b"PIER"
PARAMS_VERSION = 1

TRAJECTORY_NAME = "trajectory.jsonl"
PARAMS_NAME = "params.bin"
SUMMARY_NAME = "summary.json"


# ---------------------------------------------------------------------------
# JSON rendering with fixed float formatting
# ---------------------------------------------------------------------------

def format_float(x: float) -> str:
    """17 significant digits: exact double round-trip, stable across runs."""
    return format(float(x), ".17g")


def _render(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, str):
        # JSON string escaping for the limited character set we emit
        out = value.replace("\\", "\\\\").replace('"', '\\"')
        out = out.replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
        return f'"{out}"'
    if isinstance(value, dict):
        inner = ",".join(f"{_render(str(k))}:{_render(v)}" for k, v in value.items())
        return "{" + inner + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_render(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} value {value!r}")


def dumps_record(record: dict) -> str:
    """One-line JSON with deterministic key order (insertion order)."""
    return _render(record)


def write_json(path: str | Path, record: dict) -> None:
    Path(path).write_text(dumps_record(record) + "\n", encoding="utf-8")


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    text = "".join(dumps_record(r) + "\n" for r in records)
    Path(path).write_text(text, encoding="utf-8")


def read_jsonl(path: str | Path) -> list[dict]:
    import json

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# ---------------------------------------------------------------------------
# parameter snapshots
# ---------------------------------------------------------------------------

def write_params(path: str | Path, theta: np.ndarray) -> None:
    """Serialize a flat float vector with the documented header."""
    if theta.ndim != 1:
        raise ValueError(f"expected a flat parameter vector, got shape {theta.shape}")
    if theta.dtype == np.float64:
        bits, wire = 64, "<f8"
    elif theta.dtype == np.float32:
        bits, wire = 32, "<f4"
    else:
        raise ValueError(f"unsupported parameter dtype {theta.dtype}")
    header = PARAMS_MAGIC + struct.pack("<IIQ", PARAMS_VERSION, bits, theta.shape[0])
    Path(path).write_bytes(header + theta.astype(wire, copy=False).tobytes())


def read_params(path: str | Path) -> np.ndarray:
    """Inverse of :func:`write_params`; validates the header strictly."""
    blob = Path(path).read_bytes()
    if len(blob) < 20 or blob[:4] != PARAMS_MAGIC:
        raise ValueError(f"{path}: not a parameter snapshot (bad magic)")
    version, bits, count = struct.unpack("<IIQ", blob[4:20])
    if version != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    if bits == 64:
        dtype = np.dtype("<f8")
    elif bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise ValueError(f"{path}: unsupported precision {bits}")
    expected = 20 + count * dtype.itemsize
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated payload ({len(blob)} bytes, expected {expected})")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=20)
    return data.astype(dtype.newbyteorder("="), copy=True)
