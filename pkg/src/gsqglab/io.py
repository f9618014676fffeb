"""Snapshot, diagnostic-series and config-file formats."""
from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GSQG1"
_HEADER = struct.Struct("<5sIddd")


def write_snapshot(path, values: np.ndarray, length: float, t: float, beta: float):
    values = np.asarray(values, dtype="<f8")
    n = values.shape[0]
    if values.shape != (n, n):
        raise ValueError("snapshot must be a square array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, float(length), float(t), float(beta)))
        fh.write(np.ascontiguousarray(values).tobytes(order="C"))


def read_snapshot(path) -> dict:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, n, length, t, beta = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = data[_HEADER.size:]
    if len(body) != 8 * n * n:
        raise ValueError(f"{path}: expected {n * n} samples, found {len(body) // 8}")
    values = np.frombuffer(body, dtype="<f8").reshape(n, n).astype(float)
    return {"n": n, "length": length, "t": t, "beta": beta, "values": values}


def read_snapshot_sequence(directory) -> list[dict]:
    files = sorted(Path(directory).glob("*.bin"))
    if not files:
        raise ValueError(f"no snapshots in {directory}")
    return sorted((read_snapshot(f) for f in files), key=lambda s: s["t"])


def write_series(path, times, series: dict, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for i, t in enumerate(times):
            w.writerow([repr(float(t))] + [repr(float(series[c][i])) for c in columns[1:]])


def read_series(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


class ConfigError(ValueError):
    def __init__(self, message, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    if "," in text:
        return [_coerce(t.strip()) for t in text.split(",") if t.strip()]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if low in ("pi", "2pi"):
        return math.pi * (2 if low == "2pi" else 1)
    return text


class ConfigDict(dict):
    """Parsed config that remembers the source line of each key."""

    def __init__(self):
        super().__init__()
        self.lines: dict[str, int] = {}


def parse_config(text: str) -> ConfigDict:
    """``key = value`` per line, ``#`` comments; comma-separated values become lists."""
    out = ConfigDict()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key.isidentifier():
            raise ConfigError(f"invalid key {key!r}", no)
        if not value:
            raise ConfigError(f"missing value for {key!r}", no)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", no)
        out[key] = _coerce(value)
        out.lines[key] = no
    return out


def load_config(path) -> ConfigDict:
    return parse_config(Path(path).read_text(encoding="utf-8"))
