"""File codecs: the flat tensor format and the sensor/inference CSV schemas.

Flat tensor files carry the magic "AQTN1", a little-endian uint32 dimension
count, the dimensions as uint32, then the payload as little-endian float32 in
row-major order.  Reads verify the magic and the exact payload length.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import FormatError
from .scale import AQI_MAX

TENSOR_MAGIC = b"AQTN1"

HISTORY_COLUMNS = (
    "timestamp",
    "i",
    "j",
    "k",
    "aqi",
    "weather",
    "wind_speed",
    "wind_dir",
    "humidity",
    "temperature",
)
MAP_COLUMNS = ("timestamp", "i", "j", "k", "aqi", "provenance")
PRIORS_COLUMNS = ("device", "x_min", "x_max", "pre_inferred")


def write_tensor(path, values: np.ndarray) -> None:
    arr = np.asarray(values, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(np.uint32(arr.ndim).newbyteorder("<").tobytes())
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(TENSOR_MAGIC))
        if magic != TENSOR_MAGIC:
            raise FormatError(f"{path}: bad tensor magic {magic!r}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise FormatError(f"{path}: truncated dimension count")
        ndim = int(np.frombuffer(raw, dtype="<u4")[0])
        if ndim < 1 or ndim > 8:
            raise FormatError(f"{path}: implausible dimension count {ndim}")
        raw = fh.read(4 * ndim)
        if len(raw) != 4 * ndim:
            raise FormatError(f"{path}: truncated dimension list")
        dims = tuple(int(d) for d in np.frombuffer(raw, dtype="<u4"))
        expected = int(np.prod(dims)) * 4
        payload = fh.read()
        if len(payload) != expected:
            raise FormatError(
                f"{path}: payload is {len(payload)} bytes, expected {expected}"
            )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)


def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(
            f"{path}: line {line}: non-numeric {column} field {text!r}"
        ) from None


def read_history_csv(path):
    """Parse sensor history rows into (timestamps, rows).

    Each row becomes a dict with cube index, optional aqi (None = unlabeled
    node) and the weather covariates.  Timestamps are returned sorted.
    """
    rows = []
    stamps = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != HISTORY_COLUMNS:
            raise FormatError(
                f"{path}: expected header {','.join(HISTORY_COLUMNS)}"
            )
        for line, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(HISTORY_COLUMNS):
                raise FormatError(
                    f"{path}: line {line}: expected {len(HISTORY_COLUMNS)} fields, got {len(raw)}"
                )
            stamp = _parse_float(raw[0], path, line, "timestamp")
            index = tuple(
                int(_parse_float(raw[p], path, line, HISTORY_COLUMNS[p]))
                for p in (1, 2, 3)
            )
            aqi_text = raw[4].strip()
            aqi = None
            if aqi_text:
                aqi = _parse_float(aqi_text, path, line, "aqi")
                if not (0.0 <= aqi <= AQI_MAX):
                    raise FormatError(
                        f"{path}: line {line}: aqi {aqi} outside [0, {AQI_MAX}]"
                    )
            rows.append(
                {
                    "timestamp": stamp,
                    "index": index,
                    "aqi": aqi,
                    "weather": int(_parse_float(raw[5], path, line, "weather")),
                    "wind_speed": _parse_float(raw[6], path, line, "wind_speed"),
                    "wind_dir": _parse_float(raw[7], path, line, "wind_dir"),
                    "humidity": _parse_float(raw[8], path, line, "humidity"),
                    "temperature": _parse_float(raw[9], path, line, "temperature"),
                }
            )
            stamps.add(stamp)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return sorted(stamps), rows


def write_history_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r["timestamp"],
                    r["index"][0],
                    r["index"][1],
                    r["index"][2],
                    "" if r["aqi"] is None else r["aqi"],
                    r["weather"],
                    r["wind_speed"],
                    r["wind_dir"],
                    r["humidity"],
                    r["temperature"],
                ]
            )


def write_map_csv(path, timestamp, values: dict, provenance: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MAP_COLUMNS)
        for index in sorted(values):
            writer.writerow(
                [timestamp, index[0], index[1], index[2], values[index], provenance[index]]
            )


def read_priors_csv(path):
    """Device priors rows: device,x_min,x_max,pre_inferred."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PRIORS_COLUMNS:
            raise FormatError(f"{path}: expected header {','.join(PRIORS_COLUMNS)}")
        for line, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(PRIORS_COLUMNS):
                raise FormatError(
                    f"{path}: line {line}: expected {len(PRIORS_COLUMNS)} fields, got {len(raw)}"
                )
            out.append(
                {
                    "device": int(_parse_float(raw[0], path, line, "device")),
                    "x_min": _parse_float(raw[1], path, line, "x_min"),
                    "x_max": _parse_float(raw[2], path, line, "x_max"),
                    "pre_inferred": _parse_float(raw[3], path, line, "pre_inferred"),
                }
            )
    return out


def read_points_csv(path, columns=("id", "x", "y")):
    """Generic id,x,y table (devices, POIs)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != tuple(columns):
            raise FormatError(f"{path}: expected header {','.join(columns)}")
        for line, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(columns):
                raise FormatError(
                    f"{path}: line {line}: expected {len(columns)} fields, got {len(raw)}"
                )
            out.append(
                (
                    int(_parse_float(raw[0], path, line, columns[0])),
                    _parse_float(raw[1], path, line, columns[1]),
                    _parse_float(raw[2], path, line, columns[2]),
                )
            )
    return out


def write_points_csv(path, points, columns=("id", "x", "y")) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in points:
            writer.writerow(list(row))


def read_scales_csv(path):
    """Per-cube conditioning rows: i,j,k,x_min,x_max."""
    columns = ("i", "j", "k", "x_min", "x_max")
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != columns:
            raise FormatError(f"{path}: expected header {','.join(columns)}")
        for line, raw in enumerate(reader, start=2):
            if not raw or all(not cell.strip() for cell in raw):
                continue
            if len(raw) != len(columns):
                raise FormatError(
                    f"{path}: line {line}: expected {len(columns)} fields, got {len(raw)}"
                )
            index = tuple(int(_parse_float(raw[p], path, line, columns[p])) for p in (0, 1, 2))
            out[index] = (
                _parse_float(raw[3], path, line, "x_min"),
                _parse_float(raw[4], path, line, "x_max"),
            )
    return out
