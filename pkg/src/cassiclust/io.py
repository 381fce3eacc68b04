"""Binary and text file formats.

SCUBE1 (cube)::

    0   4s   magic b"SCUB"
    4   u32  version = 1
    8   u32  M, u32 N, u32 L
    20  f64  M*N*L values, pixel-major

SMEAS1 (measurements)::

    0   4s   magic b"SMEA"
    4   u32  version = 1
    8   u32  S, u32 M, u32 N
    20  f64  noise sigma
    28  32s  pattern digest
    60  f64  S*M*N values, row-major S x MN

All integers and floats are little-endian.
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

from .data import CodingPattern, LabelMap, MeasurementSet, SpectralCube
from .errors import BadMagicError, FormatError, NonFiniteError, TruncatedError, ValidationError

CUBE_MAGIC = b"SCUB"
MEAS_MAGIC = b"SMEA"
VERSION = 1
_CUBE_HEADER = struct.Struct("<4s4I")
_MEAS_HEADER = struct.Struct("<4s4Id32s")


def _read_payload(raw, offset, count, what):
    need = offset + 8 * count
    if len(raw) < need:
        raise TruncatedError(f"{what}: payload needs {need} bytes, file has {len(raw)}", len(raw))
    if len(raw) > need:
        raise FormatError(f"{what}: {len(raw) - need} trailing bytes after payload", need)
    vals = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64)
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise NonFiniteError(f"{what}: non-finite value {vals[i]!r} at element {i}", offset + 8 * i)
    return vals


def _check_magic(raw, magic, header, what):
    if len(raw) < 4 or raw[:4] != magic:
        raise BadMagicError(f"{what}: expected magic {magic!r}, found {bytes(raw[:4])!r}", 0)
    if len(raw) < header.size:
        raise TruncatedError(f"{what}: header needs {header.size} bytes, file has {len(raw)}", len(raw))
    fields = header.unpack_from(raw, 0)
    if fields[1] != VERSION:
        raise FormatError(f"{what}: unsupported version {fields[1]}", 4)
    return fields


def _atomic_write(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_cube(path) -> SpectralCube:
    raw = Path(path).read_bytes()
    _, _, M, N, L = _check_magic(raw, CUBE_MAGIC, _CUBE_HEADER, "SCUBE1")
    if min(M, N, L) < 1:
        raise FormatError(f"SCUBE1: zero dimension in header ({M}, {N}, {L})", 8)
    vals = _read_payload(raw, _CUBE_HEADER.size, M * N * L, "SCUBE1")
    if (vals < 0).any():
        i = int(np.argmax(vals < 0))
        raise FormatError(f"SCUBE1: negative value at element {i}", _CUBE_HEADER.size + 8 * i)
    return SpectralCube(M, N, L, vals)


def cube_bytes(cube: SpectralCube) -> bytes:
    head = _CUBE_HEADER.pack(CUBE_MAGIC, VERSION, cube.rows, cube.cols, cube.bands)
    return head + cube.values.astype("<f8").tobytes()


def save_cube(cube: SpectralCube, path):
    if not isinstance(cube, SpectralCube):
        raise ValidationError("save_cube expects a SpectralCube")
    _atomic_write(path, cube_bytes(cube))


def load_measurements(path) -> MeasurementSet:
    raw = Path(path).read_bytes()
    _, _, S, M, N, sigma, ref = _check_magic(raw, MEAS_MAGIC, _MEAS_HEADER, "SMEAS1")
    if min(S, M, N) < 1:
        raise FormatError(f"SMEAS1: zero dimension in header ({S}, {M}, {N})", 8)
    if not (np.isfinite(sigma) and sigma >= 0):
        raise NonFiniteError(f"SMEAS1: invalid noise sigma {sigma!r}", 20)
    vals = _read_payload(raw, _MEAS_HEADER.size, S * M * N, "SMEAS1")
    return MeasurementSet(M, N, vals.reshape(S, M * N), ref, sigma)


def measurement_bytes(meas: MeasurementSet) -> bytes:
    head = _MEAS_HEADER.pack(MEAS_MAGIC, VERSION, meas.snapshots, meas.rows, meas.cols,
                             meas.noise_sigma, meas.pattern_ref)
    return head + meas.data.astype("<f8").tobytes()


def save_measurements(meas: MeasurementSet, path):
    _atomic_write(path, measurement_bytes(meas))


def _parse_int_csv(text, what):
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = [int(tok) for tok in line.split(",")]
        except ValueError:
            raise FormatError(f"{what}: non-integer token on line {lineno}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(f"{what}: line {lineno} has {len(row)} columns, expected {width}")
        rows.append(row)
    if not rows:
        raise FormatError(f"{what}: empty file")
    return np.array(rows, dtype=np.int64)


def _int_csv(arr):
    return "".join(",".join(str(int(v)) for v in row) + "\n" for row in arr)


def load_labels(path, classes=None, crop=None) -> LabelMap:
    """Read an M x N integer CSV.

    ``crop=(row0, col0, rows, cols)`` cuts a window first; ``classes`` keeps only
    the listed ground-truth classes, renumbered 1..len(classes) in that order.
    """
    arr = _parse_int_csv(Path(path).read_text(), "labels")
    if (arr < 0).any():
        r, c = np.argwhere(arr < 0)[0]
        raise FormatError(f"labels: negative label at line {r + 1}, column {c + 1}")
    labels = LabelMap(arr.shape[0], arr.shape[1], arr)
    if crop is not None:
        labels = labels.crop(*crop)
    if classes is not None:
        labels = labels.remap(classes)
    return labels


def save_labels(labels: LabelMap, path):
    _atomic_write(path, _int_csv(labels.as_array()).encode())


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def save_pattern(pattern: CodingPattern, path):
    _atomic_write(path, _int_csv(pattern.entries).encode())
    meta = {
        "lambda1": pattern.lambda1.tolist(),
        "lambda2": pattern.lambda2.tolist(),
        "bandwidth": pattern.bandwidth,
    }
    _atomic_write(sidecar_path(path), (json.dumps(meta) + "\n").encode())


def load_pattern(path) -> CodingPattern:
    entries = _parse_int_csv(Path(path).read_text(), "pattern")
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"pattern sidecar {side}: {exc.msg}", exc.pos) from None
    missing = {"lambda1", "lambda2", "bandwidth"} - set(meta)
    if missing:
        raise FormatError(f"pattern sidecar {side}: missing keys {sorted(missing)}")
    return CodingPattern(entries, meta["lambda1"], meta["lambda2"], meta["bandwidth"])
