"""File formats: field/trajectory binaries with JSON sidecars, CSV tables, run metadata."""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .cgle import CgleParams, StepScheme, TrajectoryStore
from .errors import ContractError
from .grid import Field, TimeGrid, make_grid

MAGIC = b"SOLC"
VERSION = 1
DTYPE_COMPLEX128 = 1
# magic, version, dtype code, n_points, frames, dz, t_window
_HEADER = struct.Struct("<4sHHIIdd")


def _write_atomic(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_frames(path, grid: TimeGrid, frames: np.ndarray, dz: float = 0.0) -> None:
    frames = np.ascontiguousarray(np.atleast_2d(frames), dtype="<c16")
    if frames.shape[1] != grid.n_points:
        raise ContractError("frames do not match the grid")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_COMPLEX128, grid.n_points, frames.shape[0],
                          float(dz), float(grid.t_window))
    _write_atomic(Path(path), header + frames.tobytes())


def read_frames(path):
    """Return (grid, frames, dz) from a binary written by :func:`write_frames`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContractError(f"{path}: truncated header")
    magic, version, code, n, count, dz, t_window = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION or code != DTYPE_COMPLEX128:
        raise ContractError(f"{path}: not a field file (magic={magic!r}, version={version})")
    body = raw[_HEADER.size:]
    if len(body) != 16 * n * count:
        raise ContractError(f"{path}: payload size {len(body)} does not match header")
    frames = np.frombuffer(body, dtype="<c16").reshape(count, n).astype(np.complex128)
    return make_grid(n, t_window), frames, dz


def save_state(path, field: Field, sidecar: dict | None = None) -> list[Path]:
    """Write a stationary field plus a JSON sidecar; returns the written paths."""
    path = Path(path)
    write_frames(path, field.grid, field.values)
    side = path.with_suffix(".json")
    info = {"n_points": field.grid.n_points, "t_window": field.grid.t_window,
            "energy": field.energy()}
    info.update(sidecar or {})
    write_json(side, info)
    return [path, side]


def load_state(path) -> tuple[Field, dict]:
    grid, frames, _ = read_frames(path)
    if frames.shape[0] != 1:
        raise ContractError(f"{path}: expected a single field, found {frames.shape[0]} frames")
    side = Path(path).with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return Field(grid, frames[0]), meta


def save_trajectory(path, trajectory: TrajectoryStore) -> Path:
    """Spill a trajectory: frame 0 is the initial field, then one midpoint per step."""
    frames = np.vstack([trajectory.initial[None, :], trajectory.midpoints])
    write_frames(path, trajectory.grid, frames, trajectory.dz)
    return Path(path)


def load_trajectory(path, params: CgleParams, substeps: int = 1) -> TrajectoryStore:
    grid, frames, dz = read_frames(path)
    return TrajectoryStore(grid, params, StepScheme(dz, substeps), frames[0], frames[1:])


def format_number(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: list[str], rows) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else format_number(v) for v in row))
    _write_atomic(Path(path), ("\n".join(lines) + "\n").encode())
    return Path(path)


def write_matrix_csv(path, matrix: np.ndarray, labels=None) -> Path:
    """Square matrix with an optional first row/column of slot-centre labels."""
    matrix = np.asarray(matrix, dtype=float)
    if labels is None:
        rows = [list(r) for r in matrix]
        header = [f"s{j}" for j in range(matrix.shape[1])]
    else:
        header = ["t"] + [format_number(x) for x in labels]
        rows = [[format_number(labels[i])] + list(r) for i, r in enumerate(matrix)]
    return write_csv(path, header, rows)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text().strip().splitlines()
    header = text[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    return header, data


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else str(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, payload: dict) -> Path:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    _write_atomic(Path(path), (text + "\n").encode())
    return Path(path)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_metadata(path, payload: dict, artifacts) -> Path:
    """Write run metadata listing every artifact with its SHA-256, atomically."""
    outdir = Path(path).parent
    files = []
    for a in artifacts:
        a = Path(a)
        rel = a.relative_to(outdir) if a.is_relative_to(outdir) else a
        files.append({"path": str(rel), "sha256": sha256(a), "bytes": a.stat().st_size})
    payload = dict(payload)
    payload["artifacts"] = files
    return write_json(path, payload)
