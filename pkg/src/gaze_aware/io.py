"""File formats: gaze JSONL, binary flow, 16-bit PGM heatmaps, annotations, mass CSV."""

from __future__ import annotations

import csv
import json
import logging
import struct
from pathlib import Path

import numpy as np

from gaze_aware.grid import FlowField, GazeFrame
from gaze_aware.objective import AnnotationRecord

log = logging.getLogger(__name__)

FLOW_MAGIC = b"MFLO"
PGM_MAX = 65535


class FormatError(ValueError):
    """Malformed input file; the message names the location of the problem."""


# --- gaze ---------------------------------------------------------------------


def gaze_to_json(g: GazeFrame) -> dict:
    return {
        "frame": int(g.frame_index),
        "points": [[float(x), float(y)] for x, y in g.points],
        "valid": [bool(v) for v in g.valid],
    }


def gaze_from_json(obj) -> GazeFrame:
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    missing = {"frame", "points", "valid"} - obj.keys()
    if missing:
        raise ValueError(f"missing keys {sorted(missing)}")
    frame = obj["frame"]
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise ValueError("frame must be an integer")
    points, valid = obj["points"], obj["valid"]
    if not isinstance(points, list) or len(points) != 3:
        raise ValueError(f"expected 3 gaze slots, got {len(points) if isinstance(points, list) else points!r}")
    if not isinstance(valid, list) or len(valid) != 3:
        raise ValueError("expected 3 validity flags")
    if not all(isinstance(v, bool) for v in valid):
        raise ValueError("validity flags must be booleans")
    pts = np.array(points, dtype=float)
    if pts.shape != (3, 2):
        raise ValueError("each point must be an [x, y] pair")
    if not np.all(np.isfinite(pts)) or pts.min() < 0 or pts.max() > 1:
        raise ValueError("coordinates must lie in [0, 1]")
    return GazeFrame(frame, pts, np.array(valid, dtype=bool))


def read_gaze_jsonl(path) -> list[GazeFrame]:
    """One ``{"frame", "points", "valid"}`` object per line; blank lines are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(gaze_from_json(json.loads(line)))
            except (ValueError, TypeError) as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    if not out:
        log.warning("%s holds no gaze frames", path)
    return out


def write_gaze_jsonl(gaze: list[GazeFrame], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in gaze:
            fh.write(json.dumps(gaze_to_json(g), separators=(",", ":")) + "\n")


# --- annotations --------------------------------------------------------------


def read_annotations_jsonl(path) -> list[AnnotationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(AnnotationRecord(int(d["frame"]), float(d["x"]), float(d["y"]), float(d["label"])))
            except (ValueError, TypeError, KeyError) as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    return out


def write_annotations_jsonl(annotations: list[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a in annotations:
            d = {"frame": int(a.frame_index), "x": float(a.x), "y": float(a.y), "label": float(a.label)}
            fh.write(json.dumps(d, separators=(",", ":")) + "\n")


# --- flow ---------------------------------------------------------------------


def encode_flow(flows: list[FlowField]) -> bytes:
    parts = []
    for f in flows:
        h, w = f.shape
        parts.append(FLOW_MAGIC + struct.pack("<II", w, h))
        parts.append(np.ascontiguousarray(f.u, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(f.v, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_flow(data: bytes, name: str = "<bytes>") -> list[FlowField]:
    """Concatenated records: ``MFLO``, u32 width, u32 height, u plane, v plane (f32, little-endian)."""
    out = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < 12:
            raise FormatError(f"{name}: truncated flow header at byte {pos}")
        if data[pos : pos + 4] != FLOW_MAGIC:
            raise FormatError(f"{name}: bad magic at byte {pos}")
        w, h = struct.unpack_from("<II", data, pos + 4)
        pos += 12
        n = w * h * 4
        if len(data) - pos < 2 * n:
            raise FormatError(f"{name}: truncated flow planes at byte {len(data)} (record needs {pos + 2 * n})")
        u = np.frombuffer(data, dtype="<f4", count=w * h, offset=pos).reshape(h, w)
        v = np.frombuffer(data, dtype="<f4", count=w * h, offset=pos + n).reshape(h, w)
        out.append(FlowField(u.astype(float), v.astype(float)))
        pos += 2 * n
    return out


def write_flow(flows: list[FlowField], path) -> None:
    Path(path).write_bytes(encode_flow(flows))


def read_flow(path) -> list[FlowField]:
    return decode_flow(Path(path).read_bytes(), str(path))


# --- heatmaps -----------------------------------------------------------------


def encode_pgm(m: np.ndarray) -> bytes:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"heatmap must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or m.min() < 0 or m.max() > 1:
        raise ValueError("heatmap values must lie in [0, 1]")
    h, w = m.shape
    header = f"P5\n{w} {h}\n{PGM_MAX}\n".encode("ascii")
    return header + np.rint(m * PGM_MAX).astype(">u2").tobytes()


def _pgm_tokens(data: bytes, n: int):
    """First ``n`` header tokens (comments skipped) and the offset of the raster."""
    tokens = []
    pos = 0
    while len(tokens) < n:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # single whitespace before the raster


def decode_pgm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    try:
        (magic, w, h, maxval), off = _pgm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, FormatError) as e:
        raise FormatError(f"{name}: bad PGM header ({e})") from None
    if magic != b"P5":
        raise FormatError(f"{name}: not a binary PGM (magic {magic!r})")
    if not 0 < maxval <= PGM_MAX or w <= 0 or h <= 0:
        raise FormatError(f"{name}: bad PGM dimensions or maxval")
    dtype = ">u2" if maxval > 255 else "u1"
    need = w * h * np.dtype(dtype).itemsize
    if len(data) - off < need:
        raise FormatError(f"{name}: truncated PGM raster at byte {len(data)} (needs {off + need})")
    raw = np.frombuffer(data, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return raw.astype(float) / maxval


def write_heatmap_pgm(m: np.ndarray, path) -> None:
    """16-bit binary PGM, sample = round(v * 65535)."""
    Path(path).write_bytes(encode_pgm(m))


def read_heatmap_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes(), str(path))


def write_heatmap_sequence(stack: np.ndarray, directory, prefix: str, start: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, m in enumerate(stack):
        p = directory / f"{prefix}_{start + t:06}.pgm"
        write_heatmap_pgm(m, p)
        paths.append(p)
    return paths


def read_heatmap_sequence(directory, prefix: str) -> np.ndarray:
    paths = sorted(Path(directory).glob(f"{prefix}_*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no {prefix}_*.pgm files in {directory}")
    return np.stack([read_heatmap_pgm(p) for p in paths])


def write_density_pgm(m: np.ndarray, path) -> None:
    """Densities are stored scaled by their maximum; readers renormalize."""
    m = np.asarray(m, dtype=float)
    top = m.max()
    write_heatmap_pgm(m / top if top > 0 else m, path)


# --- tables -------------------------------------------------------------------


def format_number(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    """Deterministic CSV: ``repr`` floats, ``\\n`` line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([format_number(v) for v in r])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def write_mass_csv(stack: np.ndarray, path, start: int = 0) -> None:
    write_csv(path, ("frame", "mass"), [(start + t, float(m.sum())) for t, m in enumerate(stack)])


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
