"""File formats: PFM/CSV depth, intrinsics, cuboid text, OBJ and JSON reports.

PFM is the canonical depth format (float32, exact round trip). Invalid depth
is encoded as 0. All loaders reject NaN/Inf payloads with errors naming the
offending location. Report writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .geometry import CameraModel, Cuboid
from .pipeline import CuboidSet


class ParseError(ValueError):
    """Malformed input file; the message names the file and position."""


def write_pfm(raster: np.ndarray, path) -> None:
    """Grayscale PFM, little-endian (negative scale), rows bottom-to-top."""
    raster = np.asarray(raster, dtype=np.float32)
    if raster.ndim != 2:
        raise ValueError("PFM writer expects a 2D raster")
    H, W = raster.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{W} {H}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(raster[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()

    def next_token(offset: int) -> tuple[bytes, int]:
        while offset < len(data) and data[offset : offset + 1].isspace():
            offset += 1
        start = offset
        while offset < len(data) and not data[offset : offset + 1].isspace():
            offset += 1
        if start == offset:
            raise ParseError(f"{path}: truncated header at byte {start}")
        return data[start:offset], offset

    magic, pos = next_token(0)
    if magic != b"Pf":
        raise ParseError(f"{path}: bad magic {magic!r} at byte 0 (grayscale 'Pf' required)")
    try:
        w_tok, pos = next_token(pos)
        h_tok, pos = next_token(pos)
        scale_tok, pos = next_token(pos)
        W, H, scale = int(w_tok), int(h_tok), float(scale_tok)
    except ValueError as exc:
        raise ParseError(f"{path}: malformed header near byte {pos}: {exc}") from exc
    if W <= 0 or H <= 0:
        raise ParseError(f"{path}: bad dimensions {W}x{H} in header")
    pos += 1  # single whitespace after the scale line
    expect = pos + 4 * W * H
    if len(data) != expect:
        raise ParseError(f"{path}: expected {expect} bytes, found {len(data)} (payload at byte {pos})")
    dtype = "<f4" if scale < 0 else ">f4"
    raster = np.frombuffer(data, dtype=dtype, count=W * H, offset=pos).reshape(H, W)
    if not np.all(np.isfinite(raster)):
        bad = int(np.flatnonzero(~np.isfinite(raster))[0])
        raise ParseError(f"{path}: non-finite value at element {bad} (byte {pos + 4 * bad})")
    return raster[::-1].astype(float)


def read_csv_depth(path) -> np.ndarray:
    try:
        raster = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(raster)):
        row = int(np.flatnonzero(~np.isfinite(raster).all(axis=1))[0]) + 1
        raise ParseError(f"{path}: non-finite value on data row {row}")
    return raster


def load_depth(path, format: str | None = None) -> np.ndarray:
    """Load a depth raster; format from the extension unless given."""
    fmt = format or ("pfm" if str(path).lower().endswith(".pfm") else "csv")
    if fmt == "pfm":
        return read_pfm(path)
    if fmt == "csv":
        return read_csv_depth(path)
    raise ValueError(f"unknown depth format {fmt!r}")


INTRINSIC_FIELDS = ("fx", "fy", "cx", "cy")


def load_intrinsics(path) -> CameraModel:
    """Text file 'fx fy cx cy' on one line."""
    with open(path) as fh:
        content = fh.read()
    tokens = content.split()
    if len(tokens) < len(INTRINSIC_FIELDS):
        missing = INTRINSIC_FIELDS[len(tokens)]
        raise ParseError(f"{path}: missing field '{missing}' (need 'fx fy cx cy')")
    if len(tokens) > len(INTRINSIC_FIELDS):
        raise ParseError(f"{path}: expected 4 fields, got {len(tokens)}")
    try:
        fx, fy, cx, cy = (float(t) for t in tokens)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy)


def save_intrinsics(camera: CameraModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{float(camera.fx)!r} {float(camera.fy)!r} {float(camera.cx)!r} {float(camera.cy)!r}\n")


def load_cuboids(path) -> list[Cuboid]:
    """Text format: 'ax ay az rx ry rz tx ty tz' per line, # comments."""
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 9:
                raise ParseError(f"{path}:{lineno}: expected 9 fields, got {len(fields)}")
            try:
                vals = [float(x) for x in fields]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if not all(np.isfinite(vals)):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            out.append(Cuboid(vals[0:3], vals[3:6], vals[6:9]))
    return out


def save_cuboids(cuboids, path, header: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write("# ax ay az rx ry rz tx ty tz\n")
        if header:
            fh.write(f"# {header}\n")
        for c in cuboids:
            vals = [*c.half_extents, *c.rotation, *c.translation]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def atomic_write_text(text: str, path) -> None:
    """Write via temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_report(report: dict, path) -> None:
    atomic_write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", path)


def load_report_cuboids(path) -> list[Cuboid]:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    entries = payload.get("cuboids")
    if entries is None:
        raise ParseError(f"{path}: report has no 'cuboids' field")
    return [
        Cuboid(e["half_extents"], e["rotation"], e["translation"]) for e in entries
    ]


def cuboid_set_report(result: CuboidSet, config_echo: dict | None = None) -> dict:
    report = {
        "format": "cuboidfit-report-v1",
        "cuboids": [
            {
                "half_extents": [float(v) for v in c.half_extents],
                "rotation": [float(v) for v in c.rotation],
                "translation": [float(v) for v in c.translation],
            }
            for c in result.cuboids
        ],
        "scores": [float(s) for s in result.scores],
    }
    if config_echo:
        report["config"] = config_echo
    return report


_CORNER_SIGNS = [
    (-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
    (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1),
]
# Two triangles per face, right-handed outward winding in the local frame.
_BOX_TRIANGLES = [
    (0, 2, 1), (0, 3, 2),  # -z
    (4, 5, 6), (4, 6, 7),  # +z
    (0, 1, 5), (0, 5, 4),  # -y
    (2, 3, 7), (2, 7, 6),  # +y
    (0, 4, 7), (0, 7, 3),  # -x
    (1, 2, 6), (1, 6, 5),  # +x
]


def export_obj(cuboids, path) -> None:
    """8 vertices + 12 triangles per cuboid, in world coordinates."""
    cuboids = list(cuboids)
    lines = []
    for c in cuboids:
        local = np.array(_CORNER_SIGNS, dtype=float) * c.half_extents
        world = local @ c.matrix + c.translation
        for v in world:
            lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for i in range(len(cuboids)):
        base = 8 * i + 1
        for tri in _BOX_TRIANGLES:
            lines.append(f"f {base + tri[0]} {base + tri[1]} {base + tri[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def export_curve_csv(curve: np.ndarray, path) -> None:
    """Two-column CSV of a recall curve (threshold, recall)."""
    lines = ["threshold,recall"] + [f"{float(t)!r},{float(r)!r}" for t, r in curve]
    atomic_write_text("\n".join(lines) + "\n", path)
