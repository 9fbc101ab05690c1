"""Serialization of displacement fields, crack reports and load histories.

Every writer has a reader that parses its output back into the same type.
Floats are written with ``repr`` so text round trips are exact.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .crack import CrackEdges, CrackReport
from .errors import ConfigError
from .rgdic import DisplacementField, RoiGrid

FIELD_COLUMNS = ("frame", "grid_x", "grid_y", "pixel_x", "pixel_y",
                 "u_px", "v_px", "u_mm", "v_mm", "zncc", "valid")
REPORT_COLUMNS = ("frame", "time_s", "tip_x_mm", "tip_y_mm", "n_edge_points", "speed_mm_s")
EDGE_COLUMNS = ("frame", "side", "row", "col", "x_ref_mm", "y_ref_mm", "x_def_mm", "y_def_mm")
LOAD_COLUMNS = ("time_s", "load_kN", "displacement_mm")

DICF_MAGIC = b"DICF"
DICF_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")       # magic, version, nx, ny, step, scale
_EXTENT = struct.Struct("<iiii")          # roi x, y, width, height
_FRAMES = struct.Struct("<iii4x")         # frame, reference frame, updated reference
assert _HEADER.size == 32


def _num(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def _parse(s: str) -> float:
    return float(s) if s.strip() else float("nan")


# ---------------------------------------------------------------------------
# field CSV


def write_field_csv(fields: DisplacementField | Iterable[DisplacementField], path) -> None:
    """One row per grid point and frame; invalid points leave value cells empty."""
    if isinstance(fields, DisplacementField):
        fields = [fields]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_COLUMNS)
        for f in fields:
            X, Y = f.grid.positions()
            s = f.scale
            for j in range(f.grid.ny):
                for i in range(f.grid.nx):
                    ok = bool(f.valid[j, i])
                    u, v = f.u[j, i], f.v[j, i]
                    w.writerow([f.frame, i, j, int(X[j, i]), int(Y[j, i]),
                                _num(u), _num(v),
                                _num(u * s) if s is not None and ok else "",
                                _num(v * s) if s is not None and ok else "",
                                _num(f.zncc[j, i]), int(ok)])


def read_field_csv(path, grid: RoiGrid | None = None, scale: float | None = None
                   ) -> list[DisplacementField]:
    """Fields of a field CSV, one per frame in file order.

    The grid is rebuilt from the pixel columns (ROI extent ``n * step``)
    unless given. ``scale`` defaults to the ratio of the mm and pixel columns.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: no field rows")
    missing = set(FIELD_COLUMNS) - set(rows[0])
    if missing:
        raise ConfigError(f"{path}: missing columns {sorted(missing)}")
    by_frame: dict[int, list] = {}
    for r in rows:
        by_frame.setdefault(int(r["frame"]), []).append(r)
    out = []
    for frame, rs in by_frame.items():
        gi = np.array([int(r["grid_x"]) for r in rs])
        gj = np.array([int(r["grid_y"]) for r in rs])
        g = grid or _grid_from_rows(rs, gi, gj)
        shape = g.shape
        u = np.full(shape, np.nan)
        v = np.full(shape, np.nan)
        z = np.full(shape, np.nan)
        ok = np.zeros(shape, bool)
        ratio = []
        for r, i, j in zip(rs, gi, gj):
            ok[j, i] = r["valid"].strip() == "1"
            u[j, i] = _parse(r["u_px"])
            v[j, i] = _parse(r["v_px"])
            z[j, i] = _parse(r["zncc"])
            if scale is None and r["u_mm"].strip() and u[j, i] != 0.0:
                ratio.append(float(r["u_mm"]) / u[j, i])
        s = scale if scale is not None else (float(np.median(ratio)) if ratio else None)
        out.append(DisplacementField(g, u, v, z, ok, 0, frame, s))
    return out


def _grid_from_rows(rs, gi, gj) -> RoiGrid:
    px = np.array([int(r["pixel_x"]) for r in rs])
    py = np.array([int(r["pixel_y"]) for r in rs])
    nx, ny = int(gi.max()) + 1, int(gj.max()) + 1
    if nx > 1:
        step = int((px.max() - px.min()) // (nx - 1))
    elif ny > 1:
        step = int((py.max() - py.min()) // (ny - 1))
    else:
        step = 1
    return RoiGrid(int(px.min()), int(py.min()), nx * step, ny * step, step)


# ---------------------------------------------------------------------------
# DICF binary


def write_field_dicf(f: DisplacementField, path) -> None:
    """Compact little-endian binary grid.

    Layout: 32-byte header ``(b"DICF", version, nx, ny, step, scale)`` with
    NaN scale when unknown, ROI ``(x, y, width, height)`` as int32, frame,
    reference frame and updated-reference indices, then ``u``, ``v`` and
    ``zncc`` as float64 grids and the validity mask as uint8, all row-major.
    """
    g = f.grid
    scale = float("nan") if f.scale is None else float(f.scale)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DICF_MAGIC, DICF_VERSION, g.nx, g.ny, float(g.step), scale))
        fh.write(_EXTENT.pack(g.x, g.y, g.width, g.height))
        fh.write(_FRAMES.pack(f.frame, f.reference_frame, f.updated_reference))
        for a in (f.u, f.v, f.zncc):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.valid, dtype=np.uint8).tobytes())


def read_field_dicf(path) -> DisplacementField:
    data = Path(path).read_bytes()
    pre = _HEADER.size + _EXTENT.size + _FRAMES.size
    if len(data) < pre:
        raise ConfigError(f"{path}: truncated DICF header")
    magic, version, nx, ny, step, scale = _HEADER.unpack_from(data, 0)
    if magic != DICF_MAGIC:
        raise ConfigError(f"{path}: not a DICF file")
    if version != DICF_VERSION:
        raise ConfigError(f"{path}: unsupported DICF version {version}")
    x, y, w, h = _EXTENT.unpack_from(data, _HEADER.size)
    frame, ref_frame, updated = _FRAMES.unpack_from(data, _HEADER.size + _EXTENT.size)
    grid = RoiGrid(x, y, w, h, int(step))
    if grid.shape != (ny, nx):
        raise ConfigError(f"{path}: header grid {nx}x{ny} disagrees with its ROI")
    n = nx * ny
    if len(data) != pre + 3 * 8 * n + n:
        raise ConfigError(f"{path}: payload size does not match a {nx}x{ny} grid")
    arrs = [np.frombuffer(data, "<f8", n, pre + k * 8 * n).reshape(ny, nx) for k in range(3)]
    valid = np.frombuffer(data, np.uint8, n, pre + 24 * n).reshape(ny, nx).astype(bool)
    return DisplacementField(grid, *arrs, valid, ref_frame, frame,
                             None if math.isnan(scale) else scale, None, updated)


# ---------------------------------------------------------------------------
# crack outputs


@dataclass(frozen=True)
class ReportRow:
    frame: int
    time_s: float
    tip_x_mm: float
    tip_y_mm: float
    n_edge_points: int
    speed_mm_s: float


def report_rows(report: CrackReport) -> list[ReportRow]:
    """Per-frame rows; ``speed_mm_s`` is the speed over the interval ending at the frame."""
    speed = {}
    if report.track is not None:
        for fr, sp in zip(report.track.frames[1:], report.track.speeds):
            speed[int(fr)] = float(sp)
    rows = []
    for e, tip, t in zip(report.edges, report.tips, report.timestamps):
        tx = ty = float("nan")
        if tip is not None:
            tx, ty = tip.x, tip.y
        rows.append(ReportRow(e.frame, float(t), tx, ty, e.n_points,
                              speed.get(e.frame, float("nan"))))
    return rows


def write_report_csv(report: CrackReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in report_rows(report):
            w.writerow([r.frame, repr(r.time_s), _num(r.tip_x_mm), _num(r.tip_y_mm),
                        r.n_edge_points, _num(r.speed_mm_s)])


def read_report_csv(path) -> list[ReportRow]:
    with open(path, newline="") as fh:
        return [ReportRow(int(r["frame"]), float(r["time_s"]), _parse(r["tip_x_mm"]),
                          _parse(r["tip_y_mm"]), int(r["n_edge_points"]),
                          _parse(r["speed_mm_s"]))
                for r in csv.DictReader(fh)]


def write_edges_csv(edges: CrackEdges, path) -> None:
    """Both contributing points of every flagged entry, ``left`` rows first."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EDGE_COLUMNS)
        for side, idx, ref, dfm in (("left", edges.left, edges.left_ref, edges.left_def),
                                    ("right", edges.right, edges.right_ref, edges.right_def)):
            for (r, c), (xr, yr), (xd, yd) in zip(idx, ref, dfm):
                w.writerow([edges.frame, side, int(r), int(c),
                            repr(float(xr)), repr(float(yr)), repr(float(xd)), repr(float(yd))])


@dataclass(frozen=True, eq=False)
class EdgeTable:
    """Edge points as read back from an edge CSV."""

    frame: int
    side: np.ndarray
    index: np.ndarray
    ref_mm: np.ndarray
    def_mm: np.ndarray

    def of_side(self, side: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.side == side
        return self.index[m], self.ref_mm[m], self.def_mm[m]


def read_edges_csv(path, frame: int | None = None) -> EdgeTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    fr = int(rows[0]["frame"]) if rows else (frame if frame is not None else 0)
    return EdgeTable(
        fr,
        np.array([r["side"] for r in rows], dtype=object),
        np.array([[int(r["row"]), int(r["col"])] for r in rows], dtype=np.int64).reshape(-1, 2),
        np.array([[float(r["x_ref_mm"]), float(r["y_ref_mm"])] for r in rows]).reshape(-1, 2),
        np.array([[float(r["x_def_mm"]), float(r["y_def_mm"])] for r in rows]).reshape(-1, 2))


# ---------------------------------------------------------------------------
# load history


@dataclass(frozen=True, eq=False)
class LoadHistory:
    time_s: np.ndarray
    load_kN: np.ndarray
    displacement_mm: np.ndarray


def read_load_history(path) -> LoadHistory:
    """Load-history CSV with columns ``time_s, load_kN, displacement_mm``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read load history {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: empty load history")
    missing = set(LOAD_COLUMNS) - set(rows[0])
    if missing:
        raise ConfigError(f"{path}: missing columns {sorted(missing)}")
    try:
        cols = [np.array([float(r[c]) for r in rows]) for c in LOAD_COLUMNS]
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric load history entry ({exc})") from exc
    if np.any(np.diff(cols[0]) <= 0):
        raise ConfigError(f"{path}: time_s must be strictly increasing")
    return LoadHistory(*cols)


def write_load_history(hist: LoadHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOAD_COLUMNS)
        for row in zip(hist.time_s, hist.load_kN, hist.displacement_mm):
            w.writerow([repr(float(x)) for x in row])


def fields_equal(a: DisplacementField, b: DisplacementField) -> bool:
    """Bitwise equality of grids, masks and values (NaN equal to NaN)."""
    return (a.grid == b.grid and a.frame == b.frame
            and np.array_equal(a.valid, b.valid)
            and all(np.array_equal(x, y, equal_nan=True)
                    for x, y in ((a.u, b.u), (a.v, b.v), (a.zncc, b.zncc))))


def read_fields(paths: Sequence) -> list[DisplacementField]:
    """Read DICF or CSV field files, dispatching on the suffix."""
    out = []
    for p in paths:
        p = Path(p)
        if p.suffix.lower() == ".dicf":
            out.append(read_field_dicf(p))
        else:
            out.extend(read_field_csv(p))
    return out


def write_overlay_png(image, edges: CrackEdges, scale: float, path, radius: int = 1) -> None:
    """Deformed frame in gray with the frame's edge points drawn in red."""
    from PIL import Image, ImageDraw

    gray = np.rint(np.asarray(image.data) * 255).astype(np.uint8)
    im = Image.fromarray(gray).convert("RGB")
    draw = ImageDraw.Draw(im)
    for pts in (edges.left_def, edges.right_def):
        for x, y in np.asarray(pts) / scale:
            if np.isfinite(x) and np.isfinite(y):
                draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=(255, 0, 0))
    im.save(Path(path))
