"""Run configuration: INI file loading, overrides, frame ordering and timestamps."""

from __future__ import annotations

import configparser
import dataclasses
import glob
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .rgdic import COMPOSITIONS, UPDATE_MODES, AnalysisConfig
from . import validation as V

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")

# (section, key, attribute, kind, help). ``kind`` drives parsing.
KEYS = (
    ("paths", "reference", "reference", "str", "reference image (frame 0)"),
    ("paths", "frames", "frames", "str",
     "deformed frames: a directory, a glob, or a text file listing one path per line"),
    ("paths", "output", "output", "str", "output directory"),
    ("paths", "fields", "fields", "str",
     "existing field files (directory or glob of .dicf/.csv) for 'crack' to use instead "
     "of correlating"),
    ("roi", "x", "roi_x", "int?", "ROI left edge, pixels; unset for the largest ROI that fits"),
    ("roi", "y", "roi_y", "int?", "ROI top edge, pixels"),
    ("roi", "width", "roi_width", "int?", "ROI width, pixels"),
    ("roi", "height", "roi_height", "int?", "ROI height, pixels"),
    ("analysis", "subset_half_width", "subset_half_width", "int", "M; subsets are (2M+1) px square"),
    ("analysis", "step", "step", "int", "grid spacing, pixels"),
    ("analysis", "seeds", "seeds", "points", "seed pixels as 'x,y; x,y'; unset picks a distinctive point near the ROI centre"),
    ("analysis", "search_radius", "search_radius", "int", "seed integer-search radius, pixels"),
    ("analysis", "order", "order", "int", "shape-function order, 1 or 2"),
    ("analysis", "zncc_threshold", "zncc_threshold", "float", "acceptance threshold on ZNCC"),
    ("analysis", "incremental", "incremental", "bool", "rebase the reference during the run"),
    ("analysis", "update", "update", "str", f"reference-update policy: {', '.join(UPDATE_MODES)}"),
    ("analysis", "update_every", "update_every", "int", "frames between updates ('interval')"),
    ("analysis", "update_frames", "update_frames", "ints", "frames after which to update ('frames')"),
    ("analysis", "trigger_zncc", "trigger_zncc", "float", "update when mean seed ZNCC drops below"),
    ("analysis", "trigger_fail_fraction", "trigger_fail_fraction", "float",
     "update when more than this fraction of points fail"),
    ("analysis", "composition", "composition", "str",
     f"increment chaining: {', '.join(COMPOSITIONS)}"),
    ("physical", "scale", "scale", "float?", "mm per pixel"),
    ("physical", "fps", "fps", "float", "frame rate used for timestamps"),
    ("physical", "timestamps", "timestamps", "floats", "per-frame times in s, overriding fps"),
    ("crack", "enabled", "crack", "bool", "run crack analysis"),
    ("crack", "orientation", "orientation", "str", "crack plane: vertical or horizontal"),
    ("crack", "growth", "growth", "str",
     "negative: crack opens toward +y (+x) and grows toward -y (-x); positive: mirrored"),
    ("crack", "delta_c", "delta_c", "str", "critical CTOD in mm, or 'determine'"),
    ("crack", "pre_peak_frame", "pre_peak_frame", "int?", "frame used to determine delta_c"),
    ("crack", "load_history", "load_history", "str",
     "load-history CSV (time_s, load_kN, displacement_mm) to pick the pre-peak frame"),
    ("crack", "lx_grid", "lx_grid", "floats", "probe offsets across the crack, mm"),
    ("crack", "ly_grid", "ly_grid", "floats", "probe offsets along the crack, mm"),
    ("crack", "profile_rows", "profile_rows", "ints", "grid band 'start, stop' for tip location"),
    ("output", "binary", "binary", "bool", "also write DICF binary fields"),
    ("output", "overlays", "overlays", "bool", "write red crack-edge overlays"),
    ("output", "mig_floor", "mig_floor", "float", "speckle quality floor"),
)


@dataclass(frozen=True)
class RunConfig:
    reference: str = ""
    frames: str = ""
    output: str = "dicrack-out"
    fields: str = ""
    roi_x: int | None = None
    roi_y: int | None = None
    roi_width: int | None = None
    roi_height: int | None = None
    subset_half_width: int = 11
    step: int = 2
    seeds: tuple = ()
    search_radius: int = 50
    order: int = 1
    zncc_threshold: float = 0.7
    incremental: bool = True
    update: str = "trigger"
    update_every: int = 10
    update_frames: tuple = ()
    trigger_zncc: float = 0.8
    trigger_fail_fraction: float = 0.1
    composition: str = "tracked"
    scale: float | None = None
    fps: float = 4.0
    timestamps: tuple = ()
    crack: bool = False
    orientation: str = "vertical"
    growth: str = "negative"
    delta_c: str = "determine"
    pre_peak_frame: int | None = None
    load_history: str = ""
    lx_grid: tuple = (0.04, 0.06, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20)
    ly_grid: tuple = (0.02, 0.04, 0.06, 0.08, 0.10, 0.12)
    profile_rows: tuple = ()
    binary: bool = True
    overlays: bool = True
    mig_floor: float = 20.0

    def __post_init__(self):
        V.check_int(self.subset_half_width, "analysis.subset_half_width", 3)
        V.check_int(self.step, "analysis.step", 1)
        V.check_int(self.search_radius, "analysis.search_radius", 1)
        V.check_choice(self.order, "analysis.order", (1, 2))
        V.check_choice(self.update, "analysis.update", UPDATE_MODES)
        V.check_choice(self.composition, "analysis.composition", COMPOSITIONS)
        V.check_int(self.update_every, "analysis.update_every", 1)
        V.check_positive(self.fps, "physical.fps")
        if self.scale is not None:
            V.check_positive(self.scale, "physical.scale")
        V.check_orientation(self.orientation)
        V.check_growth(self.growth)
        if self.delta_c != "determine":
            V.check_positive(self.delta_c, "crack.delta_c")
        roi = (self.roi_x, self.roi_y, self.roi_width, self.roi_height)
        if any(v is None for v in roi) and any(v is not None for v in roi):
            raise ConfigError("roi: give all of x, y, width, height or none of them")
        if self.profile_rows and len(self.profile_rows) != 2:
            raise ConfigError("crack.profile_rows must be 'start, stop'")

    def analysis_config(self) -> AnalysisConfig:
        return AnalysisConfig(subset_half_width=self.subset_half_width, order=self.order,
                              zncc_threshold=self.zncc_threshold,
                              search_radius=self.search_radius, update=self.update,
                              update_every=self.update_every,
                              update_frames=self.update_frames,
                              trigger_zncc=self.trigger_zncc,
                              trigger_fail_fraction=self.trigger_fail_fraction,
                              composition=self.composition)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in dataclasses.asdict(self).items()}


_ATTR = {(s, k): (a, kind) for s, k, a, kind, _ in KEYS}
_BY_ATTR = {a: (s, k, kind) for s, k, a, kind, _ in KEYS}


def _convert(raw: str, kind: str, where: str):
    raw = raw.strip()
    try:
        if kind.endswith("?"):
            if raw == "" or raw.lower() == "none":
                return None
            kind = kind[:-1]
        if kind == "str":
            return raw
        if kind == "int":
            return V.check_int(raw, where)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        items = [t for t in re.split(r"[,\s]+", raw) if t]
        if kind == "floats":
            return tuple(float(t) for t in items)
        if kind == "ints":
            return tuple(V.check_int(t, where) for t in items)
        if kind == "points":
            pts = []
            for chunk in raw.split(";"):
                if chunk.strip():
                    x, y = (float(t) for t in chunk.split(","))
                    pts.append((x, y))
            return tuple(pts)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise AssertionError(kind)


def _format(value, kind: str) -> str:
    if value is None:
        return ""
    if kind == "points":
        return "; ".join(f"{x!r}, {y!r}" for x, y in value)
    if kind in ("floats", "ints"):
        return ", ".join(repr(v) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("float", "float?"):
        return repr(float(value))
    return str(value)


def parse_overrides(pairs) -> dict:
    """``["section.key=value", ...]`` into RunConfig keyword changes."""
    out = {}
    for item in pairs or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        name, raw = item.split("=", 1)
        section, key = name.strip().split(".", 1)
        if (section, key) not in _ATTR:
            raise ConfigError(f"unknown config key {section}.{key}")
        attr, kind = _ATTR[(section, key)]
        out[attr] = _convert(raw, kind, f"{section}.{key}")
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read an INI config (or the ``config`` block of a run manifest).

    Relative paths in ``[paths]`` resolve against the config file's folder.
    ``overrides`` (already-typed keyword values) win over the file.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(path.read_text())
            cfg = doc["config"]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from None
        for attr, v in cfg.items():
            if attr not in _BY_ATTR:
                raise ConfigError(f"{path}: unknown config key {attr!r}")
            kind = _BY_ATTR[attr][2]
            if kind == "points":
                v = tuple(tuple(p) for p in v)
            elif isinstance(v, list):
                v = tuple(v)
            values[attr] = v
    else:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                if (section, key) not in _ATTR:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                attr, kind = _ATTR[(section, key)]
                values[attr] = _convert(raw, kind, f"{section}.{key}")
        base = path.parent
        for attr in ("reference", "frames", "output", "fields", "load_history"):
            v = values.get(attr)
            if v and not Path(v).is_absolute():
                values[attr] = str(base / v)
    values.update(overrides or {})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    """INI text that :func:`load_config` reads back into ``cfg``."""
    cp = configparser.ConfigParser(interpolation=None)
    for s, k, attr, kind, _ in KEYS:
        if not cp.has_section(s):
            cp.add_section(s)
        cp.set(s, k, _format(getattr(cfg, attr), kind))
    from io import StringIO
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_help() -> str:
    lines = ["config keys (INI sections):"]
    for s, k, attr, _, text in KEYS:
        default = getattr(RunConfig, attr, None)
        lines.append(f"  [{s}] {k}: {text} (default {default!r})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# frames and time


def _digit_runs(name: str) -> list[str]:
    return re.findall(r"\d+", name)


def order_frames(paths) -> list[Path]:
    """Sort frame files lexicographically by name, rejecting ambiguity.

    Names must be zero-padded: if lexicographic and numeric order disagree,
    or two files share a name stem, the order cannot be trusted.
    """
    paths = [Path(p) for p in paths]
    stems = [p.stem for p in paths]
    dup = {s for s in stems if stems.count(s) > 1}
    if dup:
        raise ConfigError(f"ambiguous frame order: duplicate frame names {sorted(dup)}")
    lex = sorted(paths, key=lambda p: p.name)

    def numeric(p):
        return [int(d) for d in _digit_runs(p.stem)]

    widths = {tuple(len(d) for d in _digit_runs(p.stem)) for p in paths}
    if len(widths) > 1 and lex != sorted(paths, key=lambda p: (numeric(p), p.name)):
        raise ConfigError("ambiguous frame order: frame numbers are not zero-padded "
                          f"({', '.join(p.name for p in lex[:4])}, ...); "
                          "rename them or list frames in a manifest file")
    return lex


def resolve_frames(spec: str, reference: str = "") -> list[Path]:
    """Frame files from a directory, glob or manifest list, in sequence order.

    A manifest (any non-image file) lists one path per line in the intended
    order and is taken as is; blank lines and ``#`` comments are ignored.
    The reference image is dropped from the list if it appears there.
    """
    if not spec:
        raise ConfigError("paths.frames is not set")
    p = Path(spec)
    if p.is_dir():
        found = order_frames(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
    elif p.is_file() and p.suffix.lower() not in IMAGE_SUFFIXES:
        found = []
        for line in p.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                q = Path(line)
                found.append(q if q.is_absolute() else p.parent / q)
        missing = [str(q) for q in found if not q.is_file()]
        if missing:
            raise ConfigError(f"frame manifest {p} lists missing files: {missing[:3]}")
    else:
        found = order_frames(Path(q) for q in glob.glob(spec))
    if reference:
        ref = Path(reference).resolve()
        found = [q for q in found if q.resolve() != ref]
    if not found:
        raise ConfigError(f"no frames found for {spec!r}")
    return found


def frame_timestamps(cfg: RunConfig, n: int) -> np.ndarray:
    """Times of frames ``0..n-1`` (reference first), from config or fps."""
    if cfg.timestamps:
        return V.check_timestamps(cfg.timestamps, n)
    return np.arange(n, dtype=np.float64) / cfg.fps


def resolve_field_files(spec: str) -> list[Path]:
    """Field files from a directory (DICF preferred over CSV) or a glob."""
    p = Path(spec)
    if p.is_dir():
        found = [q for q in p.iterdir() if q.suffix.lower() == ".dicf"]
        if not found:
            found = [q for q in p.iterdir() if q.suffix.lower() == ".csv"]
    else:
        found = [Path(q) for q in glob.glob(spec)]
    if not found:
        raise ConfigError(f"no field files found for {spec!r}")
    return order_frames(found)
