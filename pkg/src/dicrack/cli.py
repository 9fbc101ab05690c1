"""Batch DIC and crack analysis: ``dicrack {mig,synth,analyze,crack}``.

Exit codes: 0 success, 1 speckle quality below the floor (``mig``),
2 configuration or input error, 3 correlation failure, 4 no CTOD plateau.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import fieldio as io
from . import validation as V
from .config import (RunConfig, config_help, dump_config, frame_timestamps, load_config,
                     parse_overrides, resolve_field_files, resolve_frames)
from .crack import SpatialResolutionWarning, analyze_cracks, determine_delta_c, locate_crack_tip, select_pre_peak_frame
from .errors import ConfigError, DICError, FrameFailureError, ImageError, NoPlateauError
from .image import load_image, mean_intensity_gradient, save_image
from .rgdic import RoiGrid, SeedSpec, analyze_sequence
from .synthetic import (MODES, SpeckleSpec, generate_speckle, plot_benchmark_svg,
                        rotation_angles, rotation_series, run_benchmark, write_benchmark_csv)

log = logging.getLogger("dicrack")

EXIT_OK = 0
EXIT_QUALITY = 1
EXIT_CONFIG = 2
EXIT_CORRELATION = 3
EXIT_NO_PLATEAU = 4

STEP_WARNING = "step exceeds 1/6 of subset size"
MANIFEST = "manifest.json"


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# mig


def cmd_mig(args) -> int:
    img = load_image(args.image)
    mig = mean_intensity_gradient(img)
    print(f"{mig:.2f}")
    if mig < args.floor:
        _warn(f"mean intensity gradient {mig:.2f} is below the quality floor {args.floor:g}")
        return EXIT_QUALITY
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.output)
    if args.frames < 1:
        raise ConfigError("--frames must be >= 1")
    spec = SpeckleSpec(width=args.width, height=args.height, n_speckles=args.speckles,
                       radius_mean=args.radius, seed=args.seed, mig_floor=args.mig_floor)
    roi = tuple(args.roi)
    if roi[0] + 2 * args.subset_half_width > args.width or roi[1] + 2 * args.subset_half_width > args.height:
        raise ConfigError(f"ROI {roi[0]}x{roi[1]} plus subsets does not fit a "
                          f"{args.width}x{args.height} image")
    ref = generate_speckle(spec)
    angles = rotation_angles(args.frames, args.alpha_max)
    series = rotation_series(ref, angles)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    if not args.no_frames:
        save_image(ref, out / "frames" / "frame_0000.png")
        for k, img in enumerate(series[0], start=1):
            save_image(img, out / "frames" / f"frame_{k:04d}.png")
    result = run_benchmark(frames=args.frames, alpha_max=args.alpha_max, modes=args.modes,
                           roi_size=roi, half_width=args.subset_half_width, step=args.step,
                           update_every=args.update_every, search_radius=args.search_radius,
                           reference=ref, series=series,
                           progress=lambda m, i: log.info("%s: frame %d", m, i))
    write_benchmark_csv(result, out / "benchmark.csv")
    if args.svg:
        plot_benchmark_svg(result, out / "benchmark.svg")
    _dump_json({"version": __version__, "command": "synth",
                "speckle": vars(spec), "alpha_deg": [float(a) for a in angles],
                "modes": list(args.modes), "roi": list(roi),
                "grid": vars(result.grid),
                "seeds": {m: [list(p) for p in s.points] for m, s in result.seeds.items()},
                "reference_updates": result.reference_updates,
                "mig": mean_intensity_gradient(ref)}, out / MANIFEST)
    for mode in args.modes:
        rows = result.for_mode(mode)
        print(f"{mode}: max MAE_x {max(r.mae_x_px for r in rows):.4g} px, "
              f"max strict MAE_x {max(r.strict_mae_x_px for r in rows):.4g} px, "
              f"max invalid {max(r.invalid_count for r in rows)}/{rows[0].n_points}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _resolved(cfg: RunConfig) -> RunConfig:
    def absolute(p):
        return str(Path(p).resolve()) if p else p
    return cfg.replace(reference=absolute(cfg.reference), output=absolute(cfg.output),
                       fields=cfg.fields if any(c in cfg.fields for c in "*?[")
                       else absolute(cfg.fields),
                       load_history=absolute(cfg.load_history),
                       frames=cfg.frames if any(c in cfg.frames for c in "*?[")
                       else absolute(cfg.frames))


def _setup(cfg: RunConfig):
    """Images, grid and seeds for a run."""
    if not cfg.reference:
        raise ConfigError("paths.reference is not set")
    ref = load_image(cfg.reference, cfg.scale)
    paths = resolve_frames(cfg.frames, cfg.reference)
    frames = [load_image(p, cfg.scale) for p in paths]
    imgs = V.check_frames([ref] + frames)
    M = cfg.subset_half_width
    if cfg.roi_x is None:
        grid = V.default_roi(ref.width, ref.height, M, cfg.step)
    else:
        grid = RoiGrid(cfg.roi_x, cfg.roi_y, cfg.roi_width, cfg.roi_height, cfg.step)
    V.check_roi(grid, ref.width, ref.height, M)
    if cfg.seeds:
        seeds = SeedSpec.from_pixels(grid, V.check_seeds(cfg.seeds, grid), cfg.search_radius)
    else:
        centre = [(grid.x + grid.width / 2, grid.y + grid.height / 2)]
        seeds = SeedSpec.distinctive(grid, ref, centre, cfg.search_radius, M)
    return imgs, [Path(cfg.reference)] + paths, grid, seeds


def _analysis_keys(d: dict) -> dict:
    crack_only = {"crack", "orientation", "growth", "delta_c", "pre_peak_frame",
                  "load_history", "lx_grid", "ly_grid", "profile_rows", "overlays"}
    return {k: v for k, v in d.items() if k not in crack_only}


def run_analysis(cfg: RunConfig):
    """Correlate the sequence and write fields plus the run manifest.

    Returns ``(fields, images, failed_frames)``.
    """
    cfg = _resolved(cfg)
    imgs, paths, grid, seeds = _setup(cfg)
    if cfg.crack and V.step_too_coarse(cfg.step, cfg.subset_half_width):
        _warn(f"{STEP_WARNING} (step {cfg.step} > {2 * cfg.subset_half_width + 1}/6)")
    out = Path(cfg.output)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    seq = analyze_sequence(imgs, grid, seeds, cfg.analysis_config(),
                           incremental=cfg.incremental, raise_on_failure=False,
                           progress=lambda i, f: log.info("frame %d: %d/%d valid", i,
                                                          f.n_valid, f.valid.size))
    times = frame_timestamps(cfg, len(imgs))
    per_frame, failed = [], []
    for f in seq:
        stem = out / "fields" / f"field_{f.frame:04d}"
        io.write_field_csv(f, stem.with_suffix(".csv"))
        if cfg.binary:
            io.write_field_dicf(f, stem.with_suffix(".dicf"))
        if f.n_valid == 0:
            failed.append(f.frame)
            _warn(f"frame {f.frame}: correlation failed (no valid points)")
        per_frame.append({"frame": f.frame, "image": str(paths[f.frame]),
                          "time_s": float(times[f.frame]),
                          "mean_zncc": None if f.n_valid == 0 else f.mean_zncc(),
                          "valid_count": f.n_valid, "invalid_count": f.n_invalid,
                          "reference": f.updated_reference})
    (out / "run_config.ini").write_text(dump_config(cfg))
    _dump_json({"version": __version__, "command": "analyze", "config": cfg.to_dict(),
                "grid": vars(grid), "seeds": [list(p) for p in seeds.points],
                "reference_updates": list(seq.reference_updates),
                "failed_frames": failed, "frames": per_frame}, out / MANIFEST)
    return list(seq), imgs, failed


def cmd_analyze(args) -> int:
    cfg = _config_from_args(args)
    fields, _, failed = run_analysis(cfg)
    print(f"analyzed {len(fields)} frames into {Path(cfg.output) / 'fields'}")
    return EXIT_CORRELATION if failed else EXIT_OK


# ---------------------------------------------------------------------------
# crack


def _load_or_analyze(cfg: RunConfig):
    """Fields for crack analysis plus the frame image paths (None if unknown).

    Uses ``paths.fields`` when set, else reuses the output folder's fields if
    its manifest was made with the same analysis settings, else correlates.
    """
    if cfg.fields:
        fields = io.read_fields(resolve_field_files(cfg.fields))
        paths = None
        if cfg.reference and cfg.frames:
            paths = [Path(cfg.reference)] + resolve_frames(cfg.frames, cfg.reference)
        return fields, paths, []
    out = Path(cfg.output)
    mpath = out / MANIFEST
    if mpath.is_file():
        doc = json.loads(mpath.read_text())
        current = json.loads(json.dumps(cfg.to_dict()))
        if (doc.get("command") == "analyze"
                and _analysis_keys(doc["config"]) == _analysis_keys(current)):
            stems = [out / "fields" / f"field_{p['frame']:04d}" for p in doc["frames"]]
            files = [s.with_suffix(".dicf") for s in stems]
            if not all(p.is_file() for p in files):
                files = [s.with_suffix(".csv") for s in stems]
            if all(p.is_file() for p in files):
                log.info("reusing fields from %s", mpath)
                paths = [Path(cfg.reference)] + [Path(p["image"]) for p in doc["frames"]]
                return io.read_fields(files), paths, doc["failed_frames"]
    fields, _, failed = run_analysis(cfg)
    paths = [Path(cfg.reference)] + resolve_frames(cfg.frames, cfg.reference)
    return fields, paths, failed


def _delta_c(cfg: RunConfig, fields, times, out: Path):
    if cfg.delta_c != "determine":
        return float(cfg.delta_c), None
    if cfg.pre_peak_frame is not None:
        k = cfg.pre_peak_frame
    elif cfg.load_history:
        hist = io.read_load_history(cfg.load_history)
        k = select_pre_peak_frame(hist.time_s, hist.load_kN, times)
    else:
        raise ConfigError("crack.delta_c = determine needs crack.pre_peak_frame "
                          "or crack.load_history")
    by_frame = {f.frame: f for f in fields}
    if k not in by_frame:
        raise ConfigError(f"pre-peak frame {k} has no displacement field "
                          f"(fields cover frames {min(by_frame)}..{max(by_frame)})")
    fld = by_frame[k]
    band = tuple(cfg.profile_rows) or None
    tip = locate_crack_tip(fld, cfg.orientation, band, growth=cfg.growth, scale=cfg.scale)
    if tip is None:
        raise NoPlateauError(f"frame {k}: no crack opening found, cannot determine delta_c")
    try:
        res = determine_delta_c(fld, tip, cfg.lx_grid, cfg.ly_grid, cfg.orientation,
                                cfg.growth, cfg.scale)
    except NoPlateauError as exc:
        _dump_json({"frame": k, "tip_mm": [tip.x, tip.y], "lx_mm": list(cfg.lx_grid),
                    "ly_mm": list(cfg.ly_grid), "ctod_mm": _grid_json(exc.ctod),
                    "plateau": None}, out / "delta_c.json")
        raise
    _dump_json({"frame": k, "tip_mm": [tip.x, tip.y], "delta_c_mm": res.delta_c,
                "lx_mm": list(cfg.lx_grid), "ly_mm": list(cfg.ly_grid),
                "ctod_mm": _grid_json(res.ctod), "plateau_rows": list(res.rows),
                "plateau_cols": list(res.cols), "onset_mm": list(res.onset),
                "covers_grid": res.covers_grid}, out / "delta_c.json")
    return res.delta_c, res


def _grid_json(c):
    if c is None:
        return None
    return [[None if not np.isfinite(x) else float(x) for x in row] for row in np.asarray(c)]


def cmd_crack(args) -> int:
    cfg = _resolved(_config_from_args(args).replace(crack=True))
    fields, paths, failed = _load_or_analyze(cfg)
    fields = [f for f in fields if f.frame not in set(failed)]
    if not fields:
        raise FrameFailureError("no usable displacement fields")
    scale = cfg.scale if cfg.scale is not None else fields[0].scale
    if scale is None:
        raise ConfigError("physical.scale (mm per pixel) is required for crack analysis")
    cfg = cfg.replace(scale=scale)
    fields = [f.with_scale(scale) for f in fields]
    n_frames = len(paths) if paths else max(f.frame for f in fields) + 1
    times_all = frame_timestamps(cfg, n_frames)
    out = Path(cfg.output) / "crack"
    (out / "edges").mkdir(parents=True, exist_ok=True)
    delta_c, res = _delta_c(cfg, fields, times_all, out)
    times = [times_all[f.frame] for f in fields]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SpatialResolutionWarning)
        report = analyze_cracks(fields, delta_c, times, cfg.orientation, cfg.growth, scale, res)
    for w in report.warnings:
        _warn(w)
    io.write_report_csv(report, out / "report.csv")
    for e in report.edges:
        io.write_edges_csv(e, out / "edges" / f"edges_{e.frame:04d}.csv")
    if cfg.overlays and report.detected and paths:
        (out / "overlays").mkdir(exist_ok=True)
        for e in report.edges:
            if not e.empty:
                img = load_image(paths[e.frame])
                io.write_overlay_png(img, e, scale, out / "overlays" / f"overlay_{e.frame:04d}.png")
    summary = {"delta_c_mm": delta_c, "detected": report.detected,
               "first_flagged_frame": report.first_flagged_frame(),
               "mean_speed_mm_s": None if report.track is None else report.mean_speed,
               "located_tips": sum(t is not None for t in report.tips),
               "warnings": report.warnings}
    _dump_json(summary, out / "summary.json")
    print(f"delta_c = {delta_c:.6g} mm")
    if not report.detected:
        print("no crack detected")
    else:
        print(f"crack first flagged at frame {summary['first_flagged_frame']}")
        if report.track is not None:
            print(f"mean propagation speed {report.mean_speed:.6g} mm/s")
    return EXIT_CORRELATION if failed else EXIT_OK


# ---------------------------------------------------------------------------
# plumbing


def _config_from_args(args) -> RunConfig:
    overrides = parse_overrides(args.set)
    for attr in ("reference", "frames", "output", "fields", "step", "subset_half_width", "scale",
                 "fps", "delta_c", "orientation", "pre_peak_frame", "load_history"):
        v = getattr(args, attr, None)
        if v is not None:
            overrides[attr] = v
    if args.config:
        return load_config(args.config, overrides)
    try:
        return RunConfig(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="INI config file or a run manifest.json")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--reference")
    p.add_argument("--frames")
    p.add_argument("--fields", help="existing field files for 'crack'")
    p.add_argument("--output", "-o")
    p.add_argument("--step", type=int)
    p.add_argument("--subset-half-width", type=int)
    p.add_argument("--scale", type=float, help="mm per pixel")
    p.add_argument("--fps", type=float)
    p.add_argument("--delta-c", help="critical CTOD in mm, or 'determine'")
    p.add_argument("--orientation", choices=("vertical", "horizontal"))
    p.add_argument("--pre-peak-frame", type=int)
    p.add_argument("--load-history")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dicrack", description=__doc__.splitlines()[0],
        epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"dicrack {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mig", help="mean intensity gradient of a speckle image")
    p.add_argument("image")
    p.add_argument("--floor", type=float, default=20.0, help="quality floor (default 20)")
    p.set_defaults(func=cmd_mig)

    p = sub.add_parser("synth", help="rotation benchmark on a generated speckle")
    p.add_argument("--output", "-o", default="synth-out")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--alpha-max", type=float, default=15.0, help="final angle, degrees")
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--height", type=int, default=1024)
    p.add_argument("--roi", type=int, nargs=2, default=(640, 824), metavar=("W", "H"))
    p.add_argument("--speckles", type=int, default=8000)
    p.add_argument("--radius", type=float, default=3.0, help="mean speckle radius, px")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mig-floor", type=float, default=20.0)
    p.add_argument("--subset-half-width", type=int, default=11)
    p.add_argument("--step", type=int, default=8)
    p.add_argument("--update-every", type=int, default=10)
    p.add_argument("--search-radius", type=int, default=50)
    p.add_argument("--svg", action="store_true", help="also plot MAE per frame")
    p.add_argument("--no-frames", action="store_true", help="skip writing PNG frames")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="displacement fields for an image sequence")
    _add_run_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("crack", help="critical CTOD, crack edges and propagation speed")
    _add_run_flags(p)
    p.set_defaults(func=cmd_crack)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NoPlateauError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.ctod is not None:
            print("CTOD probe grid (mm):", file=sys.stderr)
            print(np.array2string(np.asarray(exc.ctod), precision=5), file=sys.stderr)
        return EXIT_NO_PLATEAU
    except FrameFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRELATION
    except (ConfigError, ImageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DICError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
