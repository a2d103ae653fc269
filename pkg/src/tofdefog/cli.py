"""Command-line interface: synth, defog, eval, simrange, preprocess.

Exit codes: 0 ok, 2 input error, 3 solver failure, 4 format error.  With
--json, errors go to stderr as one machine-readable JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np
from scipy import ndimage

from .core import CameraModel, DepthImage, PhasorImage, phase_to_depth, wrap_phase
from .forward import MediumParams, synthesize
from .gridfile import GridFormatError, read_grid, write_grid
from .irls import SolverConfig, SolverError
from .pipeline import build_manifest, defog, load_scene, write_manifest
from .recon import ObjectMask, evaluate, report_table_csv
from .simrange import find_range, sweep, write_csv, write_gnuplot_script

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_FORMAT = 4


class InputError(ValueError):
    pass


def _config_dict(cfg: SolverConfig) -> dict:
    return {
        "gamma1": cfg.gamma1,
        "gamma2": cfg.gamma2,
        "gamma3": cfg.gamma3,
        "c_coarse": cfg.c_coarse,
        "c_fine": cfg.c_fine,
        "patch_grid": list(cfg.patch_grid),
        "flip": {
            "flip_row": cfg.flip.flip_row,
            "excluded_bottom_rows": cfg.flip.excluded_bottom_rows,
        },
        "max_outer_iters": cfg.max_outer_iters,
        "convergence_tol": cfg.convergence_tol,
        "linear_solver_tol": cfg.linear_solver_tol,
        "mask_threshold": cfg.mask_threshold,
        "plain_patch_fit": cfg.plain_patch_fit,
        "clamp_nonnegative": cfg.clamp_nonnegative,
    }


def _apply_flip_override(cfg: SolverConfig, flip_row, excluded_rows) -> SolverConfig:
    if flip_row is None and excluded_rows is None:
        return cfg
    doc = _config_dict(cfg)
    doc["flip"] = {
        "flip_row": flip_row if flip_row is not None else cfg.flip.flip_row,
        "excluded_bottom_rows": excluded_rows if excluded_rows is not None
        else cfg.flip.excluded_bottom_rows,
    }
    return SolverConfig.from_json(doc)


def _load_config(profile: str, config_path: str | None, overrides: dict) -> SolverConfig:
    cfg = SolverConfig.profile(profile)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        doc.setdefault("profile", profile)
        cfg = SolverConfig.from_json(doc)
    if overrides:
        doc = _config_dict(cfg)
        doc.update(overrides)
        cfg = SolverConfig.from_json(doc)
    return cfg


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    scene = load_scene(args.scene)
    result = synthesize(scene, noise_sigma=args.noise, noise_seed=args.noise_seed)
    out = args.out
    os.makedirs(out, exist_ok=True)

    paths = {}

    def put(name, values, domain, units=None):
        path = os.path.join(out, name)
        write_grid(path, values, domain, units)
        paths[name] = path

    put("foggy_amplitude.tofgrid", result.foggy.amplitude, "amplitude")
    put("foggy_phase.tofgrid", result.foggy.phase, "phase")
    put("depth_gt.tofgrid", result.clean_depth.depth, "depth")
    put("scattering_amplitude_gt.tofgrid", result.scattering_amplitude.values, "amplitude")
    put("scattering_phase_gt.tofgrid", result.scattering_phase.values, "phase")
    put("mask_gt.tofgrid", result.true_mask.mask.astype(np.float64), "label")
    labels = scene.labels if scene.labels is not None \
        else result.true_mask.mask.astype(np.int64)
    put("labels.tofgrid", np.asarray(labels, dtype=np.float64), "label")

    with open(args.scene, "r", encoding="utf-8") as fh:
        scene_doc = json.load(fh)
    scene_dir = os.path.dirname(os.path.abspath(args.scene))
    inputs = [args.scene] + [
        os.path.join(scene_dir, scene_doc[key])
        for key in ("depth_map", "reflectance_map", "labels_map")
        if key in scene_doc
    ]
    manifest = build_manifest(
        "synth",
        {
            "scene": os.path.abspath(args.scene),
            "noise_sigma": args.noise,
            "noise_seed": args.noise_seed,
        },
        inputs=inputs,
        outputs=sorted(paths.values()),
    )
    write_manifest(manifest, os.path.join(out, "manifest.json"))
    print(f"synthesized scene -> {out}")
    return EXIT_OK


def _defog_setup(args):
    """Resolve inputs and configs, from flags or a replay manifest."""
    if args.from_manifest:
        with open(args.from_manifest, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        cfg_doc = doc["config"]
        amp_path = doc["input_paths"][cfg_doc["amp_input"]]
        phase_path = doc["input_paths"][cfg_doc["phase_input"]]
        amp_cfg = SolverConfig.from_json(cfg_doc["amplitude"])
        phase_cfg = SolverConfig.from_json(cfg_doc["phase"])
        freq = cfg_doc["modulation_frequency_hz"]
        preprocess = cfg_doc.get("preprocess", "none")
        preprocess_sigma = cfg_doc.get("preprocess_sigma", 1.0)
    else:
        if not args.amp or not args.phase:
            raise InputError("either --amp and --phase or --from-manifest is required")
        amp_path, phase_path = args.amp, args.phase
        overrides = {}
        if args.mask_threshold is not None:
            overrides["mask_threshold"] = args.mask_threshold
        if args.max_iters is not None:
            overrides["max_outer_iters"] = args.max_iters
        amp_cfg = _load_config(args.amp_profile, args.amp_config, dict(overrides))
        phase_cfg = _load_config(args.phase_profile, args.phase_config, dict(overrides))
        amp_cfg = _apply_flip_override(amp_cfg, args.flip_row, args.excluded_rows)
        phase_cfg = _apply_flip_override(phase_cfg, args.flip_row, args.excluded_rows)
        freq = args.freq
        preprocess = args.preprocess
        preprocess_sigma = args.preprocess_sigma
    return amp_path, phase_path, amp_cfg, phase_cfg, freq, preprocess, preprocess_sigma


def cmd_defog(args) -> int:
    (amp_path, phase_path, amp_cfg, phase_cfg,
     freq, preprocess, preprocess_sigma) = _defog_setup(args)

    amp_grid = read_grid(amp_path)
    phase_grid = read_grid(phase_path)
    if amp_grid.domain != "amplitude":
        raise InputError(f"{amp_path}: expected an amplitude grid, got {amp_grid.domain}")
    if phase_grid.domain != "phase":
        raise InputError(f"{phase_path}: expected a phase grid, got {phase_grid.domain}")
    if amp_grid.shape != phase_grid.shape:
        raise InputError(
            f"amplitude {amp_grid.shape} and phase {phase_grid.shape} sizes differ"
        )

    amp_values, phase_values = amp_grid.values, phase_grid.values
    if preprocess == "gaussian":
        amp_values = ndimage.gaussian_filter(amp_values, preprocess_sigma)
        phase_values = ndimage.gaussian_filter(phase_values, preprocess_sigma)
    elif preprocess != "none":
        raise InputError(f"unknown preprocess method {preprocess!r}")

    rows, cols = amp_values.shape
    cam = CameraModel(modulation_frequency_hz=freq, rows=rows, cols=cols)
    obs = PhasorImage(amplitude=amp_values, phase=phase_values)

    t0 = time.monotonic()
    result = defog(obs, cam, amp_cfg, phase_cfg, threads=args.threads)
    solve_s = time.monotonic() - t0

    out = args.out
    os.makedirs(out, exist_ok=True)
    paths = {}

    def put(name, values, domain, units=None):
        path = os.path.join(out, name)
        write_grid(path, values, domain, units)
        paths[name] = path

    put("scattering_amplitude.tofgrid", result.scattering_amp.values, "amplitude")
    put("scattering_phase.tofgrid", wrap_phase(result.scattering_phase.values), "phase")
    put("weights_amplitude.tofgrid", result.amp_fine.w.weights, "weight")
    put("weights_phase.tofgrid", result.phase_fine.w.weights, "weight")
    put("mask_fused.tofgrid", result.fused_mask.mask.astype(np.float64), "label")
    put("depth_masked.tofgrid", result.depth.depth, "depth")

    manifest = build_manifest(
        "defog",
        {
            "amplitude": _config_dict(amp_cfg),
            "phase": _config_dict(phase_cfg),
            "modulation_frequency_hz": freq,
            "preprocess": preprocess,
            "preprocess_sigma": preprocess_sigma,
            "amp_input": os.path.basename(amp_path),
            "phase_input": os.path.basename(phase_path),
        },
        inputs=[amp_path, phase_path],
        outputs=sorted(paths.values()),
        solver=result.solver_summary(),
        timings={"solve": solve_s},
    )
    write_manifest(manifest, os.path.join(out, "manifest.json"))
    print(
        f"defogged {os.path.basename(amp_path)} + {os.path.basename(phase_path)} "
        f"-> {out} ({solve_s:.1f} s, mask {result.fused_mask.count()} px)"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    est_depth = read_grid(os.path.join(args.est, "depth_masked.tofgrid"))
    est_mask = read_grid(os.path.join(args.est, "mask_fused.tofgrid"))
    gt_depth = read_grid(os.path.join(args.gt, "depth_gt.tofgrid"))
    gt_mask = read_grid(os.path.join(args.gt, "mask_gt.tofgrid"))
    regions = np.rint(read_grid(args.labels).values).astype(np.int64)

    depth_est = DepthImage(depth=est_depth.values)
    depth_gt = DepthImage(depth=gt_depth.values)
    m_est = ObjectMask(mask=est_mask.values > 0.5)
    m_gt = ObjectMask(mask=gt_mask.values > 0.5)

    reports = []
    foggy_phase_path = os.path.join(args.gt, "foggy_phase.tofgrid")
    if os.path.exists(foggy_phase_path):
        rows, cols = depth_gt.shape
        cam = CameraModel(modulation_frequency_hz=args.freq, rows=rows, cols=cols)
        raw_depth = DepthImage(
            depth=phase_to_depth(read_grid(foggy_phase_path).values, cam)
        )
        raw = evaluate(raw_depth, depth_gt, m_gt, m_gt, regions, label="w/o method")
        raw.mask_iou = float("nan")  # no estimated mask in the raw pipeline
        reports.append(raw)
    reports.append(evaluate(depth_est, depth_gt, m_est, m_gt, regions, label="proposed"))

    out = args.out or args.est
    os.makedirs(out, exist_ok=True)
    json_path = os.path.join(out, "report.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
    csv_path = os.path.join(out, "report.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report_table_csv(reports))
    for r in reports:
        print(f"{r.label}: overall {r.overall_mean:.2f} mm, IoU {r.mask_iou:.3f}")
    print(f"report -> {json_path}, {csv_path}")
    return EXIT_OK


def cmd_simrange(args) -> int:
    cam = CameraModel(modulation_frequency_hz=args.freq)
    medium = MediumParams(beta=args.beta, g=args.g, z0=args.z0,
                          z_saturate=max(args.z0 + 1.0, 1000.0))
    z_grid = None
    if args.z_min is not None or args.z_max is not None or args.z_step is not None:
        z_min = args.z_min if args.z_min is not None else max(10.0, args.z0)
        z_max = args.z_max if args.z_max is not None else 10000.0
        z_step = args.z_step if args.z_step is not None else 10.0
        z_grid = np.arange(z_min, z_max + 0.5 * z_step, z_step)
    sweep_ = sweep(medium, cam, reflectance=args.reflectance, z_grid=z_grid)
    write_csv(sweep_, args.out)
    z_sat, z_bg = find_range(sweep_, sat_tol=args.sat_tol, bg_tol=args.bg_tol)
    if args.gnuplot:
        write_gnuplot_script(args.out, args.gnuplot)
    bg_text = "unbounded" if not np.isfinite(z_bg) else f"{z_bg:.0f} mm"
    print(f"sweep -> {args.out}; z_saturate ~ {z_sat:.0f} mm, z_background ~ {bg_text}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    grid = read_grid(args.input)
    values = grid.values
    if args.method == "gaussian":
        values = ndimage.gaussian_filter(values, args.sigma)
    elif args.method != "none":
        raise InputError(f"unknown method {args.method!r}")
    write_grid(args.out, values, grid.domain, grid.units)
    print(f"preprocess ({args.method}) {args.input} -> {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tofdefog",
        description="Scattering removal and depth recovery for CW-ToF images in fog",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true",
                       help="emit errors as JSON on stderr")

    p = sub.add_parser("synth", help="synthesize a foggy capture from a scene JSON")
    p.add_argument("scene", help="scene JSON document")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise", type=float, default=0.0,
                   help="additive Gaussian sigma on rectangular components")
    p.add_argument("--noise-seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("defog", help="estimate scattering, object mask and depth")
    p.add_argument("--amp", help="amplitude TOFGRID file")
    p.add_argument("--phase", help="phase TOFGRID file")
    p.add_argument("--out", required=True)
    p.add_argument("--freq", type=float, default=16e6,
                   help="modulation frequency in Hz (default Kinect 16 MHz)")
    p.add_argument("--amp-profile", default="amplitude-kinect16")
    p.add_argument("--phase-profile", default="phase-kinect16")
    p.add_argument("--amp-config", help="JSON file overriding the amplitude config")
    p.add_argument("--phase-config", help="JSON file overriding the phase config")
    p.add_argument("--mask-threshold", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--flip-row", type=int, default=None)
    p.add_argument("--excluded-rows", type=int, default=None)
    p.add_argument("--preprocess", choices=["none", "gaussian"], default="none")
    p.add_argument("--preprocess-sigma", type=float, default=1.0)
    p.add_argument("--threads", type=int, default=None,
                   help="overrides TOFDEFOG_THREADS")
    p.add_argument("--from-manifest", help="replay a previous run's manifest")
    common(p)
    p.set_defaults(func=cmd_defog)

    p = sub.add_parser("eval", help="depth error report against ground truth")
    p.add_argument("--est", required=True, help="defog output directory")
    p.add_argument("--gt", required=True, help="synth output directory")
    p.add_argument("--labels", required=True, help="region label TOFGRID file")
    p.add_argument("--out", default=None, help="report directory (default: --est)")
    p.add_argument("--freq", type=float, default=16e6)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simrange", help="measurement-range sweep CSV")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--g", type=float, default=0.9)
    p.add_argument("--freq", type=float, default=16e6)
    p.add_argument("--I", dest="reflectance", type=float, default=1.0)
    p.add_argument("--z0", type=float, default=10.0)
    p.add_argument("--z-min", type=float, default=None)
    p.add_argument("--z-max", type=float, default=None)
    p.add_argument("--z-step", type=float, default=None)
    p.add_argument("--sat-tol", type=float, default=0.01)
    p.add_argument("--bg-tol", type=float, default=0.01)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--gnuplot", help="also write a gnuplot script here")
    common(p)
    p.set_defaults(func=cmd_simrange)

    p = sub.add_parser("preprocess", help="smooth a grid before defogging")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["gaussian", "none"], default="gaussian")
    p.add_argument("--sigma", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_preprocess)

    return parser


def _report_error(exc: Exception, code: int, as_json: bool) -> int:
    if as_json:
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    as_json = getattr(args, "json", False)
    try:
        return args.func(args)
    except GridFormatError as exc:
        return _report_error(exc, EXIT_FORMAT, as_json)
    except SolverError as exc:
        return _report_error(exc, EXIT_SOLVER, as_json)
    except (InputError, ValueError, KeyError, OSError) as exc:
        return _report_error(exc, EXIT_INPUT, as_json)


if __name__ == "__main__":
    sys.exit(main())
