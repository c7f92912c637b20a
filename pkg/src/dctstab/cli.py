"""Command-line entry point: ``dctstab {stabilize,flow,metrics,synth}``.

Exit status is 0 on success, 1 when processing fails and 2 for unusable
input or arguments.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .affine import fit_similarity
from .dctbasis import GridSpec, evaluate
from .directflow import estimate_pair
from .metrics import evaluate_videos
from .pathsmooth import ParamSequence
from .pipeline import PipelineConfig, stabilize
from .robustfit import project_robust
from .synth import CameraPath, ForegroundSpec, SceneSpec, generate, make_jitter_path
from .video import to_luma

log = logging.getLogger("dctstab")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

# flag name -> PipelineConfig field
_CONFIG_FLAGS = {
    "crop_limit": float,
    "window_radius": int,
    "cutoff": int,
    "sigma_p": float,
    "grid": int,
    "affine_only": None,
    "seed": int,
    "threads": int,
    "max_side": int,
    "photo_scale": float,
    "flow_scale": float,
}


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise io.InputError(f"not a boolean: {text!r}")


def build_config(args) -> PipelineConfig:
    """Defaults, overridden by ``--config`` file entries, overridden by flags."""
    values = {}
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    if getattr(args, "config", None):
        for key, raw in io.read_config_file(args.config).items():
            if key not in fields:
                raise io.InputError(f"unknown config key {key!r}")
            default = fields[key].default
            try:
                if isinstance(default, bool):
                    values[key] = _parse_bool(raw)
                elif key == "max_side" and raw.lower() in ("none", "0", ""):
                    values[key] = None
                else:
                    values[key] = type(default)(raw) if default is not None else int(raw)
            except ValueError as exc:
                raise io.InputError(f"bad value for {key}: {raw!r}") from exc
    for key in _CONFIG_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    if values.get("max_side") == 0:
        values["max_side"] = None
    try:
        return PipelineConfig(**values)
    except ValueError as exc:
        raise io.InputError(str(exc)) from exc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file overriding defaults (flags win)")
    p.add_argument("--crop-limit", dest="crop_limit", type=float, help="minimum crop ratio kappa (default 0.8)")
    p.add_argument("--window-radius", dest="window_radius", type=int, help="temporal radius W_R (default 16)")
    p.add_argument("--cutoff", type=int, help="DCT cutoff R (default 8)")
    p.add_argument("--sigma-p", dest="sigma_p", type=float, help="bilateral range scale (default 0.1)")
    p.add_argument("--grid", type=int, help="coefficient grid size (default 64)")
    p.add_argument("--max-side", dest="max_side", type=int, help="working resolution cap, 0 for none (default 320)")
    p.add_argument("--photo-scale", dest="photo_scale", type=float, help="robust scale for intensity residuals")
    p.add_argument("--flow-scale", dest="flow_scale", type=float, help="robust scale for flow residuals (px)")
    p.add_argument("--seed", type=int, help="seed recorded with the run")
    p.add_argument("--threads", type=int, help="worker threads for frame-pair estimation")


def _alpha_from_flo(flo_dir, n_pairs: int, frame_shape, config: PipelineConfig) -> ParamSequence:
    paths = sorted(Path(flo_dir).glob("*.flo"))
    if len(paths) != n_pairs:
        raise io.InputError(f"{flo_dir} holds {len(paths)} .flo files, need {n_pairs}")
    h, w = frame_shape
    grid = GridSpec.for_image(h, w, config.grid)
    params = []
    for p in paths:
        flow = io.read_flo(p)
        if flow.shape != (h, w):
            raise io.InputError(f"{p.name} has size {flow.shape}, frames are {(h, w)}")
        theta, _ = project_robust(flow, config.cutoff, grid, config.flow_loss())
        params.append(fit_similarity(evaluate(theta, h, w), config.flow_loss()))
    return ParamSequence.from_params(params)


def cmd_stabilize(args) -> int:
    config = build_config(args)
    if args.affine_only:
        config = dataclasses.replace(config, affine_only=True)
    frames, fmt, names = io.read_frames(args.input)
    if len(frames) < 2:
        raise io.InputError(f"{args.input} holds {len(frames)} frame(s); need at least 2")
    alpha = None
    if args.from_flo:
        alpha = _alpha_from_flo(args.from_flo, len(frames) - 1, frames.shape[1:3], config)
    t0 = time.perf_counter()
    result = stabilize(frames, config, alpha=alpha)
    elapsed = time.perf_counter() - t0
    out = Path(args.output)
    io.write_frames(out, result.frames, fmt, names)
    io.write_path_csv(args.dump_paths or out / "path.csv", result.path_rows())
    if args.dump_coeffs:
        if result.thetas is None:
            log.warning("--dump-coeffs ignored: no residual stage was run")
        else:
            io.write_json(args.dump_coeffs, io.coeffs_to_json(result.thetas))
    io.write_json(out / "config.json", config.to_dict())
    io.write_json(out / "report.json", {
        "frames": len(frames),
        "z": result.stage1.slack.z,
        "slack_scales": list(result.stage1.slack.lambdas),
        "stage1_min_crop_ratio": result.stage1.min_crop,
        "stage1_applied_crop_ratio": result.stage1_crop.ratio,
        "stage2_applied_crop_ratio": result.stage2_crop.ratio if result.stage2_crop else None,
        "crop_ratio": result.crop_ratio,
        "crop_limit": config.crop_limit,
        "probes": [list(p) for p in result.stage1.probes],
    })
    timing = dict(result.timing, total_s=elapsed, per_frame_s=elapsed / len(frames))
    io.write_json(out / "timing.json", timing)
    print(f"stabilized {len(frames)} frames -> {out} (crop ratio {result.crop_ratio:.4f}, z={result.stage1.slack.z:.6f})")
    return EXIT_OK


def cmd_flow(args) -> int:
    config = build_config(args)
    a, _ = io.read_frame(args.frame_a)
    a = to_luma(a)
    h, w = a.shape
    if args.from_flo:
        flow = io.read_flo(args.from_flo)
        if flow.shape != (h, w):
            raise io.InputError(f"{args.from_flo} has size {flow.shape}, frame is {(h, w)}")
        theta, _ = project_robust(flow, config.cutoff, GridSpec.for_image(h, w, config.grid), config.flow_loss())
    else:
        b, _ = io.read_frame(args.frame_b)
        b = to_luma(b)
        if b.shape != a.shape:
            raise io.InputError(f"frame sizes differ: {a.shape} vs {b.shape}")
        theta = estimate_pair(a, b, config.pyramid_spec(), config.photo_loss())
    io.write_flo(args.output, evaluate(theta, h, w))
    coeff_path = args.coeffs or Path(args.output).with_suffix(".json")
    io.write_json(coeff_path, theta.to_dict())
    print(f"wrote {args.output} and {coeff_path}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    config = build_config(args)
    unstable, _, _ = io.read_frames(args.unstable)
    stabilized, _, _ = io.read_frames(args.stabilized)
    if len(unstable) != len(stabilized):
        raise io.InputError(f"videos differ in length: {len(unstable)} vs {len(stabilized)}")
    unstable = np.stack([to_luma(f) for f in unstable])
    stabilized = np.stack([to_luma(f) for f in stabilized])
    report = evaluate_videos(unstable, stabilized, config.pyramid_spec(), config.photo_loss(),
                             crop_ratio=args.crop_ratio)
    io.write_json(args.output, report.to_dict())
    print(" ".join(f"{k}={getattr(report, k):.4f}" for k in
                   ("stability", "isi", "itf_db", "crop_ratio", "distortion", "agmdr")))
    return EXIT_OK


def _floats(text: str, n: int) -> tuple:
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts = parts * n
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"expected 1 or {n} comma-separated numbers")
    return tuple(parts)


def cmd_synth(args) -> int:
    jitter = (0.0,) * 4 if args.zero_jitter else _floats(args.jitter, 4)
    try:
        fg = ForegroundSpec(args.foreground, seed=args.seed + 1) if args.foreground > 0 else None
        scene = SceneSpec(args.height, args.width, args.frames, seed=args.seed, foreground=fg)
    except ValueError as exc:
        raise io.InputError(str(exc)) from exc
    if args.frames < 2:
        path = CameraPath.static(args.frames)
    else:
        path = make_jitter_path(args.frames, args.smooth_freq, jitter, seed=args.seed,
                                smooth_amp=_floats(args.smooth_amp, 4))
    video = generate(scene, path)
    out = Path(args.output)
    io.write_frames(out, video.frames, io.FrameFormat(".png", args.bit_depth))
    sidecar = video.sidecar()
    if video.fg_masks is not None:
        sidecar["foreground_pixels"] = [int(m.sum()) for m in video.fg_masks]
    io.write_json(out / "groundtruth.json", sidecar)
    print(f"wrote {args.frames} frames to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dctstab", description="Global-motion video stabilisation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stabilize", help="stabilise a directory of frames")
    p.add_argument("input")
    p.add_argument("output")
    _add_config_flags(p)
    p.add_argument("--affine-only", dest="affine_only", action="store_true", default=None,
                   help="run only the similarity path-smoothing stage")
    p.add_argument("--from-flo", dest="from_flo", help="directory of consecutive-pair .flo files for stage 1")
    p.add_argument("--dump-paths", dest="dump_paths", help="CSV of measured and smoothed parameters")
    p.add_argument("--dump-coeffs", dest="dump_coeffs", help="JSON of smoothed residual coefficients")
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("flow", help="global flow between two frames")
    p.add_argument("frame_a")
    p.add_argument("frame_b")
    p.add_argument("output", help=".flo output path")
    _add_config_flags(p)
    p.add_argument("--from-flo", dest="from_flo", help="project an external dense .flo instead of aligning")
    p.add_argument("--coeffs", help="coefficient JSON path (default: output with .json suffix)")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("metrics", help="quality measures of a stabilised video")
    p.add_argument("unstable")
    p.add_argument("stabilized")
    p.add_argument("output", help="JSON report path")
    _add_config_flags(p)
    p.add_argument("--crop-ratio", dest="crop_ratio", type=float, help="applied crop ratio, if known")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="render a synthetic shaky video with ground truth")
    p.add_argument("output")
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", default="0.004,0.004,4,4", help="amplitude r,s,tx,ty (or one value)")
    p.add_argument("--zero-jitter", dest="zero_jitter", action="store_true")
    p.add_argument("--smooth-freq", dest="smooth_freq", type=int, default=2)
    p.add_argument("--smooth-amp", dest="smooth_amp", default="0.03,0.03,20,12")
    p.add_argument("--foreground", type=float, default=0.0, help="foreground area fraction in [0, 0.5]")
    p.add_argument("--bit-depth", dest="bit_depth", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except io.InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
