"""Command-line interface wiring the modules into reproducible pipelines.

Commands: ``synth`` (generate a synthetic rainy sequence with ground truth),
``pseudo`` (masked median stacking), ``fuse`` (dynamic stacking filter over
aligned frames), ``gradcheck`` (finite-difference validation of the
analytic gradients), ``forward`` (run the model forward pass), and
``metrics`` (PSNR/SSIM between two frame directories).

Configuration comes from an optional JSON file (``--config``) whose keys
match the flag names; explicit flags win over the file. Every command
accepts ``--seed``, ``--threads``, and ``--out``, writes its outputs
atomically, and drops a ``report.json`` with the keys ``command``,
``config``, ``metrics``, and ``timings``.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from ._accel import set_num_threads
from .dsf import DsfParams, dsf_grad, dsf_map, dsf_scalar
from .flow_warp import backward_warp
from .frame_io import (
    _atomic_write,
    compute_psnr,
    compute_ssim,
    load_frame_dir,
    load_image,
    read_flow,
    save_frame_dir,
    save_image,
    write_flow,
)
from .model import ModelConfig, bilinear_resize, init_params, vdmamba_forward
from .params_io import load_model_params, save_model_params
from .rain_synth import RainConfig, make_rainy_sequence
from .smooth_stats import soft_max, soft_median, soft_min, soft_stat_grad
from .stacking import StackingConfig, generate_pseudo_labels, render_mask_overlay

GRADCHECK_TOLERANCE = 1e-4


# ---------------------------------------------------------------------------
# shared plumbing

def _merged_config(args, defaults: dict) -> dict:
    """Layer the effective config: defaults < JSON file < explicit flags."""
    cfg = dict(defaults)
    if args.config is not None:
        with open(args.config) as f:
            loaded = json.load(f)
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(loaded) - set(defaults))
        if unknown:
            raise ValueError(f"unknown config keys in {args.config}: {unknown}")
        cfg.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _require(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ValueError(f"missing required settings: {missing}")


def _write_report(out_dir, command, cfg, metrics, timings) -> dict:
    report = {
        "command": command,
        "config": cfg,
        "metrics": metrics,
        "timings": {k: round(v, 6) for k, v in timings.items()},
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    _atomic_write(path, lambda tmp: _dump_json(tmp, report))
    return report


def _dump_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


class _Timer:
    def __init__(self):
        self.timings = {}
        self._t0 = time.perf_counter()

    def lap(self, name: str):
        t = time.perf_counter()
        self.timings[name] = t - self._t0
        self._t0 = t


def _flow_name(n: int, center: int) -> str:
    return f"flow_{n:03d}_to_{center:03d}.flo"


def _load_flows(flows_dir, n_frames: int, center: int):
    flows = []
    for n in range(n_frames):
        if n == center:
            continue
        path = os.path.join(flows_dir, _flow_name(n, center))
        if not os.path.isfile(path):
            raise ValueError(f"missing flow file: {path}")
        flows.append(read_flow(path))
    return flows


def _resolve_center(cfg_center, n_frames: int) -> int:
    center = n_frames // 2 if cfg_center is None else int(cfg_center)
    if not 0 <= center < n_frames:
        raise ValueError(f"center out of range: {center} for {n_frames} frames")
    return center


def _procedural_base(h: int, w: int, seed: int) -> np.ndarray:
    """Smooth random texture used when no base image is supplied."""
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.1, 0.9, (max(2, h // 8), max(2, w // 8), 3))
    return np.clip(bilinear_resize(coarse, (h, w)), 0.0, 1.0)


# ---------------------------------------------------------------------------
# commands

_SYNTH_DEFAULTS = {
    "out": "synth_out", "seed": 0, "threads": None, "base": None,
    "height": 256, "width": 256, "frames": 7,
    "motion_x": 1.0, "motion_y": 0.0,
    "density": 0.02, "streak_length": 12.0, "angle": 10.0, "intensity": 0.4,
}


def cmd_synth(args) -> int:
    cfg = _merged_config(args, _SYNTH_DEFAULTS)
    timer = _Timer()
    base = (load_image(cfg["base"]) if cfg["base"]
            else _procedural_base(int(cfg["height"]), int(cfg["width"]),
                                  int(cfg["seed"])))
    rain_cfg = RainConfig(density=float(cfg["density"]),
                          streak_length=float(cfg["streak_length"]),
                          angle=float(cfg["angle"]),
                          intensity=float(cfg["intensity"]),
                          seed=int(cfg["seed"]))
    rainy, clean, flows = make_rainy_sequence(
        base, int(cfg["frames"]), (cfg["motion_x"], cfg["motion_y"]), rain_cfg)
    timer.lap("generate")
    out = cfg["out"]
    save_frame_dir(os.path.join(out, "rainy"), rainy.frames)
    save_frame_dir(os.path.join(out, "clean"), clean.frames)
    flow_dir = os.path.join(out, "flows")
    os.makedirs(flow_dir, exist_ok=True)
    center = rainy.center_index
    k = 0
    for n in range(len(rainy)):
        if n == center:
            continue
        write_flow(flows[k], os.path.join(flow_dir, _flow_name(n, center)))
        k += 1
    timer.lap("write")
    metrics = {"frames": len(rainy), "flows": len(flows), "center": center}
    _write_report(out, "synth", cfg, metrics, timer.timings)
    print(f"synth: wrote {len(rainy)} rainy/clean frames and "
          f"{len(flows)} flows to {out}")
    return 0


_PSEUDO_DEFAULTS = {
    "out": "pseudo_out", "seed": 0, "threads": None,
    "frames_dir": None, "flows_dir": None, "clean_dir": None, "center": None,
    "theta": 0.8, "delta": 0.1, "patches": 8,
}


def cmd_pseudo(args) -> int:
    cfg = _merged_config(args, _PSEUDO_DEFAULTS)
    _require(cfg, "frames_dir", "flows_dir")
    timer = _Timer()
    seq = load_frame_dir(cfg["frames_dir"], 0)
    center = _resolve_center(cfg["center"], len(seq))
    seq = load_frame_dir(cfg["frames_dir"], center)
    flows = _load_flows(cfg["flows_dir"], len(seq), center)
    timer.lap("load")
    stack_cfg = StackingConfig(P=int(cfg["patches"]), theta=float(cfg["theta"]),
                               delta=float(cfg["delta"]))
    median, mask = generate_pseudo_labels(seq, flows, stack_cfg)
    timer.lap("stack")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    save_image(os.path.join(out, "median.png"), median)
    grid = "\n".join(" ".join(str(int(v)) for v in row) for row in mask.accept)
    _atomic_write(os.path.join(out, "mask.txt"),
                  lambda tmp: _write_text(tmp, grid + "\n"))
    save_image(os.path.join(out, "mask_overlay.png"),
               render_mask_overlay(mask, seq.center))
    metrics = {"acceptance_fraction": mask.acceptance_fraction,
               "frames": len(seq), "center": center}
    if cfg["clean_dir"]:
        clean = load_frame_dir(cfg["clean_dir"], center)
        before = compute_psnr(seq.center, clean.center)
        after = compute_psnr(median, clean.center)
        metrics.update(psnr_before=before, psnr_after=after,
                       psnr_gain=after - before)
    timer.lap("write")
    _write_report(out, "pseudo", cfg, metrics, timer.timings)
    gain = (f", PSNR gain {metrics['psnr_gain']:.2f} dB"
            if "psnr_gain" in metrics else "")
    print(f"pseudo: acceptance fraction "
          f"{metrics['acceptance_fraction']:.3f}{gain} -> {out}")
    return 0


def _write_text(path, text):
    with open(path, "w") as f:
        f.write(text)


_FUSE_DEFAULTS = {
    "out": "fuse_out", "seed": 0, "threads": None,
    "frames_dir": None, "flows_dir": None, "clean_dir": None, "center": None,
    "a": 500.0, "b": 1.0,
}


def cmd_fuse(args) -> int:
    cfg = _merged_config(args, _FUSE_DEFAULTS)
    _require(cfg, "frames_dir", "flows_dir")
    timer = _Timer()
    seq = load_frame_dir(cfg["frames_dir"], 0)
    center = _resolve_center(cfg["center"], len(seq))
    seq = load_frame_dir(cfg["frames_dir"], center)
    flows = _load_flows(cfg["flows_dir"], len(seq), center)
    timer.lap("load")
    candidates = [seq.center]
    k = 0
    for n, frame in enumerate(seq.frames):
        if n == center:
            continue
        candidates.append(backward_warp(frame, flows[k]).image)
        k += 1
    stack = np.stack(candidates)
    params = DsfParams.constant(float(cfg["a"]), float(cfg["b"]),
                                seq.height, seq.width)
    fused = np.clip(dsf_map(stack, params), 0.0, 1.0)
    timer.lap("fuse")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    save_image(os.path.join(out, "fused.png"), fused)
    metrics = {"frames": len(seq), "a": float(cfg["a"]), "b": float(cfg["b"])}
    if cfg["clean_dir"]:
        clean = load_frame_dir(cfg["clean_dir"], center)
        metrics["psnr_fused"] = compute_psnr(fused, clean.center)
        metrics["psnr_rainy"] = compute_psnr(seq.center, clean.center)
    timer.lap("write")
    _write_report(out, "fuse", cfg, metrics, timer.timings)
    print(f"fuse: a={cfg['a']} b={cfg['b']} -> {os.path.join(out, 'fused.png')}")
    return 0


_GRADCHECK_DEFAULTS = {
    "out": None, "seed": 0, "threads": None,
    "trials": 200, "sharp_max": 20.0, "tolerance": GRADCHECK_TOLERANCE,
}


def _central_fd(fn, theta, h=1e-5):
    g = np.empty_like(theta)
    for i in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += h
        lo[i] -= h
        g[i] = (fn(hi) - fn(lo)) / (2.0 * h)
    return g


def run_gradcheck(trials: int, seed: int, sharp_max: float = 20.0) -> dict:
    """Norm-wise relative error between analytic and central-FD gradients.

    Returns the worst relative error per kind over ``trials`` random
    candidate sets each for soft min/max/median and the DSF. The
    differenced forward is the ``smooth_abs=True`` composite where one
    exists, matching what the analytic formulas differentiate.
    """
    if trials < 1:
        raise ValueError("no trials: gradcheck needs at least one trial")
    rng = np.random.default_rng(seed)
    worst = {}
    for kind in ("min", "max", "median", "dsf"):
        err = 0.0
        for _ in range(trials):
            n = int(rng.integers(3, 10))
            x = rng.uniform(0.0, 1.0, n)
            a = float(rng.uniform(-sharp_max, sharp_max))
            if kind == "dsf":
                b = float(rng.uniform(-1.0, 1.5))
                dx, da, db = dsf_grad(x, a, b)
                analytic = np.concatenate([dx, [da, db]])
                theta = np.concatenate([x, [a, b]])

                def fn(t, n=n):
                    return dsf_scalar(t[:n], t[n], t[n + 1], smooth_abs=True)
            else:
                dx, da = soft_stat_grad(kind, x, a)
                analytic = np.concatenate([dx, [da]])
                theta = np.concatenate([x, [a]])
                fwd = {"min": soft_min, "max": soft_max}.get(kind)
                if fwd is None:
                    def fn(t, n=n):
                        return soft_median(t[:n], t[n], smooth_abs=True)
                else:
                    def fn(t, n=n, fwd=fwd):
                        return fwd(t[:n], t[n])
            fd = _central_fd(fn, theta)
            num = float(np.linalg.norm(fd - analytic))
            den = max(float(np.linalg.norm(fd)),
                      float(np.linalg.norm(analytic)), 1e-12)
            err = max(err, num / den)
        worst[kind] = err
    return worst


def cmd_gradcheck(args) -> int:
    cfg = _merged_config(args, _GRADCHECK_DEFAULTS)
    timer = _Timer()
    worst = run_gradcheck(int(cfg["trials"]), int(cfg["seed"]),
                          float(cfg["sharp_max"]))
    timer.lap("gradcheck")
    tol = float(cfg["tolerance"])
    ok = all(v < tol for v in worst.values())
    for kind, v in worst.items():
        status = "ok" if v < tol else "FAIL"
        print(f"gradcheck {kind:>6}: max rel error {v:.3e}  [{status}]")
    metrics = {f"max_rel_error_{k}": v for k, v in worst.items()}
    metrics["passed"] = ok
    if cfg["out"]:
        _write_report(cfg["out"], "gradcheck", cfg, metrics, timer.timings)
    return 0 if ok else 1


_FORWARD_DEFAULTS = {
    "out": "forward_out", "seed": 0, "threads": None,
    "frames_dir": None, "flows_dir": None, "center": None,
    "mode": "derain", "params": None, "dump_params": None,
    "levels": 2, "channels": 8, "state_dim": 4,
}


def cmd_forward(args) -> int:
    cfg = _merged_config(args, _FORWARD_DEFAULTS)
    _require(cfg, "frames_dir", "flows_dir")
    timer = _Timer()
    seq = load_frame_dir(cfg["frames_dir"], 0)
    center = _resolve_center(cfg["center"], len(seq))
    seq = load_frame_dir(cfg["frames_dir"], center)
    flows = _load_flows(cfg["flows_dir"], len(seq), center)
    if cfg["params"]:
        params = load_model_params(cfg["params"])
        if params.config.n_frames != len(seq):
            raise ValueError(
                f"parameter dump expects {params.config.n_frames} frames, "
                f"sequence has {len(seq)}"
            )
    else:
        model_cfg = ModelConfig(n_frames=len(seq), levels=int(cfg["levels"]),
                                channels=int(cfg["channels"]),
                                state_dim=int(cfg["state_dim"]))
        params = init_params(model_cfg, int(cfg["seed"]))
    timer.lap("load")
    result = vdmamba_forward(seq, flows, params, cfg["mode"])
    timer.lap("forward")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    if cfg["mode"] == "derain":
        save_image(os.path.join(out, "derained.png"), result)
        metrics = {"mode": "derain",
                   "shape": list(result.shape),
                   "finite": bool(np.all(np.isfinite(result))),
                   "min": float(result.min()), "max": float(result.max())}
        print(f"forward: derained {result.shape[0]}x{result.shape[1]} "
              f"image -> {out}")
    else:
        k = 0
        for n in range(len(seq)):
            if n == center:
                continue
            write_flow(result[k], os.path.join(out, _flow_name(n, center)))
            k += 1
        finite = all(np.all(np.isfinite(f.u)) and np.all(np.isfinite(f.v))
                     for f in result)
        metrics = {"mode": "flow", "flows": len(result), "finite": bool(finite)}
        print(f"forward: {len(result)} flow fields -> {out}")
    if cfg["dump_params"]:
        save_model_params(cfg["dump_params"], params)
    timer.lap("write")
    _write_report(out, "forward", cfg, metrics, timer.timings)
    return 0


_METRICS_DEFAULTS = {
    "out": "metrics_out", "seed": 0, "threads": None,
    "dir_a": None, "dir_b": None,
}


def cmd_metrics(args) -> int:
    cfg = _merged_config(args, _METRICS_DEFAULTS)
    _require(cfg, "dir_a", "dir_b")
    timer = _Timer()
    seq_a = load_frame_dir(cfg["dir_a"], 0)
    seq_b = load_frame_dir(cfg["dir_b"], 0)
    if len(seq_a) != len(seq_b):
        raise ValueError(
            f"frame count mismatch: {len(seq_a)} in {cfg['dir_a']} vs "
            f"{len(seq_b)} in {cfg['dir_b']}"
        )
    per_frame = []
    for i, (fa, fb) in enumerate(zip(seq_a.frames, seq_b.frames)):
        psnr = compute_psnr(fa, fb)
        ssim = compute_ssim(fa, fb)
        per_frame.append({"frame": i, "psnr": psnr, "ssim": ssim})
        print(f"frame_{i:03d}: psnr={psnr:.4f} ssim={ssim:.6f}")
    timer.lap("metrics")
    metrics = {
        "frames": per_frame,
        "mean_psnr": float(np.mean([m["psnr"] for m in per_frame])),
        "mean_ssim": float(np.mean([m["ssim"] for m in per_frame])),
    }
    print(f"mean: psnr={metrics['mean_psnr']:.4f} "
          f"ssim={metrics['mean_ssim']:.6f}")
    _write_report(cfg["out"], "metrics", cfg, metrics, timer.timings)
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(sub):
    sub.add_argument("--config", help="JSON config file; flags override it")
    sub.add_argument("--seed", type=int, help="base RNG seed")
    sub.add_argument("--threads", type=int, help="worker threads for kernels")
    sub.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rainstack",
        description="Differentiable stacking filters and pseudo-label "
                    "pipelines for video deraining.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic rainy sequence")
    _add_common(p)
    p.add_argument("--base", help="base clean image (default: procedural)")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--motion-x", type=float, dest="motion_x")
    p.add_argument("--motion-y", type=float, dest="motion_y")
    p.add_argument("--density", type=float)
    p.add_argument("--streak-length", type=float, dest="streak_length")
    p.add_argument("--angle", type=float)
    p.add_argument("--intensity", type=float)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("pseudo", help="masked median stacking")
    _add_common(p)
    p.add_argument("--frames-dir", dest="frames_dir")
    p.add_argument("--flows-dir", dest="flows_dir")
    p.add_argument("--clean-dir", dest="clean_dir")
    p.add_argument("--center", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--patches", type=int)
    p.set_defaults(func=cmd_pseudo)

    p = subs.add_parser("fuse", help="dynamic stacking filter over aligned frames")
    _add_common(p)
    p.add_argument("--frames-dir", dest="frames_dir")
    p.add_argument("--flows-dir", dest="flows_dir")
    p.add_argument("--clean-dir", dest="clean_dir")
    p.add_argument("--center", type=int)
    p.add_argument("-a", "--a", type=float, dest="a", help="sharpness")
    p.add_argument("-b", "--b", type=float, dest="b", help="deviation gate")
    p.set_defaults(func=cmd_fuse)

    p = subs.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--sharp-max", type=float, dest="sharp_max")
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("forward", help="run the model forward pass")
    _add_common(p)
    p.add_argument("--frames-dir", dest="frames_dir")
    p.add_argument("--flows-dir", dest="flows_dir")
    p.add_argument("--center", type=int)
    p.add_argument("--mode", choices=("derain", "flow"))
    p.add_argument("--params", help="VDMF parameter dump to load")
    p.add_argument("--dump-params", dest="dump_params",
                   help="write the used parameters to this VDMF file")
    p.add_argument("--levels", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--state-dim", type=int, dest="state_dim")
    p.set_defaults(func=cmd_forward)

    p = subs.add_parser("metrics", help="PSNR/SSIM between two frame dirs")
    _add_common(p)
    p.add_argument("--dir-a", dest="dir_a")
    p.add_argument("--dir-b", dest="dir_b")
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        set_num_threads(args.threads)
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
