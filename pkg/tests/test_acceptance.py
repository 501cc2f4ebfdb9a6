"""Acceptance gate: the package's primary numerical contracts.

Each test checks one headline criterion at its stated tolerance and runtime
budget and prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers (run pytest with ``-rA`` to see the lines for passing tests).
"""

import json
import os
import time

import numpy as np

import rainstack.cli as cli
from rainstack import (
    FlowField,
    FrameSequence,
    LossWeights,
    ModelConfig,
    RainConfig,
    SsmParams,
    StackingConfig,
    backward_warp,
    compute_psnr,
    dsf_scalar,
    exact_max,
    exact_mean,
    exact_median,
    exact_min,
    flow_transfer_loss,
    generate_pseudo_labels,
    init_params,
    make_rainy_sequence,
    mean_abs_deviation,
    median_mad_oracle,
    selective_scan,
    selective_scan_reference,
    synth_translation_flow,
    total_loss,
    vdmamba_forward,
)
from rainstack.cli import run_gradcheck

from conftest import sample_separated_set, smooth_texture


def _check(name: str, ok: bool, detail: str):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_dsf_limit_suite():
    # 1000 separated candidate sets: the sharp/flat parameter corners of the
    # DSF must reproduce median, min, max (tol 1e-6) and mean (tol 1e-12)
    rng = np.random.default_rng(20240915)
    t0 = time.perf_counter()
    worst = {"median": 0.0, "min": 0.0, "max": 0.0, "mean": 0.0}
    for _ in range(1000):
        x = sample_separated_set(rng)
        b = float(rng.uniform(-1.0, 1.5))
        worst["median"] = max(worst["median"],
                              abs(dsf_scalar(x, 500.0, 1.0) - exact_median(x)))
        worst["min"] = max(worst["min"],
                           abs(dsf_scalar(x, 500.0, 0.0) - exact_min(x)))
        worst["max"] = max(worst["max"],
                           abs(dsf_scalar(x, -500.0, 0.0) - exact_max(x)))
        worst["mean"] = max(worst["mean"],
                            abs(dsf_scalar(x, 0.0, b) - exact_mean(x)))
    elapsed = time.perf_counter() - t0
    ok = (worst["median"] < 1e-6 and worst["min"] < 1e-6
          and worst["max"] < 1e-6 and worst["mean"] < 1e-12
          and elapsed < 5.0)
    _check(
        "dsf-limit-suite",
        ok,
        f"1000 sets, worst errors median {worst['median']:.2e} min "
        f"{worst['min']:.2e} max {worst['max']:.2e} (tol 1e-6), mean "
        f"{worst['mean']:.2e} (tol 1e-12), {elapsed:.2f}s (< 5s)",
    )


def test_median_mad_oracle():
    # 100 odd-N sets: the brute-force minimizer of the mean absolute
    # deviation must land on the median (within 1e-3) with matching
    # objective value (within 1e-9)
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst_arg, worst_val = 0.0, 0.0
    for _ in range(100):
        n = int(rng.choice([3, 5, 7, 9]))
        x = rng.uniform(0.0, 1.0, n)
        med = exact_median(x)
        opt = median_mad_oracle(x)
        worst_arg = max(worst_arg, abs(opt - med))
        worst_val = max(worst_val,
                        abs(mean_abs_deviation(x, opt) - mean_abs_deviation(x, med)))
    elapsed = time.perf_counter() - t0
    ok = worst_arg < 1e-3 and worst_val < 1e-9 and elapsed < 10.0
    _check(
        "median-mad-oracle",
        ok,
        f"100 odd-N sets, worst |argmin - median| {worst_arg:.2e} (tol 1e-3), "
        f"worst objective gap {worst_val:.2e} (tol 1e-9), {elapsed:.2f}s (< 10s)",
    )


def test_gradient_suite():
    # 200 instances per kind, |a| <= 20: analytic gradients vs central
    # finite differences (h = 1e-5), norm-wise relative error < 1e-4
    t0 = time.perf_counter()
    worst = run_gradcheck(trials=200, seed=123, sharp_max=20.0)
    elapsed = time.perf_counter() - t0
    peak = max(worst.values())
    ok = peak < 1e-4 and elapsed < 10.0
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    _check(
        "gradient-suite",
        ok,
        f"200 trials/kind, max rel error {detail} (tol 1e-4), "
        f"{elapsed:.2f}s (< 10s)",
    )


def test_pseudo_label_denoising():
    # 7-frame 256x256 sequence, motion (1,0), rain density 0.02 intensity
    # 0.4; masked median stacking must gain >= 10 dB PSNR with acceptance
    # fraction >= 0.9 at theta=0.8, delta=0.1, P=8
    t0 = time.perf_counter()
    base = smooth_texture(np.random.default_rng(0), 256, 256)
    rainy, clean, flows = make_rainy_sequence(
        base, 7, (1.0, 0.0),
        RainConfig(density=0.02, intensity=0.4, seed=0),
    )
    median, mask = generate_pseudo_labels(
        rainy, flows, StackingConfig(P=8, theta=0.8, delta=0.1))
    before = compute_psnr(rainy.center, clean.center)
    after = compute_psnr(median, clean.center)
    gain = after - before
    elapsed = time.perf_counter() - t0
    ok = gain >= 10.0 and mask.acceptance_fraction >= 0.9 and elapsed < 30.0
    _check(
        "pseudo-label-denoising",
        ok,
        f"PSNR {before:.2f} -> {after:.2f} dB, gain {gain:.2f} (>= 10), "
        f"acceptance {mask.acceptance_fraction:.3f} (>= 0.9), "
        f"{elapsed:.2f}s (< 30s)",
    )


def test_warping_exactness():
    # integer-translation flows must reproduce the index-shift oracle
    # exactly on every validity-1 pixel, over 50 random images
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(50):
        h = int(rng.integers(8, 40))
        w = int(rng.integers(8, 40))
        img = rng.uniform(0.0, 1.0, (h, w, 3))
        dx = int(rng.integers(-5, 6))
        dy = int(rng.integers(-5, 6))
        res = backward_warp(img, synth_translation_flow(dx, dy, h, w))
        ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        sy, sx = ys + dy, xs + dx
        inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
        if not np.array_equal(res.validity.astype(bool), inside):
            _check("warping-exactness", False,
                   f"validity mask mismatch at shift ({dx}, {dy})")
        if not np.array_equal(res.image[inside], img[sy[inside], sx[inside]]):
            _check("warping-exactness", False,
                   f"shifted pixels differ at shift ({dx}, {dy})")
        checked += int(inside.sum())
    _check(
        "warping-exactness",
        True,
        f"50 images, {checked} valid pixels bit-equal to the index-shift oracle",
    )


def test_scan_self_consistency():
    # batched/vectorized selective scan vs the naive sequential loop:
    # max abs difference <= 1e-6 over 100 random instances (L=32, width<=16)
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        width = int(rng.integers(1, 17))
        state = int(rng.integers(1, 5))
        params = SsmParams.random(width, state, rng)
        x = rng.normal(0.0, 1.0, (32, width))
        fast = selective_scan(x, params)
        slow = selective_scan_reference(x, params)
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    ok = worst <= 1e-6
    _check(
        "scan-self-consistency",
        ok,
        f"100 instances (L=32, width<=16), max |vectorized - loop| "
        f"{worst:.2e} (<= 1e-6)",
    )


def test_forward_contract():
    # toy-scale forward: 7 frames at 64x64, levels=2, channels=8 -- finite
    # correctly-shaped derain output, exactly N-1 flow fields, bit-identical
    # across runs at a fixed seed, < 10 s per forward
    rng = np.random.default_rng(5)
    frames = tuple(rng.uniform(0, 1, (64, 64, 3)) for _ in range(7))
    seq = FrameSequence(frames, 3)
    flows = [synth_translation_flow(float(k), 0.0, 64, 64)
             for k in range(-3, 4) if k != 0]
    cfg = ModelConfig(n_frames=7, levels=2, channels=8, state_dim=4)
    params = init_params(cfg, 42)

    t0 = time.perf_counter()
    derained = vdmamba_forward(seq, flows, params, "derain")
    t_derain = time.perf_counter() - t0
    t0 = time.perf_counter()
    flow_out = vdmamba_forward(seq, flows, params, "flow")
    t_flow = time.perf_counter() - t0
    repeat = vdmamba_forward(seq, flows, init_params(cfg, 42), "derain")

    shape_ok = derained.shape == (64, 64, 3)
    finite_ok = bool(np.all(np.isfinite(derained)))
    flows_ok = (len(flow_out) == 6
                and all(isinstance(f, FlowField) for f in flow_out)
                and all((f.height, f.width) == (64, 64) for f in flow_out))
    bitwise_ok = np.array_equal(derained, repeat)
    time_ok = t_derain < 10.0 and t_flow < 10.0
    ok = shape_ok and finite_ok and flows_ok and bitwise_ok and time_ok
    _check(
        "forward-contract",
        ok,
        f"derain shape {derained.shape} finite={finite_ok}, 6 flow fields, "
        f"bit-identical at seed 42: {bitwise_ok}, {t_derain:.2f}s / "
        f"{t_flow:.2f}s per forward (< 10s)",
    )


def test_loss_algebra():
    # the paired/unpaired total-loss switch on random components (tol 1e-12)
    # and the analytic flow-transfer cases, exact
    rng = np.random.default_rng(23)
    weights = LossWeights(lambda1=0.1, lambda2=0.1)
    worst = 0.0
    for _ in range(100):
        l_rec, l_spa, l_tem, l_sta = rng.uniform(0.0, 10.0, 4)
        paired = total_loss(
            "paired", {"l_rec": l_rec, "l_spa": l_spa, "l_tem": l_tem}, weights)
        unpaired = total_loss(
            "unpaired", {"l_sta": l_sta, "l_spa": l_spa, "l_tem": l_tem}, weights)
        worst = max(worst,
                    abs(paired - (l_rec + l_spa + 0.1 * l_tem)),
                    abs(unpaired - (0.1 * l_sta + l_spa + 0.1 * l_tem)))
    same = synth_translation_flow(1.0, 2.0, 4, 4)
    zero_case = flow_transfer_loss([same, same], [same, same])
    pred6 = [synth_translation_flow(1.5, -0.5, 4, 4) for _ in range(6)]
    teach6 = [synth_translation_flow(1.0, 0.0, 4, 4) for _ in range(6)]
    uniform_case = flow_transfer_loss(pred6, teach6)
    single = flow_transfer_loss([synth_translation_flow(1.0, 0.0, 4, 4)],
                                [synth_translation_flow(0.75, 0.0, 4, 4)])
    exact_ok = zero_case == 0.0 and uniform_case == 96.0 and single == 4.0
    ok = worst < 1e-12 and exact_ok
    _check(
        "loss-algebra",
        ok,
        f"switch error {worst:.2e} (tol 1e-12) on 100 component draws; "
        f"flow cases 0/96/4 exact: {exact_ok}",
    )


def test_end_to_end_cli(tmp_path):
    # synth -> pseudo -> metrics on the pseudo-label scale must finish
    # within 60 s and report a PSNR gain >= 10 dB
    t0 = time.perf_counter()
    synth = tmp_path / "synth"
    rc = cli.main([
        "synth", "--out", str(synth), "--height", "256", "--width", "256",
        "--frames", "7", "--motion-x", "1", "--motion-y", "0",
        "--density", "0.02", "--intensity", "0.4", "--seed", "0",
    ])
    assert rc == 0
    pseudo = tmp_path / "pseudo"
    rc = cli.main([
        "pseudo", "--frames-dir", str(synth / "rainy"),
        "--flows-dir", str(synth / "flows"),
        "--clean-dir", str(synth / "clean"),
        "--out", str(pseudo),
    ])
    assert rc == 0
    metrics = tmp_path / "metrics"
    rc = cli.main([
        "metrics", "--dir-a", str(synth / "clean"),
        "--dir-b", str(synth / "rainy"), "--out", str(metrics),
    ])
    assert rc == 0
    elapsed = time.perf_counter() - t0
    with open(pseudo / "report.json") as f:
        gain = json.load(f)["metrics"]["psnr_gain"]
    report_ok = os.path.isfile(metrics / "report.json")
    ok = elapsed < 60.0 and gain >= 10.0 and report_ok
    _check(
        "end-to-end-cli",
        ok,
        f"synth+pseudo+metrics in {elapsed:.2f}s (< 60s), report PSNR gain "
        f"{gain:.2f} dB (>= 10)",
    )
