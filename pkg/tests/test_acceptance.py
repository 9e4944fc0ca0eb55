"""End-to-end acceptance gates, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
Criteria 6 and 7 train networks and take several minutes each.
"""

import time

import numpy as np
import pytest

from scalepool.convnet import build_network, forward, hinge_loss_and_grads, homogeneous_network
from scalepool.harness.figures import reproduce_figure, task1_analytic, task1_trained, task2_analytic
from scalepool.harness.run import constant_mode_dominates, run_experiment
from scalepool.perturb import batch_displace, sample_noise
from scalepool.scaledata import gen_task1, single_pixel
from scalepool.sensitivity import (
    _coords_to_pixels,
    asymptotic_window,
    effective_receptive_field,
    loglog_slope,
    sensitivity_report,
)
from scalepool.spectra import filter_gamma, grid_laplacian_modes
from scalepool.theory import (
    circulant_power,
    diffusion_params,
    gaussian_profile,
    profile_moments,
    walk_diffusion_params,
)


def test_1_oracle_equivalence(report_line):
    t0 = time.perf_counter()
    L, worst = 256, 0.0
    for F in (2, 3, 5):
        for i in (0, 100, 255):
            reps = forward(homogeneous_network(64, F, 1, L), single_pixel(L, i)).reps
            for k, r in enumerate(reps):
                worst = max(worst, float(np.abs(r[0] - circulant_power(L, F, k, i).values).max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 10
    report_line("1 oracle equivalence", ok, f"max abs diff {worst:.2e} (<= 1e-12), {dt:.1f} s (< 10 s)")
    assert ok


def _gaussian_gates(params3, params2):
    L, k = 1024, 64
    i = L // 2
    c = circulant_power(L, 3, k, i).values
    g = gaussian_profile(L, 3, k, i, params3).values
    peak = int(np.argmax(c))
    peak_err = abs(g[peak] - c[peak]) / c[peak]
    mean2, _ = profile_moments(circulant_power(L, 2, k, i))
    drift_pred = i + params2.v * k
    return peak_err, mean2, drift_pred


def test_2_gaussian_asymptotics(report_line):
    t0 = time.perf_counter()
    peak_err, mean2, pred = _gaussian_gates(diffusion_params(3), diffusion_params(2))
    dt = time.perf_counter() - t0
    ok = peak_err <= 0.05 and abs(pred - mean2) <= 0.5 and dt < 10
    report_line(
        "2 Gaussian asymptotics (closed-form coefficients)",
        ok,
        f"F=3 peak rel. error {peak_err:.4f} (<= 0.05); F=2 drift i+v*k = {pred:.2f} "
        f"vs mean {mean2:.2f} (within 0.5 px); {dt:.2f} s",
    )
    assert ok


def test_2_supplement_exact_walk_moments(report_line):
    # same gates with the exact per-step moments of the circulant walk;
    # M^k delta_i drifts by -v per step in the kernel's convention, hence i - v*k
    peak_err, mean2, _ = _gaussian_gates(walk_diffusion_params(3), walk_diffusion_params(2))
    pred = 512 - walk_diffusion_params(2).v * 64
    ok = peak_err <= 0.05 and abs(pred - mean2) <= 0.5
    report_line(
        "2s Gaussian asymptotics (exact walk moments, supplemental)",
        ok,
        f"F=3 peak rel. error {peak_err:.4f}; F=2 predicted mean {pred:.2f} vs {mean2:.2f}",
    )
    assert ok


def test_3_receptive_field_diffusion(report_line):
    A = effective_receptive_field(homogeneous_network(64, 3, 1, 1024))
    fit = loglog_slope(np.arange(65), A, window=range(8, 65))
    ok = abs(fit.slope - 0.5) <= 0.05
    report_line("3 receptive-field diffusion", ok, f"slope {fit.slope:.4f} (0.50 +- 0.05)")
    assert ok


def _slopes(res):
    return res.summary["exponents"]["fitted"]


def test_4_task1_scalings(report_line, tmp_path):
    t0 = time.perf_counter()
    res = run_experiment(task1_analytic("desk").with_out(tmp_path))
    dt = time.perf_counter() - t0
    s = _slopes(res)
    ok = abs(s["D"] + 2) <= 0.2 and abs(s["G"] - 1) <= 0.15 and abs(s["R"] + 3) <= 0.3 and dt < 120
    report_line(
        "4 Task 1 scalings",
        ok,
        f"D {s['D']:.3f} (-2 +- 0.2), G {s['G']:.3f} (+1 +- 0.15), R {s['R']:.3f} (-3 +- 0.3), {dt:.0f} s (< 120 s)",
    )
    assert ok


def test_5_task2_scalings(report_line, tmp_path):
    res = run_experiment(task2_analytic("desk").with_out(tmp_path))
    s = _slopes(res)
    A_exact = np.array_equal(res.report.A, 2.0 ** np.arange(11))
    ok = A_exact and abs(s["D"] + 1) <= 0.15 and abs(s["G"] - 1) <= 0.15 and abs(s["R"] + 2) <= 0.25
    report_line(
        "5 Task 2 scalings",
        ok,
        f"D {s['D']:.3f} (-1 +- 0.15), G {s['G']:.3f} (+1 +- 0.15), R {s['R']:.3f} (-2 +- 0.25), A_k = 2^k: {A_exact}",
    )
    assert ok


def test_6_training_emergence(report_line, tmp_path):
    t0 = time.perf_counter()
    res = run_experiment(task1_trained("desk").with_out(tmp_path))
    dt = time.perf_counter() - t0
    err = res.train_log.final_test_error
    dominates = [constant_mode_dominates(res.spectra, k) for k in (1, 2, 3)]
    full, mc = res.report.D, res.surgery["mean_channel"].D
    half = res.config.model.depth // 2
    ratios = mc[1 : half + 1] / full[1 : half + 1]
    within = bool(np.all((ratios <= 1.5) & (ratios >= 1 / 1.5)))
    ok = err <= 0.05 and all(dominates) and within and dt < 1800
    report_line(
        "6 training emergence",
        ok,
        f"test error {err:.4f} (<= 0.05); constant mode dominates in layers 1-3: {dominates}; "
        f"mean-channel/full D_k, k=1..{half}: {np.round(ratios, 3).tolist()} (within 1.5x); {dt / 60:.1f} min (< 30)",
    )
    assert ok


def test_7_correlation_signs(report_line, tmp_path):
    import json

    reproduce_figure("fig5", tmp_path, scale="desk")
    summary = json.loads((tmp_path / "summary.json").read_text())
    rho = summary["log_correlation"]
    n = summary["n_models"]
    ok = n >= 6 and None not in (rho["D"], rho["G"], rho["R"])
    ok = ok and rho["D"] > 0 and rho["G"] < 0 and rho["R"] >= rho["D"]
    report_line(
        "7 correlation signs",
        ok,
        f"{n} models; rho(e,D) {rho['D']}, rho(e,G) {rho['G']}, rho(e,R) {rho['R']} (D > 0, G < 0, R >= D)",
    )
    assert ok


def test_8_property_suites(report_line, tmp_path):
    checks = {}
    # gradient check
    net = build_network(2, 3, 3, 1, 9, seed=0)
    rng = np.random.default_rng(0)
    for layer in net.layers:
        layer.bias = 0.2 * rng.normal(size=layer.bias.shape)
    net.readout_w *= 5
    x = rng.normal(size=(4, 1, 9))
    y = np.array([1.0, -1, 1, -1])
    _, g = hinge_loss_and_grads(net, x, y, 0.01)
    w = net.layers[0].weight
    num = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        old = w[idx]
        w[idx] = old + 1e-6
        up = hinge_loss_and_grads(net, x, y, 0.01)[0]
        w[idx] = old - 1e-6
        down = hinge_loss_and_grads(net, x, y, 0.01)[0]
        w[idx] = old
        num[idx] = (up - down) / 2e-6
    checks["gradient"] = np.linalg.norm(num - g.weight[0]) / np.linalg.norm(num) < 1e-5
    # translation equivariance
    net = build_network(4, 4, 3, 1, 32, seed=1)
    x = rng.normal(size=32)
    a, b = forward(net, x).reps, forward(net, np.roll(x, 5)).reps
    checks["equivariance"] = max(float(np.abs(np.roll(p, 5, -1) - q).max()) for p, q in zip(a, b)) <= 1e-12
    # homogeneous linearity
    hom = homogeneous_network(20, 3, 1, 64)
    joint = forward(hom, single_pixel(64, 3).pixels + single_pixel(64, 40).pixels).reps
    sep = [p + q for p, q in zip(forward(hom, single_pixel(64, 3)).reps, forward(hom, single_pixel(64, 40)).reps)]
    checks["linearity"] = all(np.array_equal(p, q) for p, q in zip(joint, sep)) or max(
        float(np.abs(p - q).max()) for p, q in zip(joint, sep)
    ) <= 1e-15
    # Parseval on gamma
    modes = grid_laplacian_modes(3, 2)
    wt = rng.normal(size=(5, 4, 3, 3))
    target = np.mean(np.sum(wt.reshape(20, 9) ** 2, axis=1))
    checks["parseval"] = abs(filter_gamma(wt, modes).sum() - target) / target <= 1e-9
    # matched-noise magnitude over 10^3 samples
    ds = gen_task1(32, 11, 4, 1000, seed=0)
    moved = batch_displace(ds.coords, 32, np.random.default_rng(1))
    tau = ((_coords_to_pixels(moved, 32, 1) - ds.pixels()) ** 2).sum(axis=(1, 2)).mean()
    eta = (sample_noise((1000, 1, 32), np.random.default_rng(2), rectified=False) ** 2).sum(axis=(1, 2)).mean()
    checks["noise magnitude"] = abs(eta - tau) / tau <= 0.05
    # determinism: identical seeds give byte-identical CSVs
    cfg = task1_trained("smoke")
    ra = run_experiment(cfg.with_out(tmp_path / "a"))
    rb = run_experiment(cfg.with_out(tmp_path / "b"))
    csvs = [f for f in ra.manifest.files if f.endswith(".csv")]
    checks["determinism"] = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in csvs)
    hom32 = homogeneous_network(8, 3, 1, 32)
    rep1 = sensitivity_report(hom32, ds, n_inputs=32, n_perturbs=4, seed=3)
    rep2 = sensitivity_report(hom32, ds, n_inputs=32, n_perturbs=4, seed=3)
    checks["determinism"] &= np.array_equal(rep1.D, rep2.D, equal_nan=True)
    ok = all(checks.values())
    report_line("8 property suites", ok, ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok
