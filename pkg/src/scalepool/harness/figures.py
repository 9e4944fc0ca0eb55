"""Preset experiment bundles that regenerate the main tables at desk or smoke scale."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import DegenerateError, ParameterError
from ..sensitivity import log_correlation
from ..training import TrainConfig
from .config import ExperimentConfig, ModelConfig, SensitivityConfig, TaskConfig
from .run import RunManifest, RunResult, _num, _write_rows, run_experiment

FIGURES = ("fig7top", "fig7bottom", "fig5", "fig3bottom")
SCALES = ("desk", "smoke")


def task1_analytic(scale: str = "desk") -> ExperimentConfig:
    if scale == "desk":
        return ExperimentConfig(
            task=TaskConfig(task=1, L=1024, xi=256, g=16, n=2048, n_train=None),
            model=ModelConfig(mode="analytic", depth=100, F=3, stride=1),
            sensitivity=SensitivityConfig(n_inputs=256, n_perturbs=16, n_pairs=4096),
            name="task1-analytic",
        )
    return ExperimentConfig(
        task=TaskConfig(task=1, L=256, xi=64, g=8, n=512, n_train=None),
        model=ModelConfig(mode="analytic", depth=64, F=3, stride=1),
        sensitivity=SensitivityConfig(n_inputs=64, n_perturbs=8, n_pairs=1024),
        name="task1-analytic-smoke",
    )


def task2_analytic(scale: str = "desk") -> ExperimentConfig:
    if scale == "desk":
        # deep layers are driven by rare block-boundary crossings, hence the large sample
        return ExperimentConfig(
            task=TaskConfig(task=2, L=4096, xi=1024, n=2**15, n_train=None),
            model=ModelConfig(mode="analytic", depth=10, F=2, stride=2),
            sensitivity=SensitivityConfig(n_inputs=16384, n_perturbs=4, n_pairs=16384),
            name="task2-analytic",
        )
    return ExperimentConfig(
        task=TaskConfig(task=2, L=256, xi=64, n=4096, n_train=None),
        model=ModelConfig(mode="analytic", depth=8, F=2, stride=2),
        sensitivity=SensitivityConfig(n_inputs=2048, n_perturbs=4, n_pairs=2048),
        name="task2-analytic-smoke",
    )


def task1_trained(scale: str = "desk") -> ExperimentConfig:
    if scale == "desk":
        return ExperimentConfig(
            task=TaskConfig(task=1, L=32, xi=11, g=4, n=48 + 1024, n_train=48),
            model=ModelConfig(mode="trained", depth=8, channels=64, F=3, stride=1),
            train=TrainConfig(dtype="float32"),
            sensitivity=SensitivityConfig(n_inputs=256, n_perturbs=16, n_pairs=4096),
            name="task1-trained",
        )
    return ExperimentConfig(
        task=TaskConfig(task=1, L=16, xi=5, g=2, n=16 + 200, n_train=16),
        model=ModelConfig(mode="trained", depth=3, channels=8, F=3, stride=1),
        train=TrainConfig(lr=0.05, max_epochs=40, stop_factor=2.0),
        sensitivity=SensitivityConfig(n_inputs=32, n_perturbs=4, n_pairs=256),
        name="task1-trained-smoke",
    )


def ensemble_configs(scale: str = "desk") -> list[ExperimentConfig]:
    """Task 1 models that differ in depth, width and seed."""
    base = task1_trained(scale)
    if scale == "desk":
        grid = [(4, 16), (4, 32), (6, 16), (6, 32), (8, 16), (8, 32), (2, 16), (2, 32)]
        train = TrainConfig(dtype="float32", stop_factor=20.0, max_epochs=4000)
        sens = SensitivityConfig(n_inputs=256, n_perturbs=16, n_pairs=4096)
    else:
        grid = [(1, 4), (1, 8), (2, 4), (2, 8), (3, 4), (3, 8)]
        train = replace(base.train, max_epochs=20)
        sens = base.sensitivity
    out = []
    for j, (depth, channels) in enumerate(grid):
        out.append(
            replace(
                base,
                model=replace(base.model, depth=depth, channels=channels),
                train=train,
                sensitivity=sens,
                seed=base.seed + j,
                name=f"{base.name}-d{depth}-w{channels}",
            )
        )
    return out


def _sensitivity_tables(res: RunResult, out: Path) -> list[str]:
    """One CSV per measure with the predicted power law anchored on the fit window."""
    rep, ex = res.report, res.summary["exponents"]
    w = np.asarray(ex["window"], dtype=int)
    files = []
    for key in ("D", "G", "R"):
        y = getattr(rep, key)
        se = {"D": rep.D_se, "G": rep.G_se, "R": rep.R_se}[key]
        slope = ex["predicted"][key]
        ok = w[np.isfinite(y[w]) & (y[w] > 0)]
        logc = float(np.mean(np.log(y[ok]) - slope * np.log(rep.A[ok]))) if len(ok) else float("nan")
        rows = []
        for k in rep.layers:
            pred = np.exp(logc) * rep.A[k] ** slope if rep.A[k] > 0 else float("nan")
            rows.append([int(k), _num(rep.A[k]), _num(y[k]), _num(se[k]), _num(pred)])
        name = f"{key}_vs_A.csv"
        _write_rows(out / name, ["layer", "A_k", key, "se", "prediction"], rows)
        files.append(name)
    return files


def _finish(manifest: RunManifest, out: Path, extra: list[str]) -> RunManifest:
    import hashlib

    for f in extra:
        manifest.files[f] = hashlib.sha256((out / f).read_bytes()).hexdigest()
    manifest.write(out / "manifest.json")
    return manifest


def reproduce_figure(
    name: str,
    out: str | Path,
    scale: str = "desk",
    seed: int = 0,
    plot: bool = False,
) -> RunManifest:
    """Run the preset bundle ``name`` and write its tables under ``out``."""
    if name not in FIGURES:
        raise ParameterError(f"unknown figure {name!r}; choose from {FIGURES}")
    if scale not in SCALES:
        raise ParameterError(f"unknown scale {scale!r}; choose from {SCALES}")
    out = Path(out)
    if name in ("fig7top", "fig7bottom"):
        cfg = (task1_analytic if name == "fig7top" else task2_analytic)(scale)
        res = run_experiment(cfg.with_seed(seed).with_out(out), plot=plot)
        return _finish(res.manifest, out, _sensitivity_tables(res, out))
    if name == "fig3bottom":
        cfg = task1_trained(scale).with_seed(seed).with_out(out)
        res = run_experiment(cfg, plot=plot)
        return _finish(res.manifest, out, _sensitivity_tables(res, out))
    return _ensemble(out, scale, seed, plot)


def _ensemble(out: Path, scale: str, seed: int, plot: bool) -> RunManifest:
    out.mkdir(parents=True, exist_ok=True)
    rows, errors, values = [], [], {"D": [], "G": [], "R": []}
    n_test = None
    for j, cfg in enumerate(ensemble_configs(scale)):
        cfg = replace(cfg, seed=cfg.seed + seed).with_out(out / f"member{j}")
        res = run_experiment(cfg, stages=("sensitivities",), surgery=False)
        n_test = len(res.dataset.test)
        err = res.train_log.final_test_error
        o = res.report.output
        rows.append([cfg.name, cfg.model.depth, cfg.model.channels, cfg.seed, _num(err), _num(o["D"]), _num(o["G"]), _num(o["R"])])
        errors.append(err)
        for key in values:
            values[key].append(o[key])
    _write_rows(out / "ensemble.csv", ["name", "depth", "channels", "seed", "test_error", "D_f", "G_f", "R_f"], rows)
    # a zero test error is floored at half a test example so that its log exists
    floor = 0.5 / n_test
    e = np.maximum(np.asarray(errors), floor)
    corr = {}
    for key, v in values.items():
        try:
            corr[key] = log_correlation(e, np.asarray(v))
        except (DegenerateError, ParameterError) as exc:
            corr[key] = None
            corr[f"{key}_error"] = str(exc)
    summary = {"n_models": len(rows), "error_floor": floor, "log_correlation": corr}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files = ["ensemble.csv", "summary.json"]
    if plot:
        from .plots import plot_scatter

        plot_scatter(e, {k: np.asarray(v) for k, v in values.items()}, out / "ensemble.svg")
        files.append("ensemble.svg")
    base = ensemble_configs(scale)[0]
    manifest = RunManifest(base.digest(), res.manifest.version, {"seed": seed}, str(out))
    return _finish(manifest, out, files)
