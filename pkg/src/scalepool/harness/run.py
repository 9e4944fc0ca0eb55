"""Staged experiment runner: generate, model, sensitivities, spectra, fits."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from ..convnet import Network, build_network, homogeneous_network, mean_channel, save_checkpoint, shuffle_channels
from ..scaledata import Dataset, gen_task1, gen_task2, write_jsonl
from ..sensitivity import SensitivityReport, asymptotic_window, loglog_slope, sensitivity_report
from ..spectra import SpectrumTrace, grid_laplacian_modes, spectrum_evolution
from ..theory import circulant_power, gaussian_profile, predicted_exponents, walk_diffusion_params, write_profile_csv
from ..training import TrainLog, train
from .config import ExperimentConfig

log = logging.getLogger(__name__)

STAGES = ("generate", "model", "sensitivities", "spectra", "fits")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and partial outputs are kept."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunManifest:
    config_hash: str
    version: str
    seeds: dict
    out: str
    files: dict = field(default_factory=dict)  # relative path -> sha256
    wall_clock: dict = field(default_factory=dict)  # stage -> seconds
    status: str = "ok"
    failed_stage: str | None = None

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


@dataclass
class RunResult:
    """In-memory products of a run, for callers that keep working with them."""

    config: ExperimentConfig
    manifest: RunManifest
    dataset: Dataset | None = None
    net: Network | None = None
    initial_net: Network | None = None
    train_log: TrainLog | None = None
    report: SensitivityReport | None = None
    surgery: dict = field(default_factory=dict)
    spectra: SpectrumTrace | None = None
    summary: dict = field(default_factory=dict)


def make_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    t = cfg.task
    if t.task == 1:
        return gen_task1(t.L, t.xi, t.g, t.n, dim=t.dim, seed=seed, n_train=t.n_train)
    return gen_task2(t.L, int(t.xi), t.n, dim=t.dim, seed=seed, n_train=t.n_train)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _num(v) -> str:
    return repr(float(v))


def fit_exponents(report: SensitivityReport, F: int, task: int) -> dict:
    """Slopes of D, G, R against A_k over the window A_k >= 2F, next to their predictions."""
    window = asymptotic_window(report.A, F, report.D, report.G)
    predicted = predicted_exponents(task).slopes()
    fits = {"window": [int(k) for k in window], "predicted": predicted, "fitted": {}, "r2": {}}
    if len(window) < 3:
        fits["note"] = "fewer than 3 layers in the asymptotic window"
        return fits
    for key in ("D", "G", "R"):
        f = loglog_slope(report.A, getattr(report, key), window)
        fits["fitted"][key] = f.slope
        fits["r2"][key] = f.r2
    return fits


def run_experiment(
    cfg: ExperimentConfig,
    stages: tuple[str, ...] = STAGES,
    plot: bool = False,
    surgery: bool = True,
) -> RunResult:
    """Run the requested stages in order, writing every artifact under ``cfg.out``.

    Stages after ``generate`` need the ones before them, which are run
    implicitly. A failing stage raises :class:`StageError` after the manifest
    and any partial outputs have been written.
    """
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    last = max(STAGES.index(s) for s in stages)
    todo = STAGES[: last + 1]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.stage_seeds()
    manifest = RunManifest(cfg.digest(), __version__, seeds, str(out))
    res = RunResult(cfg, manifest)
    (out / "config.ini").write_text(cfg.to_ini())

    steps: dict[str, Callable[[], list[str]]] = {
        "generate": lambda: _stage_generate(res, out, seeds),
        "model": lambda: _stage_model(res, out, seeds),
        "sensitivities": lambda: _stage_sensitivities(res, out, seeds, surgery),
        "spectra": lambda: _stage_spectra(res, out),
        "fits": lambda: _stage_fits(res, out, plot),
    }
    written = ["config.ini"]
    try:
        for stage in todo:
            t0 = time.perf_counter()
            log.info("stage %s", stage)
            try:
                written += steps[stage]()
            except Exception as exc:
                manifest.status = "failed"
                manifest.failed_stage = stage
                raise StageError(stage, exc) from exc
            finally:
                manifest.wall_clock[stage] = round(time.perf_counter() - t0, 3)
    finally:
        manifest.files = {f: _sha256(out / f) for f in written if (out / f).exists()}
        manifest.write(out / "manifest.json")
    return res


def _stage_generate(res: RunResult, out: Path, seeds: dict) -> list[str]:
    res.dataset = make_dataset(res.config, seeds["data"])
    write_jsonl(res.dataset, out / "dataset.jsonl")
    return ["dataset.jsonl"]


def _stage_model(res: RunResult, out: Path, seeds: dict) -> list[str]:
    cfg, m, t = res.config, res.config.model, res.config.task
    if m.mode == "analytic":
        res.net = homogeneous_network(m.depth, m.F, m.stride, t.L, t.dim)
        save_checkpoint(res.net, out / "network.npz")
        return ["network.npz"]
    init = build_network(m.depth, m.channels, m.F, m.stride, t.L, t.dim, seed=seeds["init"])
    res.initial_net = init
    tcfg = cfg.train.__class__(**{**asdict(cfg.train), "seed": seeds["train"]})
    res.net, res.train_log = train(init, res.dataset, tcfg)
    lg = res.train_log
    save_checkpoint(res.net, out / "network.npz")
    _write_rows(
        out / "train_log.csv",
        ["epoch", "loss", "train_error"],
        ([e + 1, _num(l), _num(err)] for e, (l, err) in enumerate(zip(lg.loss, lg.train_error))),
    )
    _write_rows(out / "test_error.csv", ["epoch", "test_error"], ([e, _num(v)] for e, v in sorted(lg.test_error.items())))
    return ["network.npz", "train_log.csv", "test_error.csv"]


def _stage_sensitivities(res: RunResult, out: Path, seeds: dict, surgery: bool) -> list[str]:
    s = res.config.sensitivity
    kw = dict(n_inputs=s.n_inputs, n_perturbs=s.n_perturbs, n_pairs=s.n_pairs, rectified=s.rectified, seed=seeds["sensitivity"])
    res.report = sensitivity_report(res.net, res.dataset, **kw)
    res.report.to_csv(out / "sensitivity.csv")
    files = ["sensitivity.csv"]
    if surgery and res.config.model.mode == "trained":
        # every channel replaced by the mean channel; the plain average would shrink filters against biases
        mc = mean_channel(res.net, scale_by_fan_in=True)
        variants = {"mean_channel": mc, "shuffled": shuffle_channels(res.net, seeds["sensitivity"])}
        for name, net in variants.items():
            rep = sensitivity_report(net, res.dataset, **kw)
            res.surgery[name] = rep
            rep.to_csv(out / f"sensitivity_{name}.csv")
            files.append(f"sensitivity_{name}.csv")
    return files


def _stage_spectra(res: RunResult, out: Path) -> list[str]:
    m = res.config.model
    if res.train_log is None:
        return []
    modes = grid_laplacian_modes(m.F, res.config.task.dim)
    res.spectra = spectrum_evolution(res.train_log.snapshots, modes)
    res.spectra.to_csv(out / "spectra.csv")
    return ["spectra.csv"]


def _stage_fits(res: RunResult, out: Path, plot: bool) -> list[str]:
    cfg, m, t = res.config, res.config.model, res.config.task
    files = []
    summary: dict = {"name": cfg.name, "task": t.task, "mode": m.mode, "config_hash": res.manifest.config_hash}
    summary["exponents"] = fit_exponents(res.report, m.F, t.task)
    if res.report.output is not None:
        summary["output_sensitivity"] = {k: res.report.output[k] for k in ("D", "G", "R")}
    if res.train_log is not None:
        lg = res.train_log
        summary["training"] = {
            "interpolation_epoch": lg.interpolation_epoch,
            "epochs": lg.epochs,
            "final_test_error": lg.final_test_error,
        }
    if res.spectra is not None:
        summary["constant_mode_dominates"] = {
            str(k): constant_mode_dominates(res.spectra, k) for k in sorted(res.spectra.gamma)
        }
    if res.surgery:
        summary["surgery_D"] = {name: [_finite(v) for v in rep.D] for name, rep in res.surgery.items()}
        summary["surgery_D"]["full"] = [_finite(v) for v in res.report.D]
    if m.mode == "analytic" and m.stride == 1 and t.dim == 1:
        k, i = m.depth, t.L // 2
        c = circulant_power(t.L, m.F, k, i)
        g = gaussian_profile(t.L, m.F, k, i, walk_diffusion_params(m.F))
        write_profile_csv(out / "theory_profile.csv", c, g)
        files.append("theory_profile.csv")
        summary["profile_peak_rel_error"] = float(abs(g.values[i] - c.values[i]) / c.values[i])
    res.summary = summary
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files.append("summary.json")
    if plot:
        from .plots import plot_sensitivities

        plot_sensitivities(res.report, summary["exponents"], out / "sensitivity.svg")
        files.append("sensitivity.svg")
    return files


def _finite(v: float) -> float | None:
    return float(v) if np.isfinite(v) else None


def constant_mode_dominates(trace: SpectrumTrace, k: int) -> bool:
    """True when the zero-eigenvalue eigenspace has the largest growth ratio in layer ``k``."""
    r = trace.final_ratios(k)
    if not np.isfinite(r[0]):
        return False
    others = r[1:][np.isfinite(r[1:])]
    return bool(np.all(r[0] > others))
