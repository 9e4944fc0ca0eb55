import json
from dataclasses import replace

import pytest

from scalepool.errors import ParameterError
from scalepool.harness import StageError, parse_config, reproduce_figure, run_experiment
from scalepool.harness.cli import main
from scalepool.harness.config import ExperimentConfig, ModelConfig, TaskConfig
from scalepool.harness.figures import ensemble_configs, task1_analytic, task1_trained, task2_analytic

SMOKE_INI = """
[task]
task = 1
L = 16
xi = 5
g = 2
n = 120
n_train = 16

[model]
mode = trained
depth = 2
channels = 4
F = 3
stride = 1

[train]
max_epochs = 6

[sensitivity]
n_inputs = 16
n_perturbs = 2
n_pairs = 64

[run]
seed = 3
"""


def test_config_roundtrip():
    cfg = parse_config(SMOKE_INI)
    assert cfg.task.L == 16 and cfg.model.channels == 4 and cfg.train.max_epochs == 6 and cfg.train.lr == 0.01
    assert cfg.train.batch_size == 8  # default kept
    back = parse_config(cfg.to_ini())
    assert back == cfg
    assert back.digest() == cfg.digest()
    assert cfg.with_out("elsewhere").digest() == cfg.digest()
    assert cfg.with_seed(4).digest() != cfg.digest()


@pytest.mark.parametrize(
    "patch,needle",
    [
        ("[model]\nstride = 2", "stride"),
        ("[model]\nF = 2\nstride = 2\ndepth = 6", "divide"),
        ("[task]\nxi = 17", "L >= 2 xi"),
        ("[task]\ntask = 2\nxi = 5", "dividing"),
        ("[task]\ng = 0", "task.g"),
        ("[model]\nmode = magic", "model.mode"),
        ("[task]\nbogus = 1", "unknown keys"),
        ("[extra]\na = 1", "unknown sections"),
        ("[task]\nL = many", "cannot parse"),
        ("[sensitivity]\nn_inputs = 0", "sample counts"),
    ],
)
def test_config_validation_messages(patch, needle):
    with pytest.raises(ParameterError, match=needle):
        parse_config(patch)


def test_stage_seeds_are_distinct_and_stable():
    a = ExperimentConfig().stage_seeds()
    assert a == ExperimentConfig().stage_seeds()
    assert len(set(a.values())) == len(a)
    assert ExperimentConfig(seed=1).stage_seeds() != a


def test_presets_validate():
    assert task1_analytic().model.depth == 100
    assert task2_analytic().task.L == 4096
    assert task1_trained().model.channels == 64
    ens = ensemble_configs()
    assert len(ens) >= 6
    assert len({(c.model.depth, c.model.channels, c.seed) for c in ens}) == len(ens)


def test_run_is_byte_identical(tmp_path):
    cfg = parse_config(SMOKE_INI)
    a = run_experiment(cfg.with_out(tmp_path / "a"))
    b = run_experiment(cfg.with_out(tmp_path / "b"))
    csvs = [f for f in a.manifest.files if f.endswith((".csv", ".jsonl", ".json", ".npz"))]
    assert "spectra.csv" in csvs and "sensitivity.csv" in csvs
    for f in csvs:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    a.manifest.files.pop("config.ini")  # records the output directory
    b.manifest.files.pop("config.ini")
    assert a.manifest.files == b.manifest.files
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert set(manifest["wall_clock"]) == {"generate", "model", "sensitivities", "spectra", "fits"}


def test_partial_stages(tmp_path):
    res = run_experiment(parse_config(SMOKE_INI).with_out(tmp_path), stages=("generate",))
    assert set(res.manifest.files) == {"config.ini", "dataset.jsonl"}


def test_stage_failure_names_stage(tmp_path):
    cfg = parse_config(SMOKE_INI).with_out(tmp_path)
    # Task 1 with a gap that leaves no negative distances fails at generation
    bad = replace(cfg, task=TaskConfig(task=1, L=16, xi=8, g=15, n=40, n_train=8))
    with pytest.raises(StageError) as info:
        run_experiment(bad)
    assert info.value.stage == "generate"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "generate"


def test_analytic_summary(tmp_path):
    cfg = ExperimentConfig(
        task=TaskConfig(task=2, L=256, xi=64, n=2048, n_train=None),
        model=ModelConfig(mode="analytic", depth=8, F=2, stride=2),
        out=str(tmp_path),
    )
    res = run_experiment(cfg)
    ex = res.summary["exponents"]
    assert ex["predicted"] == {"D": -1.0, "G": 1.0, "R": -2.0}
    assert ex["fitted"]["G"] == pytest.approx(1.0, abs=0.2)
    assert not (tmp_path / "spectra.csv").exists()


def test_cli_commands(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text(SMOKE_INI)
    assert main(["gen", "--config", str(ini), "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "dataset.jsonl").exists()
    assert main(["theory", "--F", "3", "--L", "256", "--k", "16", "--out", str(tmp_path / "t")]) == 0
    info = json.loads((tmp_path / "t" / "theory.json").read_text())
    assert info["peak_rel_error"] < 0.05
    assert main(["run", "--config", str(ini), "--seed", "1", "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "manifest.json").read_text())["seeds"] == parse_config(SMOKE_INI).with_seed(1).stage_seeds()


def test_cli_reports_failing_stage(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[task]\nL = 16\nxi = 8\ng = 15\nn = 40\nn_train = 8\n")
    assert main(["gen", "--config", str(ini), "--out", str(tmp_path / "x")]) == 2
    assert "stage generate" in capsys.readouterr().err
    ini.write_text("[model]\nstride = 7\n")
    assert main(["run", "--config", str(ini)]) == 1
    assert "config" in capsys.readouterr().err


def test_reproduce_figure_smoke(tmp_path):
    m = reproduce_figure("fig7bottom", tmp_path, scale="smoke")
    for key in "DGR":
        lines = (tmp_path / f"{key}_vs_A.csv").read_text().splitlines()
        assert lines[0] == f"layer,A_k,{key},se,prediction"
        assert len(lines) == 10
        assert f"{key}_vs_A.csv" in m.files
    with pytest.raises(ParameterError):
        reproduce_figure("fig99", tmp_path)


def test_ensemble_smoke(tmp_path):
    reproduce_figure("fig5", tmp_path, scale="smoke")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_models"] == 6
    assert set(summary["log_correlation"]) >= {"D", "G", "R"}
    assert len((tmp_path / "ensemble.csv").read_text().splitlines()) == 7


def test_plot_is_deterministic(tmp_path):
    pytest.importorskip("matplotlib")
    cfg = parse_config(SMOKE_INI)
    run_experiment(cfg.with_out(tmp_path / "a"), plot=True)
    run_experiment(cfg.with_out(tmp_path / "b"), plot=True)
    a, b = (tmp_path / "a" / "sensitivity.svg").read_bytes(), (tmp_path / "b" / "sensitivity.svg").read_bytes()
    assert a.startswith(b"<?xml") and a == b
