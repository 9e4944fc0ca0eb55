"""Experiment configuration read from INI files.

Example::

    [task]
    task = 1
    L = 32
    xi = 11
    g = 4
    n = 1072
    n_train = 48

    [model]
    mode = trained
    depth = 8
    channels = 64
    F = 3
    stride = 1

    [train]
    lr = 0.01

    [sensitivity]
    n_inputs = 256

    [run]
    seed = 0
    out = runs/task1

Every key is optional; missing keys take the defaults of the dataclasses below.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from ..training import TrainConfig


@dataclass(frozen=True)
class TaskConfig:
    task: int = 1
    L: int = 32
    xi: float = 11.0
    g: float = 4.0
    dim: int = 1
    n: int = 1072
    n_train: int | None = 48


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "trained"  # "trained" or "analytic"
    depth: int = 8
    channels: int = 64
    F: int = 3
    stride: int = 1


@dataclass(frozen=True)
class SensitivityConfig:
    n_inputs: int = 256
    n_perturbs: int = 16
    n_pairs: int = 4096
    rectified: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    seed: int = 0
    out: str = "runs/default"
    name: str = "experiment"

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of everything that determines the numeric outputs."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    def with_out(self, out: str | Path) -> "ExperimentConfig":
        return replace(self, out=str(out))

    def stage_seeds(self) -> dict[str, int]:
        """Independent integer seeds for each stage, derived from the master seed."""
        names = ("data", "init", "train", "sensitivity")
        children = np.random.SeedSequence(self.seed).spawn(len(names))
        return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for section, obj in _sections(self).items():
            cp[section] = {k: _fmt(v) for k, v in asdict(obj).items()}
        cp["run"] = {"seed": str(self.seed), "out": self.out, "name": self.name}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _sections(cfg: ExperimentConfig) -> dict:
    return {"task": cfg.task, "model": cfg.model, "train": cfg.train, "sensitivity": cfg.sensitivity}


def _fmt(v) -> str:
    return "none" if v is None else str(v)


def _parse(value: str, typ, key: str):
    text = value.strip()
    typ = str(typ)
    if text.lower() == "none" and "None" in typ:
        return None
    try:
        if typ.startswith("bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ.startswith("int"):
            return int(text)
        if typ.startswith("float"):
            return float(text)
    except ValueError:
        raise ParameterError(f"cannot parse {key} = {value!r} as {typ}") from None
    return text


def _build(cls, items: dict, section: str):
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(items) - set(known)
    if unknown:
        raise ParameterError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**{k: _parse(v, known[k], f"{section}.{k}") for k, v in items.items()})


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParameterError(f"malformed config: {exc}") from None
    allowed = {"task", "model", "train", "sensitivity", "run"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ParameterError(f"unknown sections: {sorted(extra)}")
    classes = {"task": TaskConfig, "model": ModelConfig, "train": TrainConfig, "sensitivity": SensitivityConfig}
    parts = {s: _build(cls, dict(cp[s]) if cp.has_section(s) else {}, s) for s, cls in classes.items()}
    run = dict(cp["run"]) if cp.has_section("run") else {}
    unknown = set(run) - {"seed", "out", "name"}
    if unknown:
        raise ParameterError(f"unknown keys in [run]: {sorted(unknown)}")
    seed = _parse(run.get("seed", "0"), "int", "run.seed")
    return ExperimentConfig(
        seed=seed, out=run.get("out", "runs/default"), name=run.get("name", "experiment"), **parts
    )


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def validate(cfg: ExperimentConfig) -> None:
    """Reject inconsistent combinations with a message naming the fields involved."""
    t, m, s = cfg.task, cfg.model, cfg.sensitivity
    if t.task not in (1, 2):
        raise ParameterError(f"task.task must be 1 or 2, got {t.task}")
    if t.dim not in (1, 2):
        raise ParameterError(f"task.dim must be 1 or 2, got {t.dim}")
    if t.L < 2 or t.n < 2:
        raise ParameterError("task.L and task.n must be >= 2")
    if t.xi <= 0:
        raise ParameterError("task.xi must be positive")
    if t.task == 1:
        if t.g <= 0:
            raise ParameterError("task.g must be positive for task 1")
        if t.L < 2 * t.xi:
            raise ParameterError(f"task.xi={t.xi} too large for task.L={t.L} (need L >= 2 xi)")
    else:
        if t.xi != int(t.xi) or t.L % int(t.xi):
            raise ParameterError(f"task 2 needs an integer task.xi dividing task.L, got xi={t.xi}, L={t.L}")
    if t.n_train is not None and not 0 < t.n_train < t.n:
        raise ParameterError(f"task.n_train must be in 1..n-1, got {t.n_train}")
    if m.mode not in ("trained", "analytic"):
        raise ParameterError(f"model.mode must be 'trained' or 'analytic', got {m.mode!r}")
    if m.F < 2:
        raise ParameterError("model.F must be >= 2")
    if m.stride not in (1, m.F):
        raise ParameterError(f"model.stride must be 1 or F={m.F}, got {m.stride}")
    if m.depth < 1 or m.channels < 1:
        raise ParameterError("model.depth and model.channels must be >= 1")
    if m.stride == m.F and t.L % m.F**m.depth:
        raise ParameterError(f"model.F**depth={m.F**m.depth} must divide task.L={t.L} for stride-F networks")
    if m.stride == 1 and t.L < m.F:
        raise ParameterError("task.L must be at least model.F")
    if min(s.n_inputs, s.n_perturbs, s.n_pairs) < 1:
        raise ParameterError("sensitivity sample counts must be >= 1")
