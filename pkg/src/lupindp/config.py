"""Experiment configuration stored as flat ``key = value`` INI sections."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .errors import ConfigError, ParseError
from .evaluation import EvalProtocol
from .model import ModelConfig
from .training import MODES, TrainConfig

EXAMPLE = """\
[run]
task = lv
mode = lupi
seed = 0

[data]
n_train = 500
n_test = 500

[model]
hidden = 16
rep_dim = 8
latent_dim = 8
ode_dim = 8
substeps = 4

[train]
epochs = 100
lr = 0.001
batch_size = 1
val_fraction = 0.2
context_min = 1
context_max = 10
target_min = 10
target_max = 50

[eval]
starred = false
n_samples = 32
context_min = 1
context_max = 10
"""


@dataclass
class ExperimentConfig:
    task: str = "lv"
    mode: str = "lupi"
    seed: int = 0
    n_train: int = 500
    n_test: int = 500
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["run"] = {"task": self.task, "mode": self.mode, "seed": str(self.seed)}
        cp["data"] = {"n_train": str(self.n_train), "n_test": str(self.n_test)}
        cp["model"] = {f.name: _fmt(getattr(self.model, f.name)) for f in fields(ModelConfig)}
        tc = self.train
        cp["train"] = {
            "epochs": str(tc.epochs),
            "lr": _fmt(tc.lr),
            "batch_size": str(tc.batch_size),
            "val_fraction": _fmt(tc.val_fraction),
            "context_min": str(tc.context_range[0]),
            "context_max": str(tc.context_range[1]),
            "target_min": str(tc.target_range[0]),
            "target_max": str(tc.target_range[1]),
        }
        ev = self.eval
        cp["eval"] = {
            "starred": str(ev.starred).lower(),
            "n_samples": str(ev.n_samples),
            "context_min": str(ev.context_range[0]),
            "context_max": str(ev.context_range[1]),
            "n_levels": str(ev.n_levels),
        }
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        if conv is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a valid {conv.__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"config: {exc}") from None
    known = {"run", "data", "model", "train", "eval"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    run, data = cp["run"] if "run" in cp else None, cp["data"] if "data" in cp else None
    mdl, trn = cp["model"] if "model" in cp else None, cp["train"] if "train" in cp else None
    ev = cp["eval"] if "eval" in cp else None
    seed = _get(run, "seed", int, 0)

    defaults = ModelConfig()
    mkw = {}
    for f in fields(ModelConfig):
        if f.name in ("max_step", "time_scale"):
            raw = mdl.get(f.name, "none").strip() if mdl is not None else "none"
            mkw[f.name] = None if raw.lower() == "none" else _get(mdl, f.name, float, None)
        else:
            mkw[f.name] = _get(mdl, f.name, int, getattr(defaults, f.name))
    td = TrainConfig()
    train = TrainConfig(
        epochs=_get(trn, "epochs", int, td.epochs),
        lr=_get(trn, "lr", float, td.lr),
        batch_size=_get(trn, "batch_size", int, td.batch_size),
        val_fraction=_get(trn, "val_fraction", float, td.val_fraction),
        context_range=(_get(trn, "context_min", int, 1), _get(trn, "context_max", int, 10)),
        target_range=(_get(trn, "target_min", int, 10), _get(trn, "target_max", int, 50)),
        seed=seed,
    )
    protocol = EvalProtocol(
        starred=_get(ev, "starred", bool, False),
        n_samples=_get(ev, "n_samples", int, 32),
        context_range=(_get(ev, "context_min", int, 1), _get(ev, "context_max", int, 10)),
        n_levels=_get(ev, "n_levels", int, 19),
        seed=seed,
    )
    return ExperimentConfig(
        task=_get(run, "task", str, "lv"),
        mode=_get(run, "mode", str, "lupi"),
        seed=seed,
        n_train=_get(data, "n_train", int, 500),
        n_test=_get(data, "n_test", int, 500),
        model=ModelConfig(**mkw),
        train=train,
        eval=protocol,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
