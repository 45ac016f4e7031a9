"""Plain-text checkpoints with 17-significant-digit parameter values.

Layout::

    #lupindp-checkpoint version=1
    config obs_dim=2 rep_dim=8 ...
    mode lupi
    seed 7
    epochs 50
    param f_obs.0.weight 3x16
    <values, space separated, row-major>
    ...
    end

A file without the trailing ``end`` line is treated as truncated and
rejected before any parameter is touched.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

import numpy as np

from .errors import ParseError
from .model import ModelConfig, NeuralODEProcess

MAGIC = "#lupindp-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict
    mode: str
    seed: int
    epochs: int

    def build_model(self) -> NeuralODEProcess:
        model = NeuralODEProcess(self.config)
        model.load_state_dict(self.state)
        return model


def _fmt(x):
    return format(float(x), ".17g")


def _config_line(cfg: ModelConfig):
    parts = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        parts.append(f"{f.name}={'none' if v is None else _fmt(v) if isinstance(v, float) else v}")
    return "config " + " ".join(parts)


def save_checkpoint(path, model: NeuralODEProcess, mode: str, seed: int, epochs: int):
    lines = [f"{MAGIC} version={VERSION}", _config_line(model.config), f"mode {mode}", f"seed {int(seed)}", f"epochs {int(epochs)}"]
    for name, p in model.named_parameters():
        lines.append(f"param {name} {'x'.join(str(n) for n in p.shape)}")
        lines.append(" ".join(_fmt(v) for v in p.data.ravel()))
    lines.append("end")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _parse_config(line, line_no):
    types = {f.name: f.type for f in fields(ModelConfig)}
    kwargs = {}
    for tok in line.split()[1:]:
        key, _, val = tok.partition("=")
        if key not in types:
            raise ParseError(f"unknown config key {key!r}", line=line_no)
        if val == "none":
            kwargs[key] = None
        elif key in ("max_step", "time_scale"):
            kwargs[key] = float(val)
        else:
            kwargs[key] = int(val)
    return ModelConfig(**kwargs)


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(MAGIC):
        raise ParseError("not a lupindp checkpoint", line=1)
    version = lines[0].split("version=")[-1]
    if version != str(VERSION):
        raise ParseError(f"unsupported checkpoint version {version}", line=1)
    if lines[-1].strip() != "end":
        raise ParseError("checkpoint is truncated (missing 'end')", line=len(lines))
    try:
        config = _parse_config(lines[1], 2)
        mode = lines[2].split()[1]
        seed = int(lines[3].split()[1])
        epochs = int(lines[4].split()[1])
    except (IndexError, ValueError) as exc:
        raise ParseError(f"bad checkpoint preamble: {exc}") from None
    state = {}
    i = 5
    while i < len(lines) - 1:
        head = lines[i].split()
        if len(head) != 3 or head[0] != "param":
            raise ParseError(f"expected 'param <name> <shape>', got {lines[i]!r}", line=i + 1)
        try:
            shape = tuple(int(n) for n in head[2].split("x"))
            values = np.array([float(v) for v in lines[i + 1].split()])
        except (ValueError, IndexError):
            raise ParseError(f"bad values for {head[1]}", line=i + 2) from None
        if values.size != int(np.prod(shape)):
            raise ParseError(f"{head[1]}: {values.size} values for shape {shape}", line=i + 2)
        state[head[1]] = values.reshape(shape)
        i += 2
    ckpt = Checkpoint(config, state, mode, seed, epochs)
    ckpt.build_model()  # validates names and shapes against the config
    return ckpt
