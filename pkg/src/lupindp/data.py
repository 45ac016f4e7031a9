"""Dynamics datasets: damped coupled oscillators and Lotka-Volterra.

Each generated series carries a privileged scalar: the spring constant for
the varying-stiffness task, the damping constant for the varying-damping
task, and the conserved quantity V for Lotka-Volterra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, IntegrationError, ParseError
from .odeint import rk4_solve, rk4_solve_second_order

N_POINTS = 100
GEN_SUBSTEPS = 10

TASKS = ("osc-stiffness", "osc-damping", "lotka-volterra", "sine")
TASK_ALIASES = {
    "stiffness": "osc-stiffness",
    "osc-stiffness": "osc-stiffness",
    "damping": "osc-damping",
    "osc-damping": "osc-damping",
    "lv": "lotka-volterra",
    "lotka-volterra": "lotka-volterra",
    "sine": "sine",
}


@dataclass(frozen=True)
class OscillatorParams:
    k: float
    c: float
    x0: tuple = (0.0, 0.0)
    v0: tuple = (0.0, 0.0)
    m1: float = 1.0
    m2: float = 1.0

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0 or self.k <= 0:
            raise DomainError("masses and spring constant must be positive")
        if self.c < 0:
            raise DomainError("damping constant must be non-negative")


@dataclass(frozen=True)
class LvParams:
    u0: float
    v0: float
    alpha: float = 2.0 / 3.0
    beta: float = 4.0 / 3.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.delta) <= 0:
            raise DomainError("Lotka-Volterra rates must be positive")
        if self.u0 < 0 or self.v0 < 0:
            raise DomainError("initial populations must be non-negative")


@dataclass
class TrajectoryRecord:
    series_id: int
    times: np.ndarray
    values: np.ndarray
    pi: float
    task: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.times.shape != (N_POINTS,) or self.values.shape[0] != N_POINTS:
            raise ConfigError(
                f"series {self.series_id}: expected {N_POINTS} time points, got {self.times.shape[0]}"
            )
        if not math.isfinite(self.pi):
            raise ConfigError(f"series {self.series_id}: privileged value is not finite")

    @property
    def obs_dim(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    horizon: float
    pi_name: str
    fixed: dict = field(default_factory=dict)

    @classmethod
    def from_name(cls, name: str) -> "TaskSpec":
        kind = TASK_ALIASES.get(name)
        if kind is None:
            raise ConfigError(f"unknown task {name!r}; choose from {sorted(TASK_ALIASES)}")
        if kind == "osc-stiffness":
            return cls(kind, 10.0, "k", {"c": 1.0, "k_range": (0.2, 1.0)})
        if kind == "osc-damping":
            return cls(kind, 10.0, "c", {"k": 1.0, "c_range": (0.5, 2.0)})
        if kind == "lotka-volterra":
            return cls(kind, 15.0, "V", {"u0_range": (0.2, 1.0), "v0_range": (0.1, 0.5)})
        return cls(kind, 2 * math.pi, "a", {"a_range": (0.5, 1.5)})

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, N_POINTS)


def oscillator_energy(k, x, v):
    """Mechanical energy with unit masses; non-increasing when c > 0."""
    x1, x2 = x[..., 0], x[..., 1]
    kinetic = 0.5 * (v[..., 0] ** 2 + v[..., 1] ** 2)
    return kinetic + 0.5 * k * (x1**2 + (x2 - x1) ** 2 + x2**2)


def simulate_oscillators(p: OscillatorParams, times, substeps=GEN_SUBSTEPS, return_velocities=False):
    """Positions (x1, x2) of two masses coupled by identical springs between walls."""
    masses = np.array([p.m1, p.m2])

    def accel(t, x, v, _):
        x1, x2 = x[..., 0], x[..., 1]
        force = np.stack([(x2 - 2 * x1) * p.k, (x1 - 2 * x2) * p.k], axis=-1) - p.c * v
        return force / masses

    x, v = rk4_solve_second_order(accel, p.x0, p.v0, times, substeps)
    return (x, v) if return_velocities else x


def simulate_lv(p: LvParams, times, substeps=GEN_SUBSTEPS):
    """Prey ``u`` and predator ``v`` populations, shape ``(len(times), 2)``."""

    def field(t, s, _):
        u, v = s[0], s[1]
        return np.array([p.alpha * u - p.beta * u * v, p.delta * u * v - p.gamma * v])

    traj = np.stack(rk4_solve(field, np.array([p.u0, p.v0]), times, substeps))
    bad = np.flatnonzero((traj < 0).any(axis=1))
    if bad.size:
        t = float(np.asarray(times)[bad[0]])
        raise IntegrationError(f"population became negative at t={t:.6g}", time=t)
    return traj


def conserved_quantity_v(p: LvParams, u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if (u <= 0).any() or (v <= 0).any():
        raise DomainError("V is only defined for strictly positive populations")
    return p.delta * u - p.gamma * np.log(u) + p.beta * v - p.alpha * np.log(v)


def series_rng(seed: int, series_id: int) -> np.random.Generator:
    """Independent stream per series so generation order does not matter."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(series_id,)))


def _sample_series(task: TaskSpec, rng: np.random.Generator) -> dict:
    if task.kind == "osc-stiffness":
        k = rng.uniform(*task.fixed["k_range"])
        p = {"k": k, "c": task.fixed["c"], "pi": k}
    elif task.kind == "osc-damping":
        c = rng.uniform(*task.fixed["c_range"])
        p = {"k": task.fixed["k"], "c": c, "pi": c}
    elif task.kind == "lotka-volterra":
        lv = LvParams(u0=rng.uniform(*task.fixed["u0_range"]), v0=rng.uniform(*task.fixed["v0_range"]))
        return {"lv": lv, "pi": float(conserved_quantity_v(lv, lv.u0, lv.v0))}
    elif task.kind == "sine":
        a = rng.uniform(*task.fixed["a_range"])
        return {"a": a, "pi": a}
    else:
        raise ConfigError(f"unknown task {task.kind!r}")
    p["x0"] = tuple(rng.uniform(-1.0, 1.0, size=2))
    p["v0"] = tuple(rng.uniform(-0.5, 0.5, size=2))
    return p


def _simulate_many(task: TaskSpec, draws, times):
    """Integrate all series at once; the state carries a leading series axis."""
    if task.kind == "sine":
        return [(d["a"] * np.sin(times))[:, None] for d in draws]
    if task.kind == "lotka-volterra":
        lv = draws[0]["lv"]
        init = np.array([[d["lv"].u0, d["lv"].v0] for d in draws])

        def field(t, s, _):
            u, v = s[:, 0], s[:, 1]
            return np.stack([lv.alpha * u - lv.beta * u * v, lv.delta * u * v - lv.gamma * v], axis=1)

        traj = np.stack(rk4_solve(field, init, times, GEN_SUBSTEPS), axis=1)
        if (traj < 0).any():
            raise IntegrationError("population became negative during generation")
        return list(traj)
    k = np.array([d["k"] for d in draws])[:, None]
    c = np.array([d["c"] for d in draws])[:, None]

    def accel(t, x, v, _):
        x1, x2 = x[:, :1], x[:, 1:]
        return np.concatenate([(x2 - 2 * x1) * k, (x1 - 2 * x2) * k], axis=1) - c * v

    x0 = np.array([d["x0"] for d in draws])
    v0 = np.array([d["v0"] for d in draws])
    x, _ = rk4_solve_second_order(accel, x0, v0, times, GEN_SUBSTEPS)
    return list(np.swapaxes(x, 0, 1))


def generate_series(task: TaskSpec, seed: int, series_id: int) -> TrajectoryRecord:
    return generate_dataset(task, 1, seed, first_id=series_id)[0]


def generate_dataset(task, n_series: int, seed: int, first_id: int = 0):
    """``n_series`` records with ids ``first_id, first_id + 1, ...``.

    Parameters of series ``i`` come from a stream keyed on ``(seed, i)``, so
    a series is identical whether generated alone or in a batch.
    """
    if isinstance(task, str):
        task = TaskSpec.from_name(task)
    if n_series < 1:
        raise ConfigError("n_series must be at least 1")
    ids = range(first_id, first_id + n_series)
    draws = [_sample_series(task, series_rng(seed, i)) for i in ids]
    times = task.grid()
    values = _simulate_many(task, draws, times)
    return [TrajectoryRecord(i, times, y, float(d["pi"]), task.kind) for i, d, y in zip(ids, draws, values)]


# -- file format -------------------------------------------------------------


def _f(x):
    return format(float(x), ".17g")


def write_dataset(path, records, task: TaskSpec, seed: int):
    lines = [
        f"#task={task.kind} seed={int(seed)} n={len(records)} horizon={_f(task.horizon)} "
        f"points={N_POINTS} pi={task.pi_name}"
    ]
    for rec in records:
        lines.append(f"series {rec.series_id} pi={_f(rec.pi)}")
        for t, row in zip(rec.times, rec.values):
            lines.append(" ".join([_f(t)] + [_f(y) for y in row]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_header(line: str) -> dict:
    if not line.startswith("#"):
        raise ParseError("missing '#task=...' header", line=1)
    fields = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"bad header token {tok!r}", line=1)
        fields[key] = val
    for key in ("task", "seed", "n", "horizon", "points", "pi"):
        if key not in fields:
            raise ParseError(f"header lacks {key!r}", line=1)
    try:
        fields["seed"] = int(fields["seed"])
        fields["n"] = int(fields["n"])
        fields["points"] = int(fields["points"])
        fields["horizon"] = float(fields["horizon"])
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}", line=1) from None
    return fields


def read_dataset(path):
    """Parse a dataset file; returns ``(header, records)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty dataset file", line=1)
    header = parse_header(lines[0])
    if header["points"] != N_POINTS:
        raise ParseError(f"points={header['points']}, expected {N_POINTS}", line=1)
    records = []
    i = 1
    ncols = None

    def finish(sid, pi, rows, line_no):
        if len(rows) != N_POINTS:
            raise ParseError(f"series {sid} has {len(rows)} points, expected {N_POINTS}", line=line_no)
        arr = np.array(rows)
        records.append(TrajectoryRecord(sid, arr[:, 0], arr[:, 1:], pi, header["task"]))

    sid = pi = None
    rows = []
    start = None
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line.startswith("series"):
            if sid is not None:
                finish(sid, pi, rows, start)
            parts = line.split()
            if len(parts) != 3 or not parts[2].startswith("pi="):
                raise ParseError(f"bad series line {line!r}", line=i)
            try:
                sid = int(parts[1])
                pi = float(parts[2][3:])
            except ValueError:
                raise ParseError(f"bad series line {line!r}", line=i) from None
            rows = []
            start = i
            continue
        if sid is None:
            raise ParseError("data row before any series line", line=i)
        try:
            row = [float(x) for x in line.split()]
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", line=i) from None
        if ncols is None:
            ncols = len(row)
        if len(row) != ncols or ncols < 2:
            raise ParseError(f"expected {ncols} columns, got {len(row)}", line=i)
        rows.append(row)
    if sid is not None:
        finish(sid, pi, rows, start)
    if len(records) != header["n"]:
        raise ParseError(f"header announces {header['n']} series, found {len(records)}", line=1)
    return header, records
