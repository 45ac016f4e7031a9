"""Test-time prediction and the two evaluation protocols.

Unstarred: a small random context per series, no privileged information;
the model predicts all 100 points.  Starred ("training setting"): the whole
series is the context and, for LUPI models, the privileged value is fused in.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .metrics import ForecastSet, calibration_error, default_levels, empirical_frequencies, mse, sharpness
from .model import NeuralODEProcess, ObservationBatch

VAR_FLOOR = 1e-12


@dataclass
class EvalProtocol:
    starred: bool = False
    n_samples: int = 32
    context_range: tuple = (1, 10)
    seed: int = 0
    n_levels: int = 19
    chunk: int = 25

    def __post_init__(self):
        self.context_range = tuple(int(x) for x in self.context_range)
        if self.n_samples < 1:
            raise ConfigError("n_samples must be at least 1")
        lo, hi = self.context_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad context range {self.context_range}")
        if self.chunk < 1:
            raise ConfigError("chunk must be at least 1")


def predict_mixture(model: NeuralODEProcess, context: ObservationBatch, times, n_samples, rng, pi=None):
    """Moment-matched mixture over ``n_samples`` latent draws per series.

    Returns mean and variance arrays of shape ``(B, len(times), obs_dim)``.
    """
    dist = model.posterior(context, pi)
    b = len(context)
    rows = np.repeat(np.arange(b), n_samples)
    eps = rng.standard_normal((b * n_samples, model.config.latent_dim))
    z = dist.mu.data[rows] + dist.sigma.data[rows] * eps
    mean, scale = model.decode(T.Tensor(z), times)
    shape = (b, n_samples) + mean.shape[1:]
    mu = mean.data.reshape(shape)
    sd = scale.data.reshape(shape)
    mix_mean = mu.mean(axis=1)
    mix_var = (sd**2 + mu**2).mean(axis=1) - mix_mean**2
    return mix_mean, np.maximum(mix_var, VAR_FLOOR)


def context_indices(n_points, rng, context_range):
    lo, hi = context_range
    n_c = int(rng.integers(lo, min(hi, n_points) + 1))
    return np.sort(rng.choice(n_points, size=n_c, replace=False))


@dataclass
class EvalReport:
    mse: float
    mse_se: float
    calibration_error: float
    sharpness: float
    levels: list
    frequencies: list
    n_series: int
    starred: bool
    mode: str
    task: str = ""
    seed: int = 0
    series_mse: list = field(default_factory=list, repr=False)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def predict_dataset(model: NeuralODEProcess, records, protocol: EvalProtocol, mode="lupi"):
    """Predictive means and variances for every record under ``protocol``.

    The unstarred path never touches ``record.pi``.
    """
    if not records:
        raise ConfigError("no test series")
    obs_dim = records[0].values.shape[1]
    if obs_dim != model.config.obs_dim:
        raise DimensionError(f"dataset has observation dim {obs_dim}, model expects {model.config.obs_dim}")
    times = records[0].times
    if any(not np.array_equal(r.times, times) for r in records):
        raise ConfigError("all test series must share one time grid")
    rng = np.random.default_rng(protocol.seed)
    means, variances = [], []
    for start in range(0, len(records), protocol.chunk):
        chunk = records[start : start + protocol.chunk]
        if protocol.starred:
            context = ObservationBatch.from_sets([(r.times, r.values) for r in chunk])
            pi = np.array([r.pi for r in chunk]) if mode == "lupi" else None
        else:
            idx = [context_indices(len(times), rng, protocol.context_range) for _ in chunk]
            context = ObservationBatch.from_sets([(r.times[i], r.values[i]) for r, i in zip(chunk, idx)])
            pi = None
        m, v = predict_mixture(model, context, times, protocol.n_samples, rng, pi)
        means.append(m)
        variances.append(v)
    return np.concatenate(means), np.concatenate(variances)


def evaluate(model: NeuralODEProcess, records, protocol: EvalProtocol, mode="lupi", task="") -> EvalReport:
    means, variances = predict_dataset(model, records, protocol, mode)
    targets = np.stack([r.values for r in records])
    per_series = ((means - targets) ** 2).reshape(len(records), -1).mean(axis=1)
    se = float(per_series.std(ddof=1) / np.sqrt(len(records))) if len(records) > 1 else 0.0
    forecasts = ForecastSet(targets, means, np.sqrt(variances))
    levels = default_levels(protocol.n_levels)
    curve = empirical_frequencies(forecasts, levels)
    return EvalReport(
        mse=mse(means, targets),
        mse_se=se,
        calibration_error=calibration_error(forecasts, levels),
        sharpness=sharpness(forecasts),
        levels=curve.levels.tolist(),
        frequencies=curve.frequencies.tolist(),
        n_series=len(records),
        starred=protocol.starred,
        mode=mode,
        task=task,
        seed=protocol.seed,
        series_mse=per_series.tolist(),
    )
