"""scikit-learn style wrapper around the model and its training loop.

    >>> est = LupiNDPRegressor(mode="lupi", epochs=5)
    >>> est.fit(times, values, privileged=pi)          # doctest: +SKIP
    >>> mean, std = est.predict(ctx_t, ctx_y, target_t, return_std=True)  # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import N_POINTS, TrajectoryRecord
from .errors import ConfigError
from .evaluation import EvalProtocol, evaluate, predict_mixture
from .model import ModelConfig, ObservationBatch, init_model
from .training import MODES, TrainConfig, train


def check_series(times, values, n_points=None):
    """Validate a stack of series: times ``(S, N)``, values ``(S, N, D)``.

    A single series (1-d times, 2-d values) is promoted to a stack of one.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if times.ndim == 1:
        times = times[None]
        values = values[None] if values.ndim <= 2 else values
    if values.ndim == 2:
        values = values[..., None]
    if times.ndim != 2 or values.ndim != 3 or values.shape[:2] != times.shape:
        raise ValueError(f"times {times.shape} and values {values.shape} are inconsistent")
    if n_points is not None and times.shape[1] != n_points:
        raise ValueError(f"expected {n_points} points per series, got {times.shape[1]}")
    if not (np.isfinite(times).all() and np.isfinite(values).all()):
        raise ValueError("input contains NaN or infinity")
    return times, values


class LupiNDPRegressor(BaseEstimator):
    """Neural ODE process trained with or without privileged information.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`.  With
    ``mode="lupi"`` the privileged values passed to :meth:`fit` correct the
    training posterior; prediction never uses them.
    """

    def __init__(
        self,
        mode="lupi",
        hidden=16,
        rep_dim=8,
        latent_dim=8,
        ode_dim=8,
        substeps=4,
        epochs=100,
        lr=1e-3,
        batch_size=1,
        val_fraction=0.2,
        context_range=(1, 10),
        target_range=(10, 50),
        n_samples=32,
        random_state=0,
    ):
        self.mode = mode
        self.hidden = hidden
        self.rep_dim = rep_dim
        self.latent_dim = latent_dim
        self.ode_dim = ode_dim
        self.substeps = substeps
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.context_range = context_range
        self.target_range = target_range
        self.n_samples = n_samples
        self.random_state = random_state

    def _records(self, times, values, privileged):
        times, values = check_series(times, values, N_POINTS)
        if privileged is None:
            if self.mode == "lupi":
                raise ValueError("mode='lupi' needs privileged values in fit")
            privileged = np.zeros(len(times))
        privileged = np.asarray(privileged, dtype=np.float64).ravel()
        if privileged.shape != (len(times),):
            raise ValueError(f"need one privileged value per series, got {privileged.shape}")
        return [TrajectoryRecord(i, t, y, float(p)) for i, (t, y, p) in enumerate(zip(times, values, privileged))]

    def fit(self, times, values, privileged=None):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        records = self._records(times, values, privileged)
        spacing = float(np.min(np.diff(records[0].times)))
        self.config_ = ModelConfig(
            obs_dim=records[0].obs_dim,
            rep_dim=self.rep_dim,
            latent_dim=self.latent_dim,
            ode_dim=self.ode_dim,
            hidden=self.hidden,
            substeps=self.substeps,
            max_step=spacing / self.substeps,
            time_scale=float(records[0].times[-1]) or 1.0,
        )
        self.model_ = init_model(self.config_, self.random_state)
        train_config = TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            val_fraction=self.val_fraction,
            context_range=self.context_range,
            target_range=self.target_range,
            seed=self.random_state,
        )
        self.loss_trace_ = train(self.model_, records, train_config, self.mode).trace
        return self

    def predict(self, context_times, context_values, target_times, return_std=False, random_state=None):
        """Predictive mean (and standard deviation) at ``target_times``.

        Context is one series (1-d times) or a stack of equally sized ones.
        """
        check_is_fitted(self, "model_")
        ctx_t, ctx_y = check_series(context_times, context_values)
        target_times = np.asarray(target_times, dtype=np.float64)
        context = ObservationBatch.from_sets(list(zip(ctx_t, ctx_y)))
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        mean, var = predict_mixture(self.model_, context, target_times, self.n_samples, rng)
        if np.asarray(context_times).ndim == 1:
            mean, var = mean[0], var[0]
        return (mean, np.sqrt(var)) if return_std else mean

    def score(self, times, values, privileged=None):
        """Negative test MSE under the sparse-context protocol."""
        check_is_fitted(self, "model_")
        records = self._records(times, values, np.zeros(len(np.atleast_2d(times))) if privileged is None else privileged)
        report = evaluate(self.model_, records, EvalProtocol(n_samples=self.n_samples, seed=self.random_state), self.mode)
        return -report.mse
