"""Neural ODE Process with a privileged-information training path.

Both the LUPI and the NoPI variants share this architecture; they differ
only in whether the privileged value is fused into the target-set
representation during training.  At test time neither uses it, so a trained
model is an ordinary neural ODE process.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, DomainError
from .nn import GaussianHeads, Mlp, positive_scale
from .odeint import check_grid, rk4_solve_mlp
from .tensor import LatentDistribution, Tensor


@dataclass
class ModelConfig:
    obs_dim: int = 2
    rep_dim: int = 8
    pi_dim: int = 1
    pi_rep_dim: int = 8
    latent_dim: int = 8
    ode_dim: int = 8
    hidden: int = 16
    substeps: int = 4
    max_step: float | None = None
    time_scale: float | None = None

    def __post_init__(self):
        for name in ("obs_dim", "rep_dim", "pi_dim", "pi_rep_dim", "latent_dim", "ode_dim", "substeps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.hidden < 4:
            raise ConfigError("hidden width below 4 is not trainable")
        for name in ("max_step", "time_scale"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def agg_dim(self):
        return 2 * self.rep_dim

    def to_dict(self):
        return asdict(self)


@dataclass
class ObservationBatch:
    """A batch of observation sets padded to a common size.

    ``times`` is ``(B, N)``, ``values`` is ``(B, N, obs_dim)`` and ``mask``
    marks the real (1) versus padded (0) entries.
    """

    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_sets(cls, sets):
        sets = [(np.asarray(t, dtype=np.float64), np.asarray(y, dtype=np.float64)) for t, y in sets]
        if not sets:
            raise ContractError("empty batch")
        sizes = [len(t) for t, _ in sets]
        if min(sizes) == 0:
            raise ContractError("every observation set must be nonempty")
        ys = [y[:, None] if y.ndim == 1 else y for _, y in sets]
        dim = ys[0].shape[1]
        n = max(sizes)
        times = np.zeros((len(sets), n))
        values = np.zeros((len(sets), n, dim))
        mask = np.zeros((len(sets), n))
        for b, ((t, _), y) in enumerate(zip(sets, ys)):
            if y.shape != (len(t), dim):
                raise DimensionError(f"set {b}: values {y.shape} do not match {len(t)} times")
            times[b, : len(t)] = t
            values[b, : len(t)] = y
            mask[b, : len(t)] = 1.0
        if not (np.isfinite(times).all() and np.isfinite(values).all()):
            raise DomainError("observations must be finite")
        return cls(times, values, mask)

    def __len__(self):
        return self.times.shape[0]


class NeuralODEProcess:
    """Parameters and forward computations of the (LUPI-)NDP."""

    def __init__(self, config: ModelConfig | None = None, rng=None):
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(0) if rng is None else rng
        h = config.hidden
        self.f_obs = Mlp([1 + config.obs_dim, h, h, config.rep_dim], "relu", rng)
        self.f_pi = Mlp([config.pi_dim, h, h, config.pi_rep_dim], "relu", rng)
        self.g_res = Mlp([config.agg_dim + config.pi_rep_dim, h, h, config.agg_dim], "relu", rng)
        self.latent = GaussianHeads(config.agg_dim, h, config.latent_dim, rng)
        self.f_init = Mlp([config.latent_dim, h, h, config.ode_dim], "relu", rng)
        self.f_ode = Mlp([config.ode_dim + config.latent_dim + 1, h, h, config.ode_dim], "softplus", rng)
        self.f_dec = Mlp([config.ode_dim + config.latent_dim, h, h, 2 * config.obs_dim], "relu", rng)

    # -- parameters --------------------------------------------------------

    def named_parameters(self):
        for name in ("f_obs", "f_pi", "g_res", "f_init", "f_ode", "f_dec", "latent"):
            yield from getattr(self, name).named_parameters(name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def privileged_parameters(self):
        """Parameters only reachable through the privileged-information path."""
        return self.f_pi.parameters() + self.g_res.parameters()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ContractError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != params[name].shape:
                raise DimensionError(f"{name}: expected shape {params[name].shape}, got {value.shape}")
            params[name].data = value.copy()

    # -- encoder side ------------------------------------------------------

    def encode_observations(self, obs: ObservationBatch) -> Tensor:
        """Per-observation representations, shape ``(B, N, rep_dim)``."""
        if obs.values.shape[-1] != self.config.obs_dim:
            raise DimensionError(f"observations have dim {obs.values.shape[-1]}, model expects {self.config.obs_dim}")
        b, n = obs.times.shape
        # times enter the encoder in units of the series span so that they do
        # not swamp the observed values
        scale = self.config.time_scale or 1.0
        x = np.concatenate([obs.times[..., None] / scale, obs.values], axis=-1).reshape(b * n, -1)
        return T.reshape(self.f_obs(x), (b, n, self.config.rep_dim))

    @staticmethod
    def aggregate(reps: Tensor, mask=None) -> Tensor:
        """Mean concatenated with logsumexp over the set axis."""
        if reps.shape[-2] == 0:
            raise ContractError("cannot aggregate an empty set")
        m = None if mask is None else np.asarray(mask, dtype=np.float64)[..., None]
        return T.concat([T.mean(reps, axis=-2, mask=m), T.logsumexp(reps, axis=-2, mask=m)], axis=-1)

    def encode_privileged(self, pi) -> Tensor:
        pi = np.asarray(pi, dtype=np.float64).reshape(-1, self.config.pi_dim)
        if not np.isfinite(pi).all():
            raise DomainError("privileged information must be finite")
        return self.f_pi(pi)

    def fuse(self, r_obs: Tensor, r_pi: Tensor | None = None) -> Tensor:
        """Residual correction of the observation representation.

        Without ``r_pi`` the observation representation is returned as is.
        """
        if r_obs.shape[-1] != self.config.agg_dim:
            raise ContractError(f"representation has dim {r_obs.shape[-1]}, expected {self.config.agg_dim}")
        if r_pi is None:
            return r_obs
        if r_pi.shape[0] != r_obs.shape[0]:
            raise ContractError("representation batch sizes differ")
        return T.add(r_obs, self.g_res(T.concat([r_obs, r_pi], axis=-1)))

    def latent_params(self, r: Tensor) -> LatentDistribution:
        mu, sigma = self.latent(r)
        return LatentDistribution(mu, sigma)

    def posterior(self, obs: ObservationBatch, pi=None) -> LatentDistribution:
        """q(z | obs, pi); with ``pi=None`` this is the test-time path."""
        r = self.aggregate(self.encode_observations(obs), obs.mask)
        r_pi = None if pi is None else self.encode_privileged(pi)
        return self.latent_params(self.fuse(r, r_pi))

    # -- decoder side ------------------------------------------------------

    def ode_field(self, t, state, z):
        tcol = np.full((state.shape[0], 1), t)
        return self.f_ode(T.concat([state, z, tcol], axis=-1))

    def decode(self, z, times):
        """Predictive mean and scale at absolute ``times``, each ``(B, len(times), obs_dim)``.

        The latent state starts at t = 0 from ``f_init(z)``.
        """
        z = T.as_tensor(z)
        times = check_grid(times)
        if times[0] < 0:
            raise ConfigError("target times must be non-negative; the latent clock starts at 0")
        grid = times if times[0] == 0 else np.concatenate([[0.0], times])
        cfg = self.config
        states = rk4_solve_mlp(self.f_ode.layers, self.f_ode.activation, self.f_init(z), z, grid, cfg.substeps, cfg.max_step)
        if times[0] != 0:
            states = T.take(states, (slice(None), slice(1, None)))
        b, n = z.shape[0], len(times)
        traj = T.reshape(states, (b * n, cfg.ode_dim))
        zrep = T.take(z, np.repeat(np.arange(b), n))
        out = T.reshape(self.f_dec(T.concat([traj, zrep], axis=-1)), (b, n, 2 * cfg.obs_dim))
        mean = T.take(out, (Ellipsis, slice(0, cfg.obs_dim)))
        scale = positive_scale(T.take(out, (Ellipsis, slice(cfg.obs_dim, None))))
        return mean, scale

    def forward(self, context: ObservationBatch, target_times, pi=None, rng=None, sample=True):
        """Full pass: latent distribution and predictive Gaussians at ``target_times``.

        With ``sample=False`` the latent mean is decoded instead of a draw.
        """
        dist = self.posterior(context, pi)
        if sample:
            rng = np.random.default_rng() if rng is None else rng
            z = T.reparameterized_sample(dist, rng)
        else:
            z = dist.mu
        return dist, self.decode(z, target_times)


def init_model(config: ModelConfig, seed: int) -> NeuralODEProcess:
    """Freshly initialised model; the same (config, seed) gives the same weights."""
    return NeuralODEProcess(config, np.random.default_rng(seed))
