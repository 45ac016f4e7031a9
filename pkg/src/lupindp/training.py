"""Variational objective, context/target subsampling and the epoch loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, IntegrationError, NonFiniteError, TrainingError
from .model import NeuralODEProcess, ObservationBatch
from .nn import Adam
from .tensor import Tape

log = logging.getLogger(__name__)

MODES = ("lupi", "nopi")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 1
    val_fraction: float = 0.2
    context_range: tuple = (1, 10)
    target_range: tuple = (10, 50)
    seed: int = 0

    def __post_init__(self):
        self.context_range = tuple(int(x) for x in self.context_range)
        self.target_range = tuple(int(x) for x in self.target_range)
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        lo, hi = self.context_range
        tlo, thi = self.target_range
        if not (1 <= lo <= hi and 1 <= tlo <= thi):
            raise ConfigError(f"bad size ranges {self.context_range}, {self.target_range}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ContextTargetSplit:
    context: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if len(self.context) == 0:
            raise ContractError("context index set is empty")
        if len(np.unique(self.target)) != len(self.target):
            raise ContractError("target indices are not unique")
        if not np.isin(self.context, self.target).all():
            raise ContractError("context indices must be a subset of the target indices")


def sample_split(n_points, rng, context_range=(1, 10), target_range=(10, 50)) -> ContextTargetSplit:
    """|I_T| ~ U{target_range}, I_T uniform without replacement; I_C a uniform subset of I_T."""
    tlo, thi = target_range
    if n_points < thi:
        raise ConfigError(f"series of {n_points} points cannot supply {thi} targets")
    n_t = int(rng.integers(tlo, thi + 1))
    target = np.sort(rng.choice(n_points, size=n_t, replace=False))
    clo, chi = context_range
    n_c = int(rng.integers(min(clo, n_t), min(chi, n_t) + 1))
    context = np.sort(rng.choice(target, size=n_c, replace=False))
    return ContextTargetSplit(context, target)


def _targets_on_grid(records, splits):
    """Union time grid and the dense (B, U, obs) targets with a 0/1 mask."""
    grid = np.unique(np.concatenate([r.times[s.target] for r, s in zip(records, splits)]))
    obs_dim = records[0].values.shape[1]
    y = np.zeros((len(records), len(grid), obs_dim))
    w = np.zeros((len(records), len(grid), 1))
    for b, (r, s) in enumerate(zip(records, splits)):
        pos = np.searchsorted(grid, r.times[s.target])
        y[b, pos] = r.values[s.target]
        w[b, pos] = 1.0
    return grid, y, w


def elbo_loss(model: NeuralODEProcess, records, splits, mode, rng, return_parts=False):
    """Negative objective averaged over the batch.

    Per series: KL(q(z|T, pi) || q(z|C)) minus the target log-likelihood under
    one reparameterised draw from q(z|T, pi).  In ``nopi`` mode the posterior
    drops pi, which leaves the privileged networks off the tape entirely.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if not records:
        raise ContractError("empty batch")
    targets = ObservationBatch.from_sets([(r.times[s.target], r.values[s.target]) for r, s in zip(records, splits)])
    context = ObservationBatch.from_sets([(r.times[s.context], r.values[s.context]) for r, s in zip(records, splits)])
    pi = np.array([r.pi for r in records]) if mode == "lupi" else None
    q = model.posterior(targets, pi)
    q_ctx = model.posterior(context)
    z = T.reparameterized_sample(q, rng)
    grid, y, w = _targets_on_grid(records, splits)
    mean, scale = model.decode(z, grid)
    nll = T.neg(T.gaussian_log_pdf(y, mean, scale, weight=w))
    kl = T.kl_diag_gaussians(q, q_ctx)
    loss = T.mul(T.add(kl, nll), 1.0 / len(records))
    if return_parts:
        return loss, kl, nll
    return loss


@dataclass
class TrainResult:
    trace: list = field(default_factory=list)
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for epoch, tr, va in self.trace:
                writer.writerow([epoch, format(tr, ".17g"), format(va, ".17g")])


def split_train_val(n, val_fraction, rng):
    order = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def _batches(ids, size):
    return [ids[i : i + size] for i in range(0, len(ids), size)]


def validation_loss(model, records, splits, mode, seed, batch_size):
    if not records:
        return float("nan")
    rng = np.random.default_rng(seed)
    total = 0.0
    for idx in _batches(list(range(len(records))), batch_size):
        loss = elbo_loss(model, [records[i] for i in idx], [splits[i] for i in idx], mode, rng)
        total += loss.item() * len(idx)
    return total / len(records)


def train(model: NeuralODEProcess, records, config: TrainConfig, mode="lupi", callback=None) -> TrainResult:
    """Fit ``model`` in place with Adam for the full epoch budget.

    No early stopping; the validation trace is for monitoring only.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if not records:
        raise ConfigError("empty training set")
    split_seq, shuffle_seq, val_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(4)
    train_ids, val_ids = split_train_val(len(records), config.val_fraction, np.random.default_rng(split_seq))
    if not train_ids:
        raise ConfigError("no training series left after the validation split")
    n_points = len(records[0].times)
    val_rng = np.random.default_rng(val_seq)
    val_records = [records[i] for i in val_ids]
    val_splits = [sample_split(n_points, val_rng, config.context_range, config.target_range) for _ in val_ids]
    val_noise_seed = int(val_rng.integers(2**63))

    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    opt = Adam(model.parameters(), lr=config.lr)
    result = TrainResult(train_ids=train_ids, val_ids=val_ids)

    for epoch in range(1, config.epochs + 1):
        order = [train_ids[i] for i in shuffle_rng.permutation(len(train_ids))]
        losses = []
        for b, idx in enumerate(_batches(order, config.batch_size)):
            batch = [records[i] for i in idx]
            splits = [sample_split(n_points, shuffle_rng, config.context_range, config.target_range) for _ in idx]
            opt.zero_grad()
            try:
                with Tape() as tape:
                    loss = elbo_loss(model, batch, splits, mode, noise_rng)
                    tape.backward(loss)
            except (NonFiniteError, IntegrationError) as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            for name, p in model.named_parameters():
                if p.grad is not None and not np.isfinite(p.grad).all():
                    raise TrainingError(f"non-finite gradient for {name} at epoch {epoch}, batch {b}")
            opt.step()
            losses.append(loss.item() * len(idx))
        train_loss = float(np.sum(losses) / len(train_ids))
        try:
            val_loss = validation_loss(model, val_records, val_splits, mode, val_noise_seed, config.batch_size)
        except (NonFiniteError, IntegrationError) as exc:
            raise TrainingError(f"non-finite validation loss at epoch {epoch}: {exc}") from exc
        result.trace.append((epoch, train_loss, val_loss))
        log.info("epoch %d train %.4f val %.4f", epoch, train_loss, val_loss)
        if callback is not None:
            callback(epoch, train_loss, val_loss)
    return result
