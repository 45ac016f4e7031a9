"""Accuracy, calibration and sharpness of Gaussian regression forecasts.

Calibration follows the quantile definition for regression: a forecaster is
calibrated when the fraction of targets with predictive CDF value at most
``p`` approaches ``p`` for every confidence level.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, ContractError, DomainError


def default_levels(m=19):
    """Uniform confidence levels j / (m + 1), j = 1..m."""
    return np.arange(1, m + 1) / (m + 1)


@dataclass
class ForecastSet:
    """Pooled scalar forecasts: target, predictive mean and predictive scale."""

    targets: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64).ravel()
        self.means = np.asarray(self.means, dtype=np.float64).ravel()
        self.scales = np.asarray(self.scales, dtype=np.float64).ravel()
        if not (self.targets.size == self.means.size == self.scales.size):
            raise ContractError("targets, means and scales must have equal counts")
        if self.targets.size == 0:
            raise ContractError("empty forecast set")
        if not (self.scales > 0).all():
            raise DomainError("predictive scales must be strictly positive")

    def __len__(self):
        return self.targets.size

    def cdf_values(self):
        return ndtr((self.targets - self.means) / self.scales)


@dataclass
class CalibrationCurve:
    levels: np.ndarray
    frequencies: np.ndarray

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["level", "empirical_frequency"])
            for p, f in zip(self.levels, self.frequencies):
                writer.writerow([format(p, ".17g"), format(f, ".17g")])


def mse(means, targets) -> float:
    means = np.asarray(means, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if means.size != targets.size:
        raise ContractError("means and targets must have equal counts")
    if means.size == 0:
        raise ContractError("mse of an empty set")
    return float(np.mean((means - targets) ** 2))


def _check_levels(levels):
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0:
        raise ConfigError("levels must be a nonempty 1-d sequence")
    if not ((levels > 0).all() and (levels <= 1).all() and (np.diff(levels) > 0).all()):
        raise ConfigError("levels must be strictly increasing in (0, 1]")
    return levels


def empirical_frequencies(f: ForecastSet, levels=None) -> CalibrationCurve:
    """Fraction of forecasts whose CDF at the target is at most each level."""
    levels = _check_levels(default_levels() if levels is None else levels)
    cdf = np.sort(f.cdf_values())
    counts = np.searchsorted(cdf, levels, side="right")
    return CalibrationCurve(levels, counts / len(f))


def calibration_error(f: ForecastSet, levels=None) -> float:
    """Sum over levels of the squared gap between level and empirical frequency."""
    curve = empirical_frequencies(f, levels)
    return float(np.sum((curve.levels - curve.frequencies) ** 2))


def sharpness(f: ForecastSet) -> float:
    """Mean predictive variance."""
    return float(np.mean(f.scales**2))
