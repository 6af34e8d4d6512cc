"""Monte Carlo tally emulation at a prescribed relative statistical error.

A converged tally estimator is asymptotically normal, so a tally with true
mean ``T`` and relative error ``u`` is drawn as ``T * (1 + u * Z)``.  The
cost of reaching relative error ``u`` scales with the number of histories,
which goes as ``1 / u**2``; cost units are normalized so that ``u = 1 %``
costs 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .problems import (
    ConverterPoint,
    ModeratorPoint,
    ObjectivePair,
    Species,
    channel_truth_array,
    combine_channels_array,
    moderator_truth_array,
)

# Relative error of the moderator's 0.5-10 keV tally relative to the
# 1-100 eV cutoff tally, which converges last.
SECONDARY_TALLY_RATIO = 0.6
# Average cosine aggregates several angular bins.
COSINE_ERROR_RATIO = 0.5
CLAMP_FLOOR = 1e-6
REFERENCE_ERROR = 0.01


@dataclass(frozen=True)
class NoisyEvaluation:
    values: ObjectivePair
    cost_units: float


def check_uncertainty(u):
    u = float(u)
    if not (0.0 < u < 1.0):
        raise ConfigError(f"relative tally uncertainty must be in (0, 1), got {u}")
    return u


def sample_tally(true_value, u, rng):
    """One tally estimate with relative standard error ``u``.

    Estimates are floored at ``1e-6 * true_value`` to stay non-negative.
    """
    u = check_uncertainty(u)
    if true_value < 0:
        raise ValueError(f"true tally value must be non-negative, got {true_value}")
    z = rng.standard_normal()
    if true_value == 0:
        return 0.0
    return max(true_value * (1.0 + u * z), CLAMP_FLOOR * true_value)


def sample_tally_array(true_values, u, z):
    """Vectorized :func:`sample_tally` given pre-drawn standard normals ``z``."""
    u = check_uncertainty(u)
    t = np.asarray(true_values, dtype=float)
    return np.maximum(t * (1.0 + u * np.asarray(z)), CLAMP_FLOOR * t)


def cost_of(u):
    """Cost units to converge a tally to relative error ``u`` (1.0 at 1 %)."""
    u = check_uncertainty(u)
    return (REFERENCE_ERROR / u) ** 2


def simulate_moderator(p: ModeratorPoint, u, rng) -> NoisyEvaluation:
    """Noisy moderator evaluation.

    The 1-100 eV tally carries the stopping criterion, so it is drawn at
    exactly ``u``; the 0.5-10 keV tally is drawn independently at ``0.6 u``.
    """
    truth = moderator_truth_array(p.as_array()[None, :])[0]
    f1 = sample_tally(truth[0], u, rng)
    f2 = sample_tally(truth[1], SECONDARY_TALLY_RATIO * u, rng)
    return NoisyEvaluation(ObjectivePair(f1, f2), cost_of(u))


def simulate_converter(p: ConverterPoint, u, rng) -> NoisyEvaluation:
    """Noisy converter evaluation: one simulation per ion species, then combined.

    Draw order per species is yield then cosine, protons first.
    """
    x = p.as_array()[None, :]
    draws = {}
    for species in (Species.PROTON, Species.DEUTERON):
        y, c = channel_truth_array(x, species)
        y_noisy = sample_tally(float(y[0]), u, rng)
        c_noisy = min(max(sample_tally(float(c[0]), COSINE_ERROR_RATIO * u, rng), 0.0), 1.0)
        draws[species] = (y_noisy, c_noisy)
    (y_p, c_p), (y_d, c_d) = draws[Species.PROTON], draws[Species.DEUTERON]
    f = combine_channels_array(np.array([y_p]), np.array([c_p]), np.array([y_d]), np.array([c_d]))[0]
    return NoisyEvaluation(ObjectivePair(float(f[0]), float(f[1])), 2.0 * cost_of(u))
