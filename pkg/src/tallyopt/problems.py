"""Synthetic ground-truth design problems.

Two analytic stand-ins for the transport-simulated design problems:

* a layered neutron moderator (Be and polyethylene thicknesses) with two
  back-scattered flux objectives in different energy windows, and
* an ion-to-neutron converter (shape, material, height, base radius) whose
  proton and deuteron channels are combined into total yield and average
  emission cosine.

Both objectives are maximized.  The array functions (``*_truth_array``)
take an ``(n, d)`` matrix of design points and are what the rest of the
package uses; the scalar functions wrap them for single points.
"""

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError

# Pb layer is fixed at saturation thickness and is not a design variable.
PB_THICKNESS_CM = 10.0

BE_RANGE = (0.003, 0.09)
PE_RANGE = (0.75, 2.5)
HEIGHT_RANGE = (0.05, 2.2)
RADIUS_RANGE = (0.1, 1.0)

_BOUNDS_TOL = 1e-9


class Shape(enum.IntEnum):
    CYLINDER = 0
    CONE = 1


class Material(enum.IntEnum):
    BE = 0
    LIF = 1


class Species(enum.Enum):
    PROTON = "proton"
    DEUTERON = "deuteron"


# Ions per laser pulse in the measured beam.
ION_COUNT = {Species.PROTON: 1.1e13, Species.DEUTERON: 3.3e12}
# Benchmark constants of the converter stand-in.
_YIELD_PER_ION = {Species.PROTON: 1.0e-4, Species.DEUTERON: 5.0e-4}
_COSINE_OFFSET = {Species.PROTON: 0.0, Species.DEUTERON: -0.02}
_ATTENUATION_CM = {Material.BE: 0.9, Material.LIF: 1.4}
_SHAPE_FACTOR = {Shape.CYLINDER: 1.0, Shape.CONE: 0.8}
_CAPTURE_RADIUS_CM = 0.35

# Be contributes a few percent of the low-energy yield.
_BE_GAIN_LOW = 0.0426
_BE_GAIN_HIGH = 0.0100


@dataclass(frozen=True)
class ModeratorPoint:
    be_thickness: float
    pe_thickness: float

    def as_array(self):
        return np.array([self.be_thickness, self.pe_thickness], dtype=float)


@dataclass(frozen=True)
class ConverterPoint:
    shape: Shape
    material: Material
    height: float
    radius: float

    def as_array(self):
        return np.array([int(self.shape), int(self.material), self.height, self.radius], dtype=float)

    @classmethod
    def from_array(cls, row):
        return cls(Shape(int(round(row[0]))), Material(int(round(row[1]))), float(row[2]), float(row[3]))


@dataclass(frozen=True)
class ObjectivePair:
    f1: float
    f2: float

    def as_array(self):
        return np.array([self.f1, self.f2], dtype=float)


@dataclass(frozen=True)
class ChannelYield:
    yield_: float
    cosine: float
    ion_count: float


def uncollided_flux(phi0, sigma_t, x, mu):
    """Uncollided flux after a slab of thickness ``x``: phi0 * exp(-sigma_t x / mu).

    Documents why the Pb layer saturates and is dropped as an input.
    """
    if mu <= 0 or mu > 1:
        raise DomainError(f"direction cosine must be in (0, 1], got {mu}")
    if phi0 < 0 or sigma_t < 0 or x < 0:
        raise DomainError("phi0, sigma_t and x must be non-negative")
    return phi0 * math.exp(-sigma_t * x / mu)


def angular_source_pdf(x, y):
    """Fitted 2D Gaussian angular profile of the ion beam (angles in radians)."""
    return 0.3164 * np.exp(-(np.square(x) + np.square(y)) / (2.0 * 1.2642**2))


def rise_fall(t, tau):
    """Unimodal response (t/tau) exp(1 - t/tau), peaking at 1 when t = tau."""
    r = np.asarray(t, dtype=float) / tau
    return r * np.exp(1.0 - r)


def _check_bounds(values, lo, hi, name):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values) | (values < lo - _BOUNDS_TOL) | (values > hi + _BOUNDS_TOL)
    if np.any(bad):
        v = values[bad].ravel()[0]
        raise DomainError(f"{name}={v!r} outside [{lo}, {hi}]")


def moderator_truth_array(x):
    """Objectives for an ``(n, 2)`` array of (be, pe) thicknesses in cm."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 2:
        raise DomainError(f"moderator points have 2 inputs, got {x.shape[1]}")
    be, pe = x[:, 0], x[:, 1]
    _check_bounds(be, *BE_RANGE, "be_thickness")
    _check_bounds(pe, *PE_RANGE, "pe_thickness")
    be_frac = be / BE_RANGE[1]
    f1 = 1.0e-4 * (1.0 + _BE_GAIN_LOW * be_frac) * rise_fall(pe, 2.2)
    f2 = 3.0e-4 * (1.0 + _BE_GAIN_HIGH * be_frac) * rise_fall(pe, 1.0)
    return np.column_stack([f1, f2])


def moderator_truth(p: ModeratorPoint) -> ObjectivePair:
    f = moderator_truth_array(p.as_array()[None, :])[0]
    return ObjectivePair(float(f[0]), float(f[1]))


def _converter_columns(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 4:
        raise DomainError(f"converter points have 4 inputs, got {x.shape[1]}")
    shape, material, height, radius = x.T
    for col, name in ((shape, "shape"), (material, "material")):
        if np.any((col != 0.0) & (col != 1.0)):
            raise DomainError(f"{name} must be encoded as 0 or 1")
    _check_bounds(height, *HEIGHT_RANGE, "height")
    _check_bounds(radius, *RADIUS_RANGE, "radius")
    return shape, material, height, radius


def channel_truth_array(x, species: Species):
    """Per-species (yield, cosine) columns for an ``(n, 4)`` converter array."""
    shape, material, height, radius = _converter_columns(x)
    atten = np.where(material == Material.LIF, _ATTENUATION_CM[Material.LIF], _ATTENUATION_CM[Material.BE])
    shape_factor = np.where(shape == Shape.CONE, _SHAPE_FACTOR[Shape.CONE], _SHAPE_FACTOR[Shape.CYLINDER])
    capture = 1.0 - np.exp(-((radius / _CAPTURE_RADIUS_CM) ** 2))
    y = ION_COUNT[species] * _YIELD_PER_ION[species] * shape_factor * capture * (1.0 - np.exp(-height / atten))
    cosine = 0.35 + 0.45 * np.exp(-height / 0.9) - 0.12 * radius + 0.05 * shape + _COSINE_OFFSET[species]
    return y, np.clip(cosine, 0.0, 1.0)


def combine_channels_array(y_p, c_p, y_d, c_d):
    total = y_p + y_d
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = np.where(total > 0, (y_p * c_p + y_d * c_d) / np.where(total > 0, total, 1.0), 0.0)
    return np.column_stack([total, cosine])


def converter_channel_truth(p: ConverterPoint, species: Species) -> ChannelYield:
    y, c = channel_truth_array(p.as_array()[None, :], species)
    return ChannelYield(float(y[0]), float(c[0]), ION_COUNT[species])


def combine_channels(proton: ChannelYield, deuteron: ChannelYield) -> ObjectivePair:
    """Total yield and yield-weighted average cosine of the two ion channels."""
    f = combine_channels_array(
        np.array([proton.yield_]), np.array([proton.cosine]),
        np.array([deuteron.yield_]), np.array([deuteron.cosine]),
    )[0]
    return ObjectivePair(float(f[0]), float(f[1]))


def converter_truth_array(x):
    """(total yield, average cosine) for an ``(n, 4)`` array of
    (shape, material, height, radius) rows."""
    y_p, c_p = channel_truth_array(x, Species.PROTON)
    y_d, c_d = channel_truth_array(x, Species.DEUTERON)
    return combine_channels_array(y_p, c_p, y_d, c_d)


def converter_truth(p: ConverterPoint) -> ObjectivePair:
    return combine_channels(
        converter_channel_truth(p, Species.PROTON),
        converter_channel_truth(p, Species.DEUTERON),
    )


@dataclass(frozen=True)
class Problem:
    """Design space and ground truth of one benchmark.

    ``categorical`` marks genes that take integer category codes
    ``0 .. n_categories-1``; for those, ``lower``/``upper`` hold the code range.
    """

    name: str
    feature_names: tuple
    lower: tuple
    upper: tuple
    categorical: tuple
    truth: Callable
    default_levels: tuple
    objective_names: tuple = ("f1", "f2")

    @property
    def n_inputs(self):
        return len(self.feature_names)

    @property
    def lower_array(self):
        return np.array(self.lower, dtype=float)

    @property
    def upper_array(self):
        return np.array(self.upper, dtype=float)

    @property
    def categorical_mask(self):
        return np.array(self.categorical, dtype=bool)


MODERATOR = Problem(
    name="moderator",
    feature_names=("be_thickness", "pe_thickness"),
    lower=(BE_RANGE[0], PE_RANGE[0]),
    upper=(BE_RANGE[1], PE_RANGE[1]),
    categorical=(False, False),
    truth=moderator_truth_array,
    default_levels=(0.10, 0.075, 0.05, 0.03, 0.01),
    objective_names=("flux_1_100eV", "flux_0.5_10keV"),
)

CONVERTER = Problem(
    name="converter",
    feature_names=("shape", "material", "height", "radius"),
    lower=(0.0, 0.0, HEIGHT_RANGE[0], RADIUS_RANGE[0]),
    upper=(1.0, 1.0, HEIGHT_RANGE[1], RADIUS_RANGE[1]),
    categorical=(True, True, False, False),
    truth=converter_truth_array,
    default_levels=(0.05, 0.035, 0.02, 0.01, 0.002),
    objective_names=("total_yield", "average_cosine"),
)

PROBLEMS = {MODERATOR.name: MODERATOR, CONVERTER.name: CONVERTER}


def get_problem(name) -> Problem:
    try:
        return PROBLEMS[str(name).lower()]
    except KeyError:
        raise DomainError(f"unknown problem {name!r}; expected one of {sorted(PROBLEMS)}") from None
