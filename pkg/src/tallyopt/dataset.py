"""Grid-search training datasets, scaling, splitting and persistence."""

import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emulator import check_uncertainty, simulate_converter, simulate_moderator
from .errors import ConfigError, ParseError
from .problems import (
    BE_RANGE,
    PE_RANGE,
    ConverterPoint,
    Material,
    ModeratorPoint,
    Shape,
    get_problem,
)
from .rng import derive_rng

log = logging.getLogger(__name__)

TEST_FRACTION = 0.15
MIN_SPLIT_SIZE = 20
STD_FLOOR = 1e-12
SIDECAR_VERSION = 1


def grid_moderator():
    """30 Be x 25 PE thicknesses, Be outer: 750 points."""
    # Be steps are exactly 0.003 cm; keep the decimal values exact.
    be_values = [round(0.003 * k, 6) for k in range(1, 31)]
    pe_values = np.linspace(PE_RANGE[0], PE_RANGE[1], 25)
    assert be_values[0] == BE_RANGE[0] and be_values[-1] == BE_RANGE[1]
    return [ModeratorPoint(be, float(pe)) for be in be_values for pe in pe_values]


def grid_converter():
    """2 shapes x 2 materials x 44 heights x 10 radii: 1760 points."""
    heights = [round(0.05 * k, 6) for k in range(1, 45)]
    radii = [round(0.1 * k, 6) for k in range(1, 11)]
    return [
        ConverterPoint(shape, material, h, r)
        for shape in Shape
        for material in Material
        for h in heights
        for r in radii
    ]


def grid_points(problem_id):
    name = get_problem(problem_id).name
    return grid_moderator() if name == "moderator" else grid_converter()


def grid_array(problem_id):
    return np.array([p.as_array() for p in grid_points(problem_id)])


@dataclass
class Dataset:
    """Noisy observations of one problem at one tally uncertainty level."""

    problem_id: str
    u_level: float
    seed: int
    inputs: np.ndarray
    outputs: np.ndarray
    total_cost: float

    def __len__(self):
        return len(self.inputs)

    def to_text(self):
        buf = io.StringIO()
        buf.write(f"# problem={self.problem_id},u_level={self.u_level!r},seed={self.seed},"
                  f"total_cost={self.total_cost!r}\n")
        n_in = self.inputs.shape[1]
        buf.write(",".join([f"in_{i}" for i in range(n_in)] + ["f1", "f2"]) + "\n")
        for x, y in zip(self.inputs.tolist(), self.outputs.tolist()):
            buf.write(",".join(repr(v) for v in x + y) + "\n")
        return buf.getvalue()

    @property
    def hash(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def generate_dataset(problem_id, u, seed):
    """Run the emulated simulation at every grid point.

    Each point draws from its own stream labeled by (problem, point index,
    uncertainty level), so the result does not depend on evaluation order.
    """
    problem = get_problem(problem_id)
    u = check_uncertainty(u)
    if not any(math.isclose(u, lvl) for lvl in problem.default_levels):
        log.warning("u=%g is not one of the %s levels %s", u, problem.name, problem.default_levels)
    simulate = simulate_moderator if problem.name == "moderator" else simulate_converter
    points = grid_points(problem.name)
    inputs = np.array([p.as_array() for p in points])
    outputs = np.empty((len(points), 2))
    costs = []
    for i, p in enumerate(points):
        ev = simulate(p, u, derive_rng(seed, "tally", problem.name, i, u))
        outputs[i] = ev.values.f1, ev.values.f2
        costs.append(ev.cost_units)
    return Dataset(problem.name, u, int(seed), inputs, outputs, math.fsum(costs))


def save_dataset(ds: Dataset, path):
    Path(path).write_text(ds.to_text(), encoding="utf-8")


def _parse_meta(line):
    if not line.startswith("#"):
        raise ParseError("missing '#' metadata line", line=1)
    meta = {}
    for item in line[1:].strip().split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"malformed metadata entry {item!r}", line=1)
        meta[key.strip()] = value.strip()
    missing = {"problem", "u_level", "seed", "total_cost"} - set(meta)
    if missing:
        raise ParseError(f"metadata lacks {sorted(missing)}", line=1)
    return meta


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise ParseError("file too short", line=len(lines) + 1)
    meta = _parse_meta(lines[0])
    header = lines[1].split(",")
    n_in = len(header) - 2
    expected = [f"in_{i}" for i in range(n_in)] + ["f1", "f2"]
    if n_in < 1 or header != expected:
        raise ParseError(f"header {lines[1]!r} does not match in_0,...,in_k,f1,f2", line=2)
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(f"row has {len(cells)} columns, expected {len(header)}", line=lineno)
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if not np.all(np.isfinite(data[:, n_in:])):
        raise ParseError("non-finite output value")
    try:
        problem = get_problem(meta["problem"]).name
        return Dataset(problem, float(meta["u_level"]), int(meta["seed"]),
                       data[:, :n_in].copy(), data[:, n_in:].copy(), float(meta["total_cost"]))
    except ValueError as exc:
        raise ParseError(f"bad metadata: {exc}", line=1) from None


@dataclass
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def fit_scaler(values, rows=None) -> ScalerParams:
    """Per-column mean and (population) standard deviation over ``rows``."""
    values = np.asarray(values, dtype=float)
    if rows is not None:
        values = values[np.asarray(rows)]
    if len(values) == 0:
        raise ConfigError("cannot fit a scaler on an empty training set")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return ScalerParams(mean, std)


@dataclass
class SplitIndex:
    train_indices: np.ndarray
    test_indices: np.ndarray
    test_fraction: float = TEST_FRACTION

    def to_dict(self):
        return {
            "test_fraction": self.test_fraction,
            "train_indices": self.train_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["train_indices"], dtype=np.int64),
                   np.array(d["test_indices"], dtype=np.int64), float(d["test_fraction"]))


def n_test_rows(n, test_fraction=TEST_FRACTION):
    # Half rounds up: 0.15 * 750 = 112.5 -> 113.
    return int(math.floor(test_fraction * n + 0.5 + 1e-9))


def split(n_or_dataset, seed, test_fraction=TEST_FRACTION) -> SplitIndex:
    """Seeded random permutation; the last ``round(0.15 N)`` indices are test rows."""
    n = len(n_or_dataset) if not isinstance(n_or_dataset, (int, np.integer)) else int(n_or_dataset)
    if n < MIN_SPLIT_SIZE:
        raise ConfigError(f"need at least {MIN_SPLIT_SIZE} samples to split, got {n}")
    perm = derive_rng(seed, "split").permutation(n)
    n_test = n_test_rows(n, test_fraction)
    return SplitIndex(perm[: n - n_test], perm[n - n_test:], test_fraction)


@dataclass
class PreparedData:
    """Dataset plus its split and train-fitted scalers."""

    dataset: Dataset
    split: SplitIndex
    input_scaler: ScalerParams
    output_scaler: ScalerParams
    dataset_hash: str = field(default="")

    def __post_init__(self):
        if not self.dataset_hash:
            self.dataset_hash = self.dataset.hash

    def scaled(self):
        """(x_train, y_train, x_test, y_test) in scaled space."""
        x = self.input_scaler.transform(self.dataset.inputs)
        y = self.output_scaler.transform(self.dataset.outputs)
        tr, te = self.split.train_indices, self.split.test_indices
        return x[tr], y[tr], x[te], y[te]


def prepare(ds: Dataset, seed) -> PreparedData:
    sp = split(ds, seed)
    return PreparedData(
        ds, sp,
        fit_scaler(ds.inputs, sp.train_indices),
        fit_scaler(ds.outputs, sp.train_indices),
    )


def save_sidecar(prep: PreparedData, path):
    doc = {
        "version": SIDECAR_VERSION,
        "dataset_hash": prep.dataset_hash,
        "split": prep.split.to_dict(),
        "input_scaler": prep.input_scaler.to_dict(),
        "output_scaler": prep.output_scaler.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_sidecar(path, ds: Dataset) -> PreparedData:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"sidecar is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if doc.get("version") != SIDECAR_VERSION:
        raise ParseError(f"unsupported sidecar version {doc.get('version')!r}")
    if doc.get("dataset_hash") != ds.hash:
        raise ParseError("sidecar was written for a different dataset (hash mismatch)")
    return PreparedData(
        ds, SplitIndex.from_dict(doc["split"]),
        ScalerParams.from_dict(doc["input_scaler"]),
        ScalerParams.from_dict(doc["output_scaler"]),
        doc["dataset_hash"],
    )
