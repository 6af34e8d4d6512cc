"""Study configuration: YAML file, CLI flags and dotted overrides.

Precedence (lowest to highest): built-in defaults, the config file, the
named CLI flags (``--seed``, ``--repeats`` ...), then ``--a.b VALUE``
overrides.  See docs/config.md for the schema.
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .nsga3 import Nsga3Config
from .problems import get_problem
from .surrogate import make_grid

GRID_PRESETS = {
    "full": {"layers": [1, 4, 7, 10], "neurons": [100, 400, 700, 1000],
             "learning_rates": [1e-3, 4e-4, 1e-4], "batch_sizes": [1, 2, 4]},
    "reduced": {"layers": [1, 4], "neurons": [100, 400],
                "learning_rates": [1e-3, 1e-4], "batch_sizes": [4]},
}

DEFAULTS = {
    "problem": "moderator",
    "levels": None,
    "seed": 0,
    "repeats": 1,
    "jobs": 1,
    "out": "tallyopt_out",
    "tuning": {
        "grid": "full",
        "layers": None,
        "neurons": None,
        "learning_rates": None,
        "batch_sizes": None,
        "max_epochs": 200,
        "patience": 20,
    },
    "nsga": {
        "population": 100,
        "generations": 100,
        "crossover_alpha": 0.5,
        "crossover_prob": 0.7,
        "mutation_prob": 0.2,
        "mutation_limits": [0.01, 0.5],
        "divisions": 99,
    },
}


@dataclass(frozen=True)
class TuningConfig:
    grid: str = "full"
    layers: tuple = ()
    neurons: tuple = ()
    learning_rates: tuple = ()
    batch_sizes: tuple = ()
    max_epochs: int = 200
    patience: int = 20

    def configs(self):
        return make_grid(self.layers, self.neurons, self.learning_rates, self.batch_sizes,
                         max_epochs=self.max_epochs, patience=self.patience)


@dataclass(frozen=True)
class StudyConfig:
    problem: str
    levels: tuple
    seed: int
    repeats: int
    jobs: int
    out: str
    tuning: TuningConfig
    nsga: Nsga3Config
    raw: dict = field(default=None, compare=False, repr=False)

    def grid(self):
        return self.tuning.configs()

    def fingerprint(self, *sections):
        """Hash of the named top-level config sections (stable across runs)."""
        doc = {k: self.raw[k] for k in sections}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _merge(base, update, path=""):
    for key, value in update.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{dotted}: unknown configuration key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted}: expected a mapping")
            _merge(base[key], value, dotted + ".")
        else:
            base[key] = value
    return base


def set_dotted(doc, dotted, value):
    parts = dotted.split(".")
    node = doc
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"{'.'.join(parts[:i + 1])}: unknown configuration section")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"{dotted}: unknown configuration key")
    node[parts[-1]] = value


def _int(path, v, minimum=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {v}")
    return v


def _float(path, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _list(path, v, conv):
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(f"{path}: expected a non-empty list, got {v!r}")
    return tuple(conv(f"{path}[{i}]", x) for i, x in enumerate(v))


def build_config(doc) -> StudyConfig:
    """Validate a merged config mapping and build the typed config."""
    try:
        problem = get_problem(doc["problem"])
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from None
    levels = doc["levels"]
    levels = problem.default_levels if levels is None else _list("levels", levels, _float)
    for i, u in enumerate(levels):
        if not 0 < u < 1:
            raise ConfigError(f"levels[{i}]: tally uncertainty must be in (0, 1), got {u}")
    if len(set(levels)) != len(levels):
        raise ConfigError("levels: duplicate uncertainty levels")
    levels = tuple(sorted(levels, reverse=True))

    t = doc["tuning"]
    grid = t["grid"]
    if grid not in ("full", "reduced", "custom"):
        raise ConfigError(f"tuning.grid: expected full, reduced or custom, got {grid!r}")
    lists = {}
    for key, conv in (("layers", _int), ("neurons", _int), ("learning_rates", _float), ("batch_sizes", _int)):
        value = t[key] if grid == "custom" else GRID_PRESETS[grid][key]
        if value is None:
            raise ConfigError(f"tuning.{key}: required when tuning.grid is custom")
        lists[key] = _list(f"tuning.{key}", value, conv)
    tuning = TuningConfig(grid, max_epochs=_int("tuning.max_epochs", t["max_epochs"], 1),
                          patience=_int("tuning.patience", t["patience"], 1), **lists)
    try:
        tuning.configs()
    except ValueError as exc:
        raise ConfigError(f"tuning: {exc}") from None

    n = doc["nsga"]
    try:
        nsga = Nsga3Config(
            population=_int("nsga.population", n["population"], 2),
            generations=_int("nsga.generations", n["generations"], 0),
            crossover_alpha=_float("nsga.crossover_alpha", n["crossover_alpha"]),
            crossover_prob=_float("nsga.crossover_prob", n["crossover_prob"]),
            mutation_prob=_float("nsga.mutation_prob", n["mutation_prob"]),
            mutation_limits=_list("nsga.mutation_limits", n["mutation_limits"], _float),
            divisions=_int("nsga.divisions", n["divisions"], 1),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"nsga: {exc}") from None

    raw = copy.deepcopy(doc)
    raw["problem"] = problem.name
    raw["levels"] = list(levels)
    raw["tuning"].update({k: list(v) for k, v in lists.items()})
    return StudyConfig(
        problem=problem.name,
        levels=levels,
        seed=_int("seed", doc["seed"], 0),
        repeats=_int("repeats", doc["repeats"], 1),
        jobs=_int("jobs", doc["jobs"], 1),
        out=str(doc["out"]),
        tuning=tuning,
        nsga=nsga,
        raw=raw,
    )


def load_config(path=None, overrides=None) -> StudyConfig:
    """Defaults, then the YAML file at ``path``, then ``{dotted.key: value}`` overrides."""
    doc = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(doc, loaded)
    for key, value in (overrides or {}).items():
        set_dotted(doc, key, value)
    return build_config(doc)

