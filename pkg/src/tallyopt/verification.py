"""Re-evaluation of optimized designs against the noise-free truth and the
per-level hypervolume loss table."""

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import hv2d_polygon, hv2d_staircase, normalize_verification, pareto_filter, relative_hv_loss

ROUND_DECIMALS = 3


def round_inputs(genes, space):
    """Round continuous genes half-to-even to 3 decimals, then clip to bounds.

    Categorical genes are left as they are.
    """
    g = np.array(genes, dtype=float)
    cont = ~np.asarray(space.categorical, dtype=bool)
    g[..., cont] = np.clip(np.round(g[..., cont], ROUND_DECIMALS), space.lower[cont], space.upper[cont])
    return g


def verify_level(candidates, truth_fn):
    """Noise-free objectives of the (rounded) candidate designs."""
    return np.asarray(truth_fn(np.atleast_2d(candidates)), dtype=float)


@dataclass
class LossRow:
    u_level: float
    hv_polygon: float
    hv_staircase: float
    loss_polygon: float
    loss_staircase: float
    front_size: int


@dataclass
class VerificationRun:
    """Verified candidates of one problem, keyed by tally uncertainty level."""

    problem_id: str
    candidates: dict  # u -> (n, d) rounded genes
    verified: dict  # u -> (n, 2) truth objectives
    repeat: int = 0
    seed: int = 0
    normalized: dict = field(default_factory=dict)
    bounds: object = None

    @property
    def reference_level(self):
        return min(self.verified)


def build_loss_table(run: VerificationRun):
    """Normalized hypervolume and loss relative to the lowest-uncertainty level.

    All levels share one min-max normalization over the union of verified
    points, so the common nadir maps to (0, 0).  Losses are computed from
    the polygon hypervolume, with the staircase variant alongside.
    """
    levels = sorted(run.verified)
    normalized, bounds = normalize_verification({u: run.verified[u] for u in levels})
    run.normalized, run.bounds = normalized, bounds
    fronts = {u: pareto_filter(normalized[u]) for u in levels}
    hv_poly = {u: hv2d_polygon(fronts[u], (0.0, 0.0)) for u in levels}
    hv_stair = {u: hv2d_staircase(fronts[u], (0.0, 0.0)) for u in levels}
    ref = run.reference_level
    rows = []
    for u in levels:
        rows.append(LossRow(
            u_level=u,
            hv_polygon=hv_poly[u],
            hv_staircase=hv_stair[u],
            loss_polygon=0.0 if u == ref else relative_hv_loss(hv_poly[u], hv_poly[ref]),
            loss_staircase=0.0 if u == ref else relative_hv_loss(hv_stair[u], hv_stair[ref]),
            front_size=len(fronts[u]),
        ))
    return rows


@dataclass
class RepeatSummary:
    levels: list
    # (repeats, levels) arrays
    hv: np.ndarray
    loss: np.ndarray

    @property
    def n_repeats(self):
        return self.hv.shape[0]

    # fsum keeps the aggregates independent of repeat order.
    @staticmethod
    def _mean(a):
        return np.array([math.fsum(col) for col in a.T]) / len(a)

    def _std(self, a):
        if len(a) < 2:
            return np.zeros(a.shape[1])
        dev = (a - self._mean(a)) ** 2
        return np.sqrt(np.array([math.fsum(col) for col in dev.T]) / (len(a) - 1))

    @property
    def hv_mean(self):
        return self._mean(self.hv)

    @property
    def hv_std(self):
        return self._std(self.hv)

    @property
    def loss_mean(self):
        return self._mean(self.loss)

    @property
    def loss_std(self):
        return self._std(self.loss)

    def rows(self):
        return [
            (u, self.hv_mean[k], self.hv_std[k], self.loss_mean[k], self.loss_std[k])
            for k, u in enumerate(self.levels)
        ]


def summarize_repeats(tables):
    """Aggregate loss tables (one list of :class:`LossRow` per repeat)."""
    if not tables:
        raise ValueError("need at least one repeat")
    levels = [r.u_level for r in tables[0]]
    hv = np.array([[r.hv_polygon for r in t] for t in tables])
    loss = np.array([[r.loss_polygon for r in t] for t in tables])
    return RepeatSummary(levels, hv, loss)


def repeat_study(run_once, repeats, base_seed):
    """Run ``run_once(repeat_index, base_seed)`` for each repeat and aggregate.

    ``run_once`` returns the loss table of one full pipeline pass; seeds for
    each pass are derived inside it from ``(base_seed, repeat_index)``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    return summarize_repeats([run_once(r, base_seed) for r in range(repeats)])
