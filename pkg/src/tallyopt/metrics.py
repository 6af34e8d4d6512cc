"""Two-objective Pareto fronts and hypervolume (maximization convention).

Two hypervolume routines are provided.  :func:`hv2d_polygon` is the
triangle-fan area between the reference point and consecutive front points,
used for the reported tables; it returns 0 for a single-point front.
:func:`hv2d_staircase` is the standard dominated-region indicator and serves
as the cross-check.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Front2D:
    points: np.ndarray
    sorted: bool = False

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class HvReport:
    hv_polygon: float
    hv_staircase: float
    reference: tuple


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.empty((0, 2))
    pts = np.atleast_2d(pts)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (n, 2) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def pareto_filter(points) -> Front2D:
    """Non-dominated subset, duplicates collapsed, sorted by descending y1."""
    pts = _as_points(points)
    if len(pts) == 0:
        return Front2D(pts, sorted=True)
    pts = np.unique(pts, axis=0)
    # Descending y1, ties by descending y2; a sweep keeps points whose y2
    # beats every y2 seen so far.
    order = np.lexsort((-pts[:, 1], -pts[:, 0]))
    keep = []
    best_y2 = -np.inf
    for i in order:
        if pts[i, 1] > best_y2:
            keep.append(i)
            best_y2 = pts[i, 1]
    return Front2D(pts[keep], sorted=True)


def is_sorted_front(points):
    pts = _as_points(points)
    if len(pts) < 2:
        return True
    d1, d2 = np.diff(pts[:, 0]), np.diff(pts[:, 1])
    # Descending y1 is the frozen convention; the reversed walk has the same area.
    return bool((np.all(d1 <= 0) and np.all(d2 >= 0)) or (np.all(d1 >= 0) and np.all(d2 <= 0)))


def hv2d_polygon(front, ref=(0.0, 0.0)):
    """Triangle-fan area of the sorted front about the reference point.

    0.5 * |sum_k [r1 (y2_k - y2_{k+1}) + y1_k (y2_{k+1} - r2) + y1_{k+1} (r2 - y2_k)]|
    """
    pts = front.points if isinstance(front, Front2D) else _as_points(front)
    if not is_sorted_front(pts):
        raise ValueError("front must be sorted by descending y1 (ascending y2)")
    if len(pts) < 2:
        return 0.0
    r1, r2 = float(ref[0]), float(ref[1])
    y1, y2 = pts[:, 0], pts[:, 1]
    terms = (r1 * (y2[:-1] - y2[1:]) + y1[:-1] * (y2[1:] - r2) + y1[1:] * (r2 - y2[:-1]))
    return 0.5 * abs(float(np.sum(terms)))


def hv2d_staircase(front, ref=(0.0, 0.0)):
    """Area of the union of boxes [ref, p] over the front's points."""
    pts = front.points if isinstance(front, Front2D) else _as_points(front)
    if len(pts) == 0:
        return 0.0
    r1, r2 = float(ref[0]), float(ref[1])
    if np.any(pts[:, 0] < r1) or np.any(pts[:, 1] < r2):
        raise ValueError("every point must weakly dominate the reference point")
    nd = pareto_filter(pts).points
    area = 0.0
    prev_y2 = r2
    for y1, y2 in nd:
        area += (y1 - r1) * (y2 - prev_y2)
        prev_y2 = y2
    return float(area)


def hv_report(front, ref=(0.0, 0.0)) -> HvReport:
    return HvReport(hv2d_polygon(front, ref), hv2d_staircase(front, ref), (float(ref[0]), float(ref[1])))


@dataclass(frozen=True)
class NormalizationBounds:
    minimum: np.ndarray
    maximum: np.ndarray

    def apply(self, points):
        return (np.asarray(points, dtype=float) - self.minimum) / (self.maximum - self.minimum)

    def to_dict(self):
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}


def normalize_verification(point_sets):
    """Min-max map every set onto [0, 1]^2 using bounds over their union.

    ``point_sets`` is a sequence (or mapping) of ``(n_i, 2)`` arrays, one per
    uncertainty level.  Returns the normalized sets in the same container
    shape and the :class:`NormalizationBounds`.
    """
    items = point_sets.items() if isinstance(point_sets, dict) else enumerate(point_sets)
    items = [(k, _as_points(v)) for k, v in items]
    union = np.vstack([v for _, v in items]) if items else np.empty((0, 2))
    if len(union) == 0:
        raise ValueError("no points to normalize")
    lo, hi = union.min(axis=0), union.max(axis=0)
    if np.any(hi <= lo):
        raise ValueError("degenerate objective: max equals min over the verification set")
    bounds = NormalizationBounds(lo, hi)
    normalized = {k: bounds.apply(v) for k, v in items}
    if not isinstance(point_sets, dict):
        normalized = [normalized[k] for k, _ in items]
    return normalized, bounds


def relative_hv_loss(hv, hv_ref):
    """Percentage of the reference hypervolume lost."""
    if hv_ref <= 0:
        raise ValueError(f"reference hypervolume must be positive, got {hv_ref}")
    return 100.0 * (hv_ref - hv) / hv_ref
