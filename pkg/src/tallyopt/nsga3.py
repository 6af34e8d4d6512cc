"""NSGA-III for two (or a few) maximized objectives.

Reference-direction based environmental selection (Deb & Jain, 2014): fast
non-dominated sorting, normalization against the ideal point and the
hyperplane through the extreme points, association of each member to its
nearest reference direction, and niche-preserving selection from the last
admitted front.  Objectives are stored in the maximization sense; selection
internally works on their negation.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import OptimizationError
from .rng import derive_rng

_ASF_EPS = 1e-6
_DEGENERATE = 1e-10


@dataclass(frozen=True)
class Nsga3Config:
    population: int = 100
    generations: int = 100
    crossover_alpha: float = 0.5
    crossover_prob: float = 0.7
    mutation_prob: float = 0.2
    mutation_limits: tuple = (0.01, 0.5)
    # 99 divisions give 100 directions for two objectives: one per slot.
    divisions: int = 99

    def __post_init__(self):
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be an even number >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("crossover_alpha", "crossover_prob", "mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.divisions < 1:
            raise ValueError("divisions must be >= 1")
        lo, hi = self.mutation_limits
        if not 0 < lo <= hi:
            raise ValueError("mutation limits must satisfy 0 < low <= high")

    def to_dict(self):
        d = dict(self.__dict__)
        d["mutation_limits"] = list(self.mutation_limits)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "mutation_limits" in d:
            d["mutation_limits"] = tuple(d["mutation_limits"])
        return cls(**d)


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds per gene; categorical genes hold integer codes lower..upper."""

    lower: np.ndarray
    upper: np.ndarray
    categorical: np.ndarray

    @classmethod
    def from_problem(cls, problem):
        return cls(problem.lower_array, problem.upper_array, problem.categorical_mask)

    @property
    def n_genes(self):
        return len(self.lower)

    def sample(self, n, rng):
        genes = rng.uniform(self.lower, self.upper, size=(n, self.n_genes))
        for j in np.flatnonzero(self.categorical):
            genes[:, j] = rng.integers(int(self.lower[j]), int(self.upper[j]) + 1, size=n)
        return genes

    def clip(self, genes):
        return np.clip(genes, self.lower, self.upper)


@dataclass
class NsgaResult:
    pareto_genes: np.ndarray
    pareto_objectives: np.ndarray
    population_genes: np.ndarray
    population_objectives: np.ndarray
    population_rank: np.ndarray
    # Rows: generation, best f1 so far, best f2 so far (generation 0 = initial population).
    trace: np.ndarray
    # Per-generation population maxima, without the running-best archive.
    generation_best: np.ndarray = field(default=None)

    def ranked_population(self):
        """Population ordered by front, first front first (stable within fronts)."""
        order = np.argsort(self.population_rank, kind="stable")
        return self.population_genes[order], self.population_objectives[order], self.population_rank[order]


def dominates(a, b):
    """True when ``a`` weakly beats ``b`` everywhere and strictly somewhere (maximization)."""
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(a >= b) and np.any(a > b))


def fast_nondominated_sort(objectives):
    """Fronts as lists of row indices, best first (maximization)."""
    f = np.asarray(objectives, dtype=float)
    n = len(f)
    if n == 0:
        return []
    if not np.all(np.isfinite(f)):
        raise ValueError("objectives must be finite")
    ge = np.all(f[:, None, :] >= f[None, :, :], axis=2)
    gt = np.any(f[:, None, :] > f[None, :, :], axis=2)
    dom = ge & gt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = [i for i in range(n) if counts[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = sorted(nxt)
    return fronts


def das_dennis(n_obj, divisions):
    """All points of the unit simplex with coordinates that are multiples of 1/divisions."""
    if n_obj < 2 or divisions < 1:
        raise ValueError("need n_obj >= 2 and divisions >= 1")
    rows = []
    # Stars and bars: choose n_obj-1 bar positions among divisions+n_obj-1 slots.
    for bars in combinations(range(divisions + n_obj - 1), n_obj - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(divisions + n_obj - 2 - prev)
        rows.append(counts)
    return np.array(rows, dtype=float) / divisions


def n_directions(n_obj, divisions):
    return math.comb(divisions + n_obj - 1, n_obj - 1)


def normalize_objectives(objectives, fronts=None):
    """Normalized minimization-space coordinates used for niching.

    Objectives are negated, translated by the ideal point, and divided by
    the intercepts of the hyperplane through the extreme points.  When that
    hyperplane is degenerate (singular, or non-positive intercepts) the
    worst values of the first front are used instead; zero-width axes are
    left unscaled.  Returns ``(normalized, intercepts)``.
    """
    f = np.asarray(objectives, dtype=float)
    g = -f
    ideal = g.min(axis=0)
    gt = g - ideal
    m = g.shape[1]
    weights = np.full((m, m), _ASF_EPS) + np.eye(m) * (1.0 - _ASF_EPS)
    asf = np.max(gt[None, :, :] / weights[:, None, :], axis=2)
    extremes = gt[np.argmin(asf, axis=1)]
    intercepts = None
    try:
        b = np.linalg.solve(extremes, np.ones(m))
        with np.errstate(divide="ignore"):
            cand = 1.0 / b
        if np.all(np.isfinite(cand)) and np.all(cand > _DEGENERATE):
            intercepts = cand
    except np.linalg.LinAlgError:
        pass
    if intercepts is None:
        first = fronts[0] if fronts else fast_nondominated_sort(f)[0]
        intercepts = gt[first].max(axis=0)
    intercepts = np.where(intercepts > _DEGENERATE, intercepts, 1.0)
    return gt / intercepts, intercepts


def associate(normalized, directions):
    """Nearest reference direction (perpendicular distance) for each point."""
    d = np.asarray(directions, dtype=float)
    unit = d / np.linalg.norm(d, axis=1, keepdims=True)
    proj = normalized @ unit.T
    sq = np.sum(normalized**2, axis=1)[:, None] - proj**2
    dist = np.sqrt(np.maximum(sq, 0.0))
    idx = np.argmin(dist, axis=1)
    return idx, dist[np.arange(len(normalized)), idx]


def associate_and_niche(normalized, earlier, last, directions, slots, rng, tiebreak=None):
    """Choose ``slots`` members of ``last`` by niche count.

    ``earlier`` and ``last`` are index arrays into ``normalized``.  The
    direction with the fewest already-selected members is served first
    (ties broken at random), taking its closest unselected candidate.
    ``tiebreak`` is an optional per-row sort key (e.g. objective tuples)
    that orders candidates at equal distance independently of storage order.
    Returns the indices of ``earlier`` followed by the chosen members.
    """
    earlier = [int(i) for i in earlier]
    last = [int(i) for i in last]
    if slots <= 0:
        return earlier
    if slots > len(last):
        raise ValueError("more slots than candidates in the last front")
    dir_idx, dist = associate(normalized, directions)
    n_dir = len(directions)
    niche = np.bincount(dir_idx[earlier], minlength=n_dir) if earlier else np.zeros(n_dir, dtype=int)
    pools = {}
    for i in last:
        pools.setdefault(int(dir_idx[i]), []).append(i)
    for j, members in pools.items():
        members.sort(key=lambda i: (dist[i], tiebreak[i] if tiebreak is not None else i))
    chosen = []
    while len(chosen) < slots:
        live = np.array(sorted(pools))
        counts = niche[live]
        candidates = live[counts == counts.min()]
        j = int(candidates[rng.integers(len(candidates))]) if len(candidates) > 1 else int(candidates[0])
        chosen.append(pools[j].pop(0))
        niche[j] += 1
        if not pools[j]:
            del pools[j]
    return earlier + chosen


def crossover(p1, p2, rng, alpha=0.5, prob=0.7, categorical=None):
    """Segment blend crossover.

    With probability ``prob`` a contiguous gene segment is chosen from two
    cut points; inside it continuous genes blend (alpha*g1 + (1-alpha)*g2
    and the mirror) and categorical genes swap.  Genes outside the segment,
    or all genes when no crossover happens, are copied from the parents.
    """
    p1, p2 = np.asarray(p1, dtype=float), np.asarray(p2, dtype=float)
    if p1.shape != p2.shape:
        raise ValueError("parents must have the same number of genes")
    c1, c2 = p1.copy(), p2.copy()
    if rng.random() >= prob:
        return c1, c2
    n = len(p1)
    a, b = np.sort(rng.choice(n + 1, size=2, replace=False))
    seg = np.zeros(n, dtype=bool)
    seg[a:b] = True
    cat = np.zeros(n, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    blend = seg & ~cat
    c1[blend] = alpha * p1[blend] + (1.0 - alpha) * p2[blend]
    c2[blend] = alpha * p2[blend] + (1.0 - alpha) * p1[blend]
    swap = seg & cat
    c1[swap], c2[swap] = p2[swap], p1[swap]
    return c1, c2


def mutate(genes, space: SearchSpace, rng, prob=0.2, limits=(0.01, 0.5)):
    """Gaussian step of scale U(limits) x range on continuous genes, category flip on categorical."""
    out = np.array(genes, dtype=float)
    span = space.upper - space.lower
    for j in range(len(out)):
        if rng.random() >= prob:
            continue
        if space.categorical[j]:
            options = [c for c in range(int(space.lower[j]), int(space.upper[j]) + 1) if c != int(out[j])]
            if options:
                out[j] = options[rng.integers(len(options))]
        else:
            sigma = rng.uniform(limits[0], limits[1])
            out[j] = np.clip(out[j] + rng.normal(0.0, sigma * span[j]), space.lower[j], space.upper[j])
    return out


def _evaluate(objective_fn, genes):
    f = np.asarray(objective_fn(genes), dtype=float)
    if f.ndim != 2 or len(f) != len(genes):
        raise OptimizationError(f"objective function returned shape {f.shape} for {len(genes)} designs")
    bad = ~np.all(np.isfinite(f), axis=1)
    if np.any(bad):
        raise OptimizationError(f"non-finite objectives for genes {genes[np.argmax(bad)].tolist()}")
    return f


def _environmental_selection(genes, objs, n_keep, directions, rng):
    fronts = fast_nondominated_sort(objs)
    rank = np.empty(len(objs), dtype=int)
    for r, fr in enumerate(fronts):
        rank[fr] = r
    selected = []
    for fr in fronts:
        if len(selected) + len(fr) > n_keep:
            last = fr
            break
        selected.extend(fr)
    else:
        last = []
    st = selected + list(last)
    # The first front always leads ``st``.
    norm_st, _ = normalize_objectives(objs[st], [list(range(len(fronts[0])))])
    local = {g: k for k, g in enumerate(st)}
    if len(selected) < n_keep:
        tiebreak = [tuple(objs[i]) + tuple(genes[i]) for i in st]
        picked = associate_and_niche(norm_st, [local[i] for i in selected], [local[i] for i in last],
                                     directions, n_keep - len(selected), rng, tiebreak)
        keep = [st[k] for k in picked]
    else:
        keep = selected
    # Niching distance of survivors, for tournament tie-breaks.
    _, dist = associate(norm_st, directions)
    niche_dist = np.array([dist[local[i]] for i in keep])
    return np.array(keep), rank[keep], niche_dist


def _tournament(rank, niche_dist, rng):
    i, j = rng.choice(len(rank), size=2, replace=False)
    if rank[i] != rank[j]:
        return i if rank[i] < rank[j] else j
    if niche_dist[i] != niche_dist[j]:
        return i if niche_dist[i] < niche_dist[j] else j
    return i if rng.random() < 0.5 else j


def run(objective_fn, space: SearchSpace, config: Nsga3Config = Nsga3Config(), seed=0) -> NsgaResult:
    """Maximize a vectorized objective ``genes (n, d) -> objectives (n, m)``.

    Random draws come from per-purpose labeled streams (initialization,
    mating, variation, niching), so parallel evaluation inside
    ``objective_fn`` cannot change the sequence.
    """
    init_rng = derive_rng(seed, "nsga3", "init")
    mate_rng = derive_rng(seed, "nsga3", "mating")
    var_rng = derive_rng(seed, "nsga3", "variation")
    niche_rng = derive_rng(seed, "nsga3", "niching")
    n = config.population

    genes = space.sample(n, init_rng)
    objs = _evaluate(objective_fn, genes)
    directions = das_dennis(objs.shape[1], config.divisions)
    keep, rank, niche_dist = _environmental_selection(genes, objs, n, directions, niche_rng)
    genes, objs = genes[keep], objs[keep]

    archive_best = objs.max(axis=0)
    trace = [[0, *archive_best]]
    gen_best = [[0, *objs.max(axis=0)]]
    for gen in range(1, config.generations + 1):
        children = []
        while len(children) < n:
            a = genes[_tournament(rank, niche_dist, mate_rng)]
            b = genes[_tournament(rank, niche_dist, mate_rng)]
            c1, c2 = crossover(a, b, var_rng, config.crossover_alpha, config.crossover_prob, space.categorical)
            children.append(mutate(c1, space, var_rng, config.mutation_prob, config.mutation_limits))
            children.append(mutate(c2, space, var_rng, config.mutation_prob, config.mutation_limits))
        children = np.array(children[:n])
        child_objs = _evaluate(objective_fn, children)
        all_genes = np.vstack([genes, children])
        all_objs = np.vstack([objs, child_objs])
        keep, rank, niche_dist = _environmental_selection(all_genes, all_objs, n, directions, niche_rng)
        genes, objs = all_genes[keep], all_objs[keep]
        archive_best = np.maximum(archive_best, objs.max(axis=0))
        trace.append([gen, *archive_best])
        gen_best.append([gen, *objs.max(axis=0)])

    first = rank == 0
    return NsgaResult(
        pareto_genes=genes[first],
        pareto_objectives=objs[first],
        population_genes=genes,
        population_objectives=objs,
        population_rank=rank,
        trace=np.array(trace),
        generation_best=np.array(gen_best),
    )
