"""Bees-algorithm optimizer over a boxed search space, and the wiring
that tunes model-tree hyperparameters against cross-validated MMRE.

Scout bees sample the space uniformly; each iteration the best sites
recruit foragers inside a shrinking patch, the best bee per patch
survives, and the remaining population slots are refilled with fresh
scouts.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, TableEncoder, make_folds
from .tree import ModelTree, TreeParams, build_tree_encoded, _predict_nodes


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    kind: str = "continuous"  # continuous | integer | boolean

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"dimension {self.name!r}: lower must be < upper")


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]

    @property
    def size(self) -> int:
        return len(self.dims)

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims])


@dataclass(frozen=True)
class BeesConfig:
    """Population settings; defaults follow the recommended benchmark values."""

    scouts: int = 30
    selected: int = 30
    elite: int = 20
    elite_recruits: int = 15
    other_recruits: int = 20
    patch_radius: float = 0.15
    patch_decay: float = 0.95
    max_iterations: int = 50
    epsilon: float = 1e-2  # absolute fitness improvement per iteration (MMRE percent)

    def __post_init__(self):
        if self.scouts < 1:
            raise ValueError("scouts must be >= 1")
        if self.selected < 0 or self.elite < 0:
            raise ValueError("selected and elite must be >= 0")
        if self.elite_recruits < 1 or self.other_recruits < 1:
            raise ValueError("recruit counts must be >= 1")
        if not 0 < self.patch_radius <= 1:
            raise ValueError("patch_radius must be in (0, 1]")
        if not 0 < self.patch_decay <= 1:
            raise ValueError("patch_decay must be in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class Bee:
    position: np.ndarray
    fitness: float


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    best_fitness: float
    patch_radius: float


def create_neighborhood_bee(site: np.ndarray, radius: float, space: SearchSpace, rng) -> np.ndarray:
    """Uniform perturbation of a site inside the patch, clamped to bounds.

    Each coordinate moves by uniform(-radius, +radius) times its
    dimension's range.
    """
    lower, upper = space.lower, space.upper
    step = rng.uniform(-radius, radius, size=space.size) * (upper - lower)
    return np.clip(site + step, lower, upper)


def _evaluate(objective, positions, pool, chunksize=32) -> list[float]:
    if pool is None:
        raw = [objective(p) for p in positions]
    else:
        raw = list(pool.map(objective, positions, chunksize=chunksize))
    out = []
    for v in raw:
        v = float(v)
        out.append(v if np.isfinite(v) else np.inf)
    return out


def optimize(
    objective,
    space: SearchSpace,
    cfg: BeesConfig,
    seed: int,
    workers: int = 1,
) -> tuple[Bee, list[TracePoint]]:
    """Run the bees algorithm; returns the best bee ever evaluated and the
    per-iteration running-best trace.

    All random draws come from one seeded generator in the main thread,
    and fitness reduction is ordered by candidate index, so the result is
    identical for any worker count.  Stops when the running best improves
    by less than ``cfg.epsilon`` over a full iteration, or at
    ``cfg.max_iterations``.
    """
    rng = np.random.default_rng(seed)
    lower, upper = space.lower, space.upper
    n = cfg.scouts
    n_selected = min(cfg.selected, n)
    n_elite = min(cfg.elite, n_selected)

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        positions = [rng.uniform(lower, upper) for _ in range(n)]
        fitnesses = _evaluate(objective, positions, pool)
        population = [Bee(p, f) for p, f in zip(positions, fitnesses)]
        best = min(population, key=lambda b: b.fitness)
        radius = cfg.patch_radius
        trace = [TracePoint(0, best.fitness, radius)]

        for iteration in range(1, cfg.max_iterations + 1):
            radius *= cfg.patch_decay
            sites = sorted(population, key=lambda b: b.fitness)[:n_selected]

            recruit_positions: list[np.ndarray] = []
            recruit_counts: list[int] = []
            for i, site in enumerate(sites):
                nsp = cfg.elite_recruits if i < n_elite else cfg.other_recruits
                recruit_counts.append(nsp)
                for _ in range(nsp):
                    recruit_positions.append(
                        create_neighborhood_bee(site.position, radius, space, rng)
                    )
            scout_positions = [rng.uniform(lower, upper) for _ in range(n - n_selected)]

            fitnesses = _evaluate(objective, recruit_positions + scout_positions, pool)
            recruit_fit = fitnesses[: len(recruit_positions)]
            scout_fit = fitnesses[len(recruit_positions) :]

            next_population: list[Bee] = []
            offset = 0
            for site, nsp in zip(sites, recruit_counts):
                patch_best = site
                for j in range(nsp):
                    if recruit_fit[offset + j] < patch_best.fitness:
                        patch_best = Bee(recruit_positions[offset + j], recruit_fit[offset + j])
                offset += nsp
                next_population.append(patch_best)
            next_population.extend(Bee(p, f) for p, f in zip(scout_positions, scout_fit))
            population = next_population

            iteration_best = min(population, key=lambda b: b.fitness)
            improvement = best.fitness - iteration_best.fitness
            if iteration_best.fitness < best.fitness:
                best = iteration_best
            trace.append(TracePoint(iteration, best.fitness, radius))
            if improvement < cfg.epsilon:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return best, trace


def export_trace(trace, path: str) -> None:
    """Write the optimizer trace as delimited text."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "best_fitness", "ngh"])
        for p in trace:
            w.writerow([p.iteration, f"{p.best_fitness:.10g}", f"{p.patch_radius:.10g}"])


MT_SEARCH_SPACE = SearchSpace(
    (
        Dim("min_cases", 2, 30, "integer"),
        Dim("prune", 0, 1, "boolean"),
        Dim("smoothing", 0, 100, "continuous"),
        Dim("split_threshold", 0.0005, 0.5, "continuous"),
    )
)


def decode_params(position, space: SearchSpace = MT_SEARCH_SPACE) -> TreeParams:
    """Map an optimizer position to valid tree parameters.

    Integer dims round to the nearest whole number, boolean dims test
    against 0.5, continuous dims pass through; everything is clamped to
    its dimension's bounds.
    """
    values = {}
    for x, dim in zip(np.asarray(position, dtype=float), space.dims):
        x = min(max(x, dim.lower), dim.upper)
        if dim.kind == "integer":
            values[dim.name] = int(np.floor(x + 0.5))
        elif dim.kind == "boolean":
            values[dim.name] = bool(x >= 0.5)
        else:
            values[dim.name] = float(x)
    return TreeParams(**values)


def encode_params(params: TreeParams) -> np.ndarray:
    """Inverse embedding of decode_params for valid parameter values."""
    return np.array(
        [
            float(params.min_cases),
            1.0 if params.prune else 0.0,
            params.smoothing,
            params.split_threshold,
        ]
    )


class _InnerCvObjective:
    """Mean inner-CV MMRE (percent) of a tree built with decoded parameters.

    The folds are fixed when the objective is created and shared by every
    candidate; each fold's matrices are encoded once.  Instances are
    picklable so evaluations can run on worker processes.
    """

    def __init__(self, train: Dataset, folds):
        self.fold_data = []
        for fold in range(folds.k):
            tr_idx, te_idx = folds.split(fold)
            inner_train = train.subset(tr_idx)
            encoder = TableEncoder(inner_train)
            x_num, x_cat = encoder.encode(inner_train)
            tx_num, tx_cat = encoder.encode(train.subset(te_idx))
            self.fold_data.append(
                (encoder, x_num, x_cat, inner_train.effort, tx_num, tx_cat, train.effort[te_idx])
            )

    def __call__(self, position) -> float:
        params = decode_params(position)
        scores = []
        for encoder, x_num, x_cat, y, tx_num, tx_cat, ty in self.fold_data:
            tree = build_tree_encoded(x_num, x_cat, y, params, encoder)
            pred = _predict_nodes(tree.root, tx_num, tx_cat, params.smoothing)
            scores.append(100.0 * float(np.mean(np.abs(ty - pred) / ty)))
        return float(np.mean(scores))


@dataclass(frozen=True)
class TuneResult:
    params: TreeParams
    tree: ModelTree
    best: Bee
    trace: list[TracePoint]


def tune_model_tree(
    train: Dataset, cfg: BeesConfig, seed: int, workers: int = 1
) -> TuneResult:
    """Search tree parameters minimizing 3-fold inner-CV MMRE on ``train``,
    then refit on all of ``train`` with the winning parameters."""
    if train.n_rows < 9:
        raise ValueError(f"tuning needs at least 9 training rows, got {train.n_rows}")
    folds = make_folds(train, 3, seed, 3)
    objective = _InnerCvObjective(train, folds)
    best, trace = optimize(objective, MT_SEARCH_SPACE, cfg, seed, workers)
    params = decode_params(best.position)
    from .tree import build_tree

    return TuneResult(params, build_tree(train, params), best, trace)
