"""Benchmark harness: repeated stratified cross-validation of all
estimation methods on shared splits, metric aggregation, pairwise
significance tests and CSV export.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .baselines import CbrModel, MlpConfig, MlpModel, swr_fit
from .bees import BeesConfig, tune_model_tree
from .data import Dataset, load_dataset, make_folds
from .metrics import PredictionSet
from .tree import TreeParams, build_tree

METHODS = ("OMT", "MT-default", "CBR", "SWR", "MLP")
BUNDLED_DATASETS = (
    "albrecht",
    "kemerer",
    "desharnais",
    "cocomo81",
    "maxwell",
    "telecom1",
    "nasa93",
)


def resolve_data_dir(explicit: str | None = None) -> str:
    """Dataset directory: explicit argument, then $OMT_DATA_DIR, then the
    files bundled with the package."""
    if explicit:
        return explicit
    env = os.environ.get("OMT_DATA_DIR")
    if env:
        return env
    return os.path.join(os.path.dirname(__file__), "datasets")


def load_named_dataset(name_or_path: str, data_dir: str | None = None) -> Dataset:
    """Load a bundled dataset by id, or any csv path with its .schema sidecar."""
    if os.path.isfile(name_or_path):
        data_path = name_or_path
    else:
        data_path = os.path.join(resolve_data_dir(data_dir), name_or_path + ".csv")
        if not os.path.isfile(data_path):
            raise FileNotFoundError(f"no such dataset file: {name_or_path}")
    schema_path = os.path.splitext(data_path)[0] + ".schema"
    if not os.path.isfile(schema_path):
        raise FileNotFoundError(f"no schema sidecar for {data_path}: {schema_path}")
    return load_dataset(data_path, schema_path)


def normalize_method(name: str) -> str:
    canon = {m.lower().replace("-", "").replace("_", ""): m for m in METHODS}
    key = name.lower().replace("-", "").replace("_", "")
    if key == "mt":
        key = "mtdefault"
    if key not in canon:
        raise ValueError(f"unknown method {name!r}; expected one of {METHODS}")
    return canon[key]


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[str, ...] = BUNDLED_DATASETS
    methods: tuple[str, ...] = METHODS
    k: int = 3
    repeats: int = 10
    base_seed: int = 1
    bees: BeesConfig = field(default_factory=BeesConfig)
    alpha: float = 0.05

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        object.__setattr__(self, "methods", tuple(normalize_method(m) for m in self.methods))


@dataclass(frozen=True)
class CellResult:
    dataset: str
    method: str
    repeat: int
    fold: int
    test: PredictionSet
    test_rows: np.ndarray
    train: PredictionSet
    bees_iterations: int | None = None


@dataclass(frozen=True)
class CellFailure:
    dataset: str
    method: str
    repeat: int
    fold: int
    message: str


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list[CellResult]
    failures: list[CellFailure]

    def cells_for(self, dataset: str, method: str) -> list[CellResult]:
        return [c for c in self.cells if c.dataset == dataset and c.method == method]

    def summary_rows(self) -> list[tuple]:
        """(dataset, method, split, mmre, mdmre, pred) rows.

        Per repeat, fold predictions are pooled and scored; rows report
        the mean over repeats.
        """
        rows = []
        for ds in self.config.datasets:
            for method in self.config.methods:
                cells = self.cells_for(ds, method)
                for split in ("test", "train"):
                    vals = []
                    for r in sorted({c.repeat for c in cells}):
                        pairs = [getattr(c, split) for c in cells if c.repeat == r]
                        pooled = PredictionSet(
                            np.concatenate([p.actual for p in pairs]),
                            np.concatenate([p.predicted for p in pairs]),
                        )
                        vals.append(
                            (metrics.mmre(pooled), metrics.mdmre(pooled), metrics.pred(pooled))
                        )
                    if vals:
                        agg = tuple(float(np.mean([v[i] for v in vals])) for i in range(3))
                    else:
                        agg = (float("nan"),) * 3
                    rows.append((ds, method, split) + agg)
        return rows

    def pooled_test_residuals(self, dataset: str, method: str) -> np.ndarray:
        cells = self.cells_for(dataset, method)
        if not cells:
            return np.empty(0)
        return np.concatenate([metrics.abs_residuals(c.test) for c in cells])

    def significance_rows(self) -> list[tuple]:
        """(dataset, baseline, p_value) for pooled test residuals OMT vs baseline."""
        rows = []
        if "OMT" not in self.config.methods:
            return rows
        for ds in self.config.datasets:
            omt = self.pooled_test_residuals(ds, "OMT")
            for method in self.config.methods:
                if method == "OMT":
                    continue
                other = self.pooled_test_residuals(ds, method)
                if len(omt) >= 3 and len(other) >= 3:
                    res = metrics.wilcoxon_rank_sum(omt, other, self.config.alpha)
                    rows.append((ds, method, res.p_value))
        return rows


def _fit_and_predict(method, train: Dataset, test: Dataset, seed: int, bees: BeesConfig):
    """Returns (train predictions, test predictions, bees iteration count or None)."""
    iterations = None
    if method == "OMT":
        result = tune_model_tree(train, bees, seed)
        model = result.tree
        iterations = len(result.trace) - 1
        predict = model.predict_dataset
    elif method == "MT-default":
        predict = build_tree(train, TreeParams()).predict_dataset
    elif method == "CBR":
        predict = CbrModel(train).predict_dataset
    elif method == "SWR":
        predict = swr_fit(train).predict_dataset
    elif method == "MLP":
        predict = MlpModel(train, MlpConfig(), seed).predict_dataset
    else:
        raise ValueError(f"unknown method {method!r}")
    return predict(train), predict(test), iterations


def _run_cell(task):
    dataset, method, repeat, fold, train_idx, test_idx, seed, bees = task
    train = dataset.subset(train_idx)
    test = dataset.subset(test_idx)
    try:
        train_pred, test_pred, iterations = _fit_and_predict(method, train, test, seed, bees)
    except Exception as exc:  # recorded per cell, never aborts the run
        return CellFailure(dataset.name, method, repeat, fold, f"{type(exc).__name__}: {exc}")
    return CellResult(
        dataset=dataset.name,
        method=method,
        repeat=repeat,
        fold=fold,
        test=PredictionSet(test.effort, np.asarray(test_pred)),
        test_rows=np.asarray(test_idx),
        train=PredictionSet(train.effort, np.asarray(train_pred)),
        bees_iterations=iterations,
    )


def run_experiment(
    cfg: ExperimentConfig, data_dir: str | None = None, workers: int = 1
) -> ExperimentReport:
    """Run every (dataset, repeat, fold, method) cell on shared splits.

    Folds for repeat r use seed ``base_seed + r`` and are identical for
    every method; the same seed drives tuning and MLP initialization.
    Cells are independent work units: with ``workers > 1`` they run on a
    process pool, and results are assembled in task order so the report
    does not depend on the worker count.
    """
    datasets = {name: load_named_dataset(name, data_dir) for name in cfg.datasets}
    tasks = []
    for name in cfg.datasets:
        ds = datasets[name]
        for repeat in range(cfg.repeats):
            seed = cfg.base_seed + repeat
            folds = make_folds(ds, cfg.k, seed, cfg.k)
            for fold in range(cfg.k):
                train_idx, test_idx = folds.split(fold)
                for method in cfg.methods:
                    tasks.append((ds, method, repeat, fold, train_idx, test_idx, seed, cfg.bees))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, tasks, chunksize=1))
    else:
        outcomes = [_run_cell(t) for t in tasks]

    cells = [o for o in outcomes if isinstance(o, CellResult)]
    failures = [o for o in outcomes if isinstance(o, CellFailure)]
    return ExperimentReport(cfg, cells, failures)


def _fmt(x: float) -> str:
    return f"{x:.4g}"


def export_report(report: ExperimentReport, out_dir: str) -> list[str]:
    """Write summary.csv, significance.csv and residuals.csv; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("dataset,method,split,mmre,mdmre,pred\n")
        for ds, method, split, v_mmre, v_mdmre, v_pred in report.summary_rows():
            fh.write(f"{ds},{method},{split},{_fmt(v_mmre)},{_fmt(v_mdmre)},{_fmt(v_pred)}\n")
    paths.append(path)

    path = os.path.join(out_dir, "significance.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("dataset,baseline,p_value\n")
        for ds, baseline, p in report.significance_rows():
            fh.write(f"{ds},{baseline},{_fmt(p)}\n")
    paths.append(path)

    path = os.path.join(out_dir, "residuals.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("dataset,method,repeat,fold,row_id,abs_residual\n")
        for ds in report.config.datasets:
            for method in report.config.methods:
                for cell in sorted(
                    report.cells_for(ds, method), key=lambda c: (c.repeat, c.fold)
                ):
                    resid = metrics.abs_residuals(cell.test)
                    for row_id, r in zip(cell.test_rows, resid):
                        fh.write(
                            f"{ds},{method},{cell.repeat},{cell.fold},{row_id},{_fmt(r)}\n"
                        )
    paths.append(path)
    return paths
