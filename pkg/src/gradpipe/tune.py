"""Resampling, random-search tuning and benchmark grids."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data.task import Task
from .learner import Learner
from .measures import INTERNAL_VALID_SCORE, Measure, Prediction, as_measures, msr, roc_points
from .paramset import paramset_sample
from .tensor import RngState, default_rng, derive_seed, fork_rng


def _draw_seed() -> int:
    return int(default_rng().generator().integers(0, 2**62))


# ---------------------------------------------------------------------------
# resamplings


class Resampling:
    """Train/test splits over row ids; grouped tasks are split by group."""

    kind = "resampling"

    def __init__(self):
        self.splits: list[tuple[np.ndarray, np.ndarray]] | None = None
        self.task_id: str | None = None

    @property
    def iters(self) -> int:
        raise NotImplementedError

    @property
    def is_instantiated(self) -> bool:
        return self.splits is not None

    def _units(self, task: Task) -> tuple[np.ndarray, np.ndarray]:
        """Units to permute (groups or rows) and the unit index of each row."""
        groups = task.groups()
        if groups is None:
            return task.row_ids.copy(), np.arange(task.nrow)
        uniq, inverse = np.unique(groups, return_inverse=True)
        return uniq, inverse

    def instantiate(self, task: Task) -> "Resampling":
        units, row_unit = self._units(task)
        n = len(units)
        if n < 2:
            raise ValueError(f"{self.kind}: need at least 2 rows or groups, got {n}")
        perm = default_rng().generator().permutation(n)
        test_units = self._test_units(perm, n)
        self.splits = []
        for test in test_units:
            in_test = np.zeros(n, dtype=bool)
            in_test[test] = True
            rows_test = in_test[row_unit]
            self.splits.append((task.row_ids[~rows_test], task.row_ids[rows_test]))
        self.task_id = task.id
        return self

    def _test_units(self, perm: np.ndarray, n: int) -> list[np.ndarray]:
        raise NotImplementedError

    def train_set(self, i: int) -> np.ndarray:
        self._check()
        return self.splits[i][0]

    def test_set(self, i: int) -> np.ndarray:
        self._check()
        return self.splits[i][1]

    def _check(self):
        if self.splits is None:
            raise RuntimeError("resampling is not instantiated")

    def __repr__(self):
        return f"<Resampling:{self.kind} iters={self.iters}>"


class ResamplingHoldout(Resampling):
    kind = "holdout"

    def __init__(self, ratio: float = 2 / 3):
        super().__init__()
        if not 0 < ratio < 1:
            raise ValueError("holdout ratio must lie in (0, 1)")
        self.ratio = float(ratio)

    @property
    def iters(self):
        return 1

    def _test_units(self, perm, n):
        n_train = min(max(int(round(self.ratio * n)), 1), n - 1)
        return [perm[n_train:]]


class ResamplingCV(Resampling):
    kind = "cv"

    def __init__(self, folds: int = 3):
        super().__init__()
        if folds < 2:
            raise ValueError("cv needs at least 2 folds")
        self.folds = int(folds)

    @property
    def iters(self):
        return self.folds

    def _test_units(self, perm, n):
        if n < self.folds:
            raise ValueError(f"cv with {self.folds} folds needs at least {self.folds} rows or groups")
        fold = np.empty(n, dtype=np.int64)
        fold[perm] = np.arange(n) % self.folds
        return [np.flatnonzero(fold == k) for k in range(self.folds)]


class ResamplingCustom(Resampling):
    kind = "custom"

    def __init__(self, train_sets: Sequence, test_sets: Sequence):
        super().__init__()
        self.splits = [(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))
                       for a, b in zip(train_sets, test_sets)]

    @property
    def iters(self):
        return len(self.splits)

    def instantiate(self, task):
        self.task_id = task.id
        return self


def rsmp(kind: str, **params) -> Resampling:
    if kind == "holdout":
        return ResamplingHoldout(**params)
    if kind == "cv":
        return ResamplingCV(**params)
    raise ValueError(f"unknown resampling {kind!r}")


def partition(task: Task, ratio: float = 0.67) -> dict:
    """Split rows into ``train``/``test``; stratified by class, or by group when grouped."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    gen = default_rng().generator()
    groups = task.groups()
    if groups is not None:
        uniq = np.unique(groups)
        perm = gen.permutation(len(uniq))
        k = int(round(ratio * len(uniq)))
        in_train = np.isin(groups, uniq[perm[:k]])
        return {"train": task.row_ids[in_train], "test": task.row_ids[~in_train]}
    if task.task_type == "classif":
        y = task.truth()
        train = np.zeros(task.nrow, dtype=bool)
        for c in np.unique(y):
            pos = np.flatnonzero(y == c)
            k = int(round(ratio * len(pos)))
            train[pos[gen.permutation(len(pos))[:k]]] = True
    else:
        perm = gen.permutation(task.nrow)
        train = np.zeros(task.nrow, dtype=bool)
        train[perm[:int(round(ratio * task.nrow))]] = True
    return {"train": task.row_ids[train], "test": task.row_ids[~train]}


# ---------------------------------------------------------------------------
# resample


@dataclass
class ResampleIteration:
    iteration: int
    prediction: Prediction | None
    internal_tuned_values: dict
    internal_valid_scores: dict
    error: str | None = None
    learner: Learner | None = None


def _score(it: ResampleIteration, m: Measure) -> float:
    if it.error is not None or it.prediction is None:
        return math.nan
    if m.id == INTERNAL_VALID_SCORE:
        scores = it.internal_valid_scores
        return float(next(iter(scores.values()))) if scores else math.nan
    return m.score(it.prediction)


class ResampleResult:
    def __init__(self, task: Task, learner: Learner, resampling: Resampling, iterations: list):
        self.task = task
        self.learner = learner
        self.resampling = resampling
        self.iterations: list[ResampleIteration] = iterations

    def __repr__(self):
        return (f"<ResampleResult {self.learner.id} on {self.task.id}: {len(self.iterations)} "
                f"iterations, {len(self.errors)} errors>")

    @property
    def predictions(self) -> list:
        return [it.prediction for it in self.iterations]

    @property
    def errors(self) -> list:
        return [(it.iteration, it.error) for it in self.iterations if it.error is not None]

    def prediction(self) -> Prediction:
        preds = [p for p in self.predictions if p is not None]
        if not preds:
            raise ValueError("no successful iterations")
        return Prediction.concat(preds)

    def score(self, measure="classif.ce") -> list:
        m = msr(measure) if isinstance(measure, str) else measure
        return [_score(it, m) for it in self.iterations]

    def aggregate(self, measure="classif.ce") -> float:
        """Unweighted mean over iterations (NaN when any iteration failed)."""
        scores = self.score(measure)
        return float(np.mean(scores)) if scores else math.nan

    def internal_tuned_values(self) -> dict:
        """Mean of each internally tuned value across iterations (integers rounded)."""
        vals: dict[str, list] = {}
        for it in self.iterations:
            for k, v in it.internal_tuned_values.items():
                vals.setdefault(k, []).append(v)
        out = {}
        for k, vs in vals.items():
            mean = float(np.mean(vs))
            out[k] = int(round(mean)) if all(isinstance(v, (int, np.integer)) for v in vs) else mean
        return out


def resample(task: Task, learner: Learner, resampling: Resampling, seed: int | None = None,
             store_models: bool = False) -> ResampleResult:
    """Train a clone per split and predict its test rows; errors are recorded, not raised."""
    if not resampling.is_instantiated:
        resampling.instantiate(task)
    base = _draw_seed() if seed is None else int(seed)
    iterations = []
    for i in range(resampling.iters):
        train_ids, test_ids = resampling.train_set(i), resampling.test_set(i)
        lrn = learner.clone()
        with fork_rng(derive_seed(base, i)):
            try:
                valid = test_ids if lrn.validate == "test" else None
                lrn.train(task, train_ids, valid_row_ids=valid)
                pred = lrn.predict(task, test_ids)
                it = ResampleIteration(i, pred, lrn.internal_tuned_values, lrn.internal_valid_scores)
            except Exception as err:  # noqa: BLE001 - recorded per iteration
                it = ResampleIteration(i, None, {}, {}, f"{type(err).__name__}: {err}")
        if store_models:
            it.learner = lrn
        iterations.append(it)
    return ResampleResult(task, learner, resampling, iterations)


# ---------------------------------------------------------------------------
# tuning


@dataclass
class TuneResult:
    archive: list[dict]
    best_index: int
    best_config: dict
    best_score: float
    internal_tuned_values: dict
    result_learner_param_vals: dict
    measure: Measure
    param_names: list = field(default_factory=list)

    def summary(self) -> str:
        """Best configuration as ``* name = value`` lines."""
        vals = dict(self.best_config)
        vals.update(self.internal_tuned_values)
        return "\n".join(f"* {k} = {v}" for k, v in vals.items())


def tune_random_search(learner: Learner, task: Task, resampling: Resampling, measure,
                       term_evals: int, seed: int | None = None) -> TuneResult:
    """Evaluate ``term_evals`` random configurations; ties go to the earliest evaluation."""
    if term_evals < 1:
        raise ValueError("term_evals must be at least 1")
    m = msr(measure) if isinstance(measure, str) else measure
    seed = _draw_seed() if seed is None else int(seed)
    space = learner.param_set.search_space()
    names = list(space)
    with fork_rng(derive_seed(seed, term_evals, 0)):
        resampling.instantiate(task)
    archive = []
    results = []
    for i in range(term_evals):
        config = paramset_sample(learner.param_set, RngState(derive_seed(seed, i)), names)
        lrn = learner.clone()
        lrn.param_set.set_values(config)
        t0 = time.perf_counter()
        rr = resample(task, lrn, resampling, seed=derive_seed(seed, i, 1))
        score = rr.aggregate(m)
        internal = rr.internal_tuned_values()
        archive.append({"eval": i, **config, **{f"internal.{k}": v for k, v in internal.items()},
                        m.id: score, "errors": len(rr.errors), "runtime_s": time.perf_counter() - t0})
        results.append((score, config, internal))
    ok = [i for i, (s, _, _) in enumerate(results) if not math.isnan(s)]
    if not ok:
        raise RuntimeError("every tuning evaluation failed")
    best = ok[0]
    for i in ok[1:]:
        if m.better(results[i][0], results[best][0]):
            best = i
    score, config, internal = results[best]
    vals = learner.param_set.get_values()
    vals.update(config)
    vals.update(internal)
    return TuneResult(archive, best, dict(config), score, dict(internal), vals, m, names)


# ---------------------------------------------------------------------------
# benchmark


SCORE_HEADER = ["task_id", "learner_id", "resampling", "iteration", "measure", "score", "error"]
AGGREGATE_HEADER = ["task_id", "learner_id", "resampling", "measure", "score", "n_iters", "n_errors"]
ROC_HEADER = ["threshold", "fpr", "tpr"]


class BenchmarkResult:
    def __init__(self, results: list[ResampleResult], measures: list[Measure]):
        self.results = results
        self.measures = measures

    def score_rows(self) -> list[dict]:
        rows = []
        for rr in self.results:
            for m in self.measures:
                for it, s in zip(rr.iterations, rr.score(m)):
                    rows.append({"task_id": rr.task.id, "learner_id": rr.learner.id,
                                 "resampling": rr.resampling.kind, "iteration": it.iteration,
                                 "measure": m.id, "score": s, "error": it.error or ""})
        return rows

    def aggregate(self) -> list[dict]:
        rows = []
        for rr in self.results:
            for m in self.measures:
                rows.append({"task_id": rr.task.id, "learner_id": rr.learner.id,
                             "resampling": rr.resampling.kind, "measure": m.id,
                             "score": rr.aggregate(m), "n_iters": len(rr.iterations),
                             "n_errors": len(rr.errors)})
        return rows

    @property
    def n_errors(self) -> int:
        return sum(len(rr.errors) for rr in self.results)


def benchmark(tasks: Sequence[Task], learners: Sequence[Learner], resamplings: Sequence[Resampling],
              measures, seed: int | None = None) -> BenchmarkResult:
    """Every task × learner × resampling cell; a resampling is instantiated once per task."""
    if not tasks or not learners or not resamplings:
        raise ValueError("benchmark grid is empty")
    ms = as_measures(measures)
    seed = _draw_seed() if seed is None else int(seed)
    results = []
    for ti, task in enumerate(tasks):
        for ri, r in enumerate(resamplings):
            inst = _fresh_resampling(r)
            with fork_rng(derive_seed(seed, ti, ri)):
                inst.instantiate(task)
            for li, lrn in enumerate(learners):
                results.append(resample(task, lrn, inst, seed=derive_seed(seed, ti, ri, li)))
    return BenchmarkResult(results, ms)


def _fresh_resampling(r: Resampling) -> Resampling:
    import copy

    inst = copy.deepcopy(r)
    if not isinstance(inst, ResamplingCustom):
        inst.splits = None
    return inst


# ---------------------------------------------------------------------------
# CSV output


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return v


def write_rows(path, rows: list[dict], header: Sequence[str] | None = None) -> None:
    if header is None:
        header = []
        for r in rows:
            header += [k for k in r if k not in header]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in header])


def write_roc(path, pred: Prediction, positive: int = 0) -> np.ndarray:
    roc = roc_points(pred, positive)
    write_rows(path, [dict(zip(ROC_HEADER, row)) for row in roc.tolist()], ROC_HEADER)
    return roc


def archive_header(result: TuneResult) -> list[str]:
    """``eval``, sampled parameters in search-space order, internal values, score, errors, runtime."""
    internal = sorted({k for row in result.archive for k in row if k.startswith("internal.")})
    return ["eval", *result.param_names, *internal, result.measure.id, "errors", "runtime_s"]
