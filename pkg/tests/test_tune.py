import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradpipe.data import Task, synth_classif, synth_regression
from gradpipe.data.columns import FactorColumn
from gradpipe.learner import Learner, LearnerFeatureless, lrn
from gradpipe.measures import Prediction, msr
from gradpipe.paramset import ParamSet, p_dbl, p_fct, p_int, p_uty, paramset_sample, to_tune
from gradpipe.tensor import RngState, derive_seed, fork_rng
from gradpipe.tune import (AGGREGATE_HEADER, SCORE_HEADER, ResamplingCustom, benchmark, partition, resample,
                           rsmp, tune_random_search)


def _grouped(n_groups=4, per=5):
    groups = np.repeat(np.arange(n_groups), per)
    return Task("g", "regr", {"x": np.arange(n_groups * per, dtype=float), "grp": groups.astype(float),
                              "y": np.zeros(n_groups * per)}, "y", group="grp")


# ---------------------------------------------------------------------------
# parameter spaces


def test_param_set_rejects_out_of_range():
    ps = ParamSet([p_int("n", 1, 5), p_dbl("lr", 0, 1), p_fct("act", ["relu", "sigmoid"])])
    with pytest.raises(ValueError):
        ps.set_values(n=6)
    with pytest.raises(ValueError):
        ps.set_values(act="tanh")
    with pytest.raises(ValueError):
        to_tune(0.0, 1.0, logscale=True)
    ps.set_values(n=to_tune(1, 5), act=to_tune(["relu", "sigmoid"]))
    assert set(ps.search_space()) == {"n", "act"}


def test_int_sampling_frequencies():
    ps = ParamSet([p_int("n", 1, 5)], n=to_tune(1, 5))
    draws = np.array([paramset_sample(ps, RngState(s))["n"] for s in range(10_000)])
    freq = np.bincount(draws, minlength=6)[1:] / len(draws)
    assert np.all(np.abs(freq - 0.2) <= 0.02)


def test_logscale_sampling_median():
    ps = ParamSet([p_dbl("lr", 0, None)], lr=to_tune(1e-4, 1e-1, logscale=True))
    draws = np.array([paramset_sample(ps, RngState(s))["lr"] for s in range(10_000)])
    assert draws.min() >= 1e-4 and draws.max() <= 1e-1
    assert abs(math.log10(np.median(draws)) + 2.5) < 0.5


def test_categorical_sampling_levels():
    ps = ParamSet([p_fct("act", ["relu", "sigmoid", "tanh"])], act=to_tune(["relu", "sigmoid"]))
    assert {paramset_sample(ps, RngState(s))["act"] for s in range(200)} == {"relu", "sigmoid"}


def test_untunable_entry_errors():
    ps = ParamSet([p_int("n", 1, 5), p_uty("other")], n=to_tune(1, 5))
    with pytest.raises(ValueError):
        paramset_sample(ps, RngState(0), ["other"])
    internal = ParamSet([p_int("epochs", 1, None, tags={"internal_tuning"})], epochs=to_tune(upper=100, internal=True))
    assert paramset_sample(internal, RngState(0)) == {}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(1e-6, 10.0), st.floats(1.01, 1e4), st.integers(-50, 50), st.integers(0, 50))
def test_sampling_respects_bounds(seed, lo, factor, ilo, width):
    hi = lo * factor
    ps = ParamSet([p_dbl("a", 0, None), p_dbl("b", None, None), p_int("c", None, None)],
                  a=to_tune(lo, hi, logscale=True), b=to_tune(-lo, hi), c=to_tune(ilo, ilo + width))
    gen_seeds = np.random.default_rng(seed).integers(0, 2**62, 2500)
    for s in gen_seeds:
        v = paramset_sample(ps, RngState(int(s)))
        assert lo <= v["a"] <= hi and -lo <= v["b"] <= hi and ilo <= v["c"] <= ilo + width


# ---------------------------------------------------------------------------
# resampling


def test_holdout_sizes():
    t = synth_regression(30, 2, RngState(0))
    with fork_rng(1):
        r = rsmp("holdout", ratio=2 / 3).instantiate(t)
    assert (len(r.train_set(0)), len(r.test_set(0))) == (20, 10)


def test_cv_covers_every_row_once():
    t = synth_regression(31, 2, RngState(0))
    l = LearnerFeatureless("regr")
    rr = resample(t, l, rsmp("cv", folds=3), seed=4)
    assert len(rr.predictions) == 3
    ids = np.concatenate([p.row_ids for p in rr.predictions])
    assert sorted(ids.tolist()) == t.row_ids.tolist()


def test_grouped_holdout_keeps_groups_whole():
    t = _grouped()
    groups = dict(zip(t.row_ids.tolist(), t.groups().tolist()))
    for seed in range(20):
        with fork_rng(seed):
            r = rsmp("holdout").instantiate(t)
        train = {groups[i] for i in r.train_set(0)}
        test = {groups[i] for i in r.test_set(0)}
        assert not train & test and train | test == {0, 1, 2, 3}


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 40), st.integers(2, 4), st.integers(0, 1000), st.booleans())
def test_resampling_disjoint_and_cv_partitions(n, folds, seed, grouped):
    cols = {"x": np.arange(n, dtype=float), "y": np.zeros(n)}
    if grouped:
        cols["grp"] = (np.arange(n) % max(folds, n // 3)).astype(float)
    t = Task("r", "regr", cols, "y", group="grp" if grouped else None)
    with fork_rng(seed):
        cv = rsmp("cv", folds=folds).instantiate(t)
        ho = rsmp("holdout", ratio=0.6).instantiate(t)
    for r in (cv, ho):
        for i in range(r.iters):
            assert not set(r.train_set(i)) & set(r.test_set(i))
            assert len(r.train_set(i)) + len(r.test_set(i)) == n
    tests = np.concatenate([cv.test_set(i) for i in range(folds)])
    assert sorted(tests.tolist()) == list(range(n))
    if grouped:
        g = t.groups()
        for i in range(folds):
            assert not set(g[cv.train_set(i)]) & set(g[cv.test_set(i)])


def test_partition_grouped_and_stratified():
    t = _grouped(6, 3)
    with fork_rng(0):
        p = partition(t, 0.5)
    g = t.groups()
    assert not set(g[p["train"]]) & set(g[p["test"]])
    c = synth_classif(100, 2, 2, RngState(0))
    with fork_rng(0):
        p = partition(c, 0.7)
    assert len(p["train"]) + len(p["test"]) == 100


class RandomScores(Learner):
    """Ignores features and emits uniformly random class probabilities."""

    def __init__(self):
        super().__init__("random", "classif")
        self.predict_type = "prob"
        self.param_set = ParamSet()

    def _train(self, task, valid):
        self.classes = task.class_names

    def _predict(self, task):
        from gradpipe.tensor import default_rng

        s = default_rng().generator().random(task.nrow)
        prob = np.column_stack([s, 1 - s])
        return Prediction("classif", task.row_ids, task.truth(), (s < 0.5).astype(int), prob, self.classes)


def test_random_scores_give_auc_half():
    y = FactorColumn.from_values(["a", "b"] * 2000)
    t = Task("bal", "classif", {"x": np.zeros(4000), "y": y}, "y")
    rr = resample(t, RandomScores(), rsmp("holdout", ratio=0.5), seed=11)
    assert len(rr.predictions[0]) == 2000
    assert abs(rr.aggregate(msr("classif.auc")) - 0.5) < 0.05


def test_aggregate_is_unweighted_mean_and_errors_recorded():
    t = synth_regression(20, 2, RngState(0))
    custom = ResamplingCustom([np.arange(10), np.arange(5, 20)], [np.arange(10, 20), np.arange(5)])
    rr = resample(t, LearnerFeatureless("regr"), custom, seed=0)
    s = rr.score("regr.mse")
    assert rr.aggregate("regr.mse") == pytest.approx((s[0] + s[1]) / 2)
    broken = lrn("regr.mlp", batch_size=4)
    rr = resample(t, broken, custom, seed=0)
    assert len(rr.errors) == 2 and math.isnan(rr.aggregate("regr.mse"))


# ---------------------------------------------------------------------------
# tuning


def _tunable_mlp():
    l = lrn("regr.mlp", epochs=to_tune(upper=20, internal=True), batch_size=16, patience=2,
            measures_valid=["regr.mse"], neurons=(4,), p=to_tune(0.1, 0.9), callbacks=["history"])
    l.param_set.set_values({"opt.lr": to_tune(1e-3, 1e-1, logscale=True)})
    l.validate = "test"
    return l


def test_tune_evaluation_count_ranges_and_reproducibility():
    t = synth_regression(60, 3, RngState(0))
    res = tune_random_search(_tunable_mlp(), t, rsmp("holdout"), msr("internal_valid_score", minimize=True),
                             term_evals=6, seed=3)
    assert len(res.archive) == 6
    assert 0.1 <= res.best_config["p"] <= 0.9 and 1e-3 <= res.best_config["opt.lr"] <= 1e-1
    assert 1 <= res.internal_tuned_values["epochs"] <= 20
    assert res.result_learner_param_vals["epochs"] == res.internal_tuned_values["epochs"]
    scores = [row["internal_valid_score"] for row in res.archive]
    assert res.best_score == min(scores) and res.best_index == scores.index(min(scores))
    assert "* p = " in res.summary() and "* epochs = " in res.summary()
    again = tune_random_search(_tunable_mlp(), t, rsmp("holdout"), msr("internal_valid_score", minimize=True),
                               term_evals=6, seed=3)
    assert [r["p"] for r in again.archive] == [r["p"] for r in res.archive]
    assert scores == [row["internal_valid_score"] for row in again.archive]


def test_internal_valid_score_is_last_validation_entry():
    t = synth_regression(60, 3, RngState(1))
    seed = 5
    r = rsmp("holdout")
    res = tune_random_search(_tunable_mlp(), t, r, msr("internal_valid_score", minimize=True), term_evals=2,
                             seed=seed)
    l = _tunable_mlp()
    l.param_set.set_values({k: v for k, v in res.archive[1].items() if k in ("p", "opt.lr")})
    rr = resample(t, l, r, seed=derive_seed(seed, 1, 1), store_models=True)
    last = rr.iterations[0].learner.history[-1]["valid.regr.mse"]
    assert res.archive[1]["internal_valid_score"] == last


def test_degenerate_space_returns_the_config():
    t = synth_regression(30, 2, RngState(0))
    l = lrn("regr.mlp", epochs=2, batch_size=8, neurons=(2,), p=to_tune(0.3, 0.3))
    res = tune_random_search(l, t, rsmp("holdout"), "regr.mse", term_evals=3, seed=0)
    assert res.best_config == {"p": 0.3}
    assert all(row["p"] == 0.3 for row in res.archive)


def test_tune_errors():
    t = synth_regression(30, 2, RngState(0))
    with pytest.raises(ValueError):
        tune_random_search(LearnerFeatureless("regr"), t, rsmp("holdout"), "regr.mse", term_evals=0)
    broken = lrn("regr.mlp", batch_size=4, p=to_tune(0.1, 0.2))
    with pytest.raises(RuntimeError):
        tune_random_search(broken, t, rsmp("holdout"), "regr.mse", term_evals=2, seed=0)


# ---------------------------------------------------------------------------
# benchmark grids


def test_benchmark_grid_rows():
    t = synth_regression(30, 2, RngState(0))
    one = benchmark([t], [LearnerFeatureless("regr")], [rsmp("holdout")], "regr.mse", seed=0)
    assert len(one.aggregate()) == 1 and set(one.aggregate()[0]) == set(AGGREGATE_HEADER)
    two = benchmark([t], [LearnerFeatureless("regr"), lrn("regr.mlp", epochs=2, batch_size=8)],
                    [rsmp("cv", folds=3)], "regr.mse", seed=0)
    agg = two.aggregate()
    assert [r["learner_id"] for r in agg] == ["regr.featureless", "regr.mlp"]
    assert all(np.isfinite(r["score"]) for r in agg)
    assert len(two.score_rows()) == 6 and set(two.score_rows()[0]) == set(SCORE_HEADER)


def test_benchmark_failing_cell_is_isolated():
    t = synth_regression(30, 2, RngState(0))
    res = benchmark([t], [lrn("regr.mlp", batch_size=4), LearnerFeatureless("regr")], [rsmp("holdout")],
                    "regr.mse", seed=0)
    bad, good = res.aggregate()
    assert bad["n_errors"] == 1 and math.isnan(bad["score"])
    assert good["n_errors"] == 0 and np.isfinite(good["score"])
    with pytest.raises(ValueError):
        benchmark([], [LearnerFeatureless("regr")], [rsmp("holdout")], "regr.mse")
