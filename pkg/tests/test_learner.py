import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradpipe.callbacks import HOOKS, select_grep, select_all, torch_callback
from gradpipe.data import Task, synth_classif, synth_regression
from gradpipe.data.columns import FactorColumn
from gradpipe.learner import (LearnerFeatureless, LearnerTorchMLP, LearnerTorchModule, MarshaledModelError,
                              ingress_num, lrn, set_validate)
from gradpipe.measures import Measure, Prediction, msr
from gradpipe.nn import Linear, Module, ReLU
from gradpipe.tensor import RngState
from gradpipe.torchconf import t_clbk, t_opt


def _classif(n=60, d=4, k=2, seed=0):
    return synth_classif(n, d, k, RngState(seed))


def _mlp(task_type="classif", **kw):
    base = dict(neurons=(8,), epochs=2, batch_size=16, seed=1, p=0.0)
    base.update(kw)
    return lrn(f"{task_type}.mlp", **base)


def _params(learner):
    return {n: p.data.copy() for n, p in learner.model.network.named_parameters()}


# ---------------------------------------------------------------------------
# training loop


def test_mlp_trains_with_history():
    l = _mlp(callbacks=["history"], measures_train=["classif.logloss"])
    l.train(_classif())
    assert l.model is not None
    assert [r["epoch"] for r in l.history] == [1, 2]
    assert all("train.classif.logloss" in r for r in l.history)


def test_validate_ratio_splits_rows():
    seen = {}

    def grab(self):
        seen["train"], seen["valid"] = self.ctx.task_train.nrow, self.ctx.task_valid.nrow

    Probe = torch_callback("probe", on_begin=grab)
    l = _mlp(callbacks=[t_clbk(Probe)])
    set_validate(l, 0.3)
    l.train(_classif(100))
    assert seen == {"train": 70, "valid": 30}
    with pytest.raises(ValueError):
        set_validate(l, 1.5)


def _rigged(scores):
    it = iter(scores)
    return Measure("rigged", lambda p: next(it), minimize=True)


@pytest.mark.parametrize("k", [1, 4, 7])
def test_early_stopping_halts_patience_after_best(k):
    scores = [10.0 - i for i in range(k)] + [20.0] * 30
    l = _mlp(epochs=40, patience=5, measures_valid=[_rigged(scores)], callbacks=["history"])
    l.validate = 0.2
    l.train(_classif())
    assert len(l.history) == k + 5
    assert l.internal_tuned_values == {"epochs": k}
    assert l.internal_valid_scores == {"rigged": 20.0}


def test_early_stopping_never_exceeds_max_epochs():
    l = _mlp(epochs=6, patience=3, measures_valid=[_rigged(range(100, 0, -1))], callbacks=["history"])
    l.validate = 0.2
    l.train(_classif())
    assert len(l.history) == 6 and l.internal_tuned_values["epochs"] == 6


def test_validation_rows_never_train():
    t = _classif(40, seed=3)
    poisoned = t.with_columns({"x1": type(t.columns["x1"])(np.where(t.row_ids >= 30, 1e6, t.columns["x1"].values))})
    train_rows, valid_rows = np.arange(30), np.arange(30, 40)
    runs = []
    for task, valid in ((t, valid_rows), (poisoned, valid_rows), (t, None)):
        l = _mlp(epochs=3, measures_valid=["classif.ce"])
        l.validate = "test" if valid is not None else None
        l.train(task, train_rows, valid)
        runs.append(_params(l))
    for name in runs[0]:
        assert np.array_equal(runs[0][name], runs[1][name])
        assert np.array_equal(runs[0][name], runs[2][name])


def test_hook_order_trace():
    trace = []
    hooks = {h: (lambda self, h=h: trace.append(h)) for h in HOOKS}
    Tracer = torch_callback("tracer", **hooks)
    l = _mlp(epochs=2, batch_size=25, measures_valid=["classif.ce"], callbacks=[t_clbk(Tracer)])
    l.validate = 0.25
    l.train(_classif(80))
    batch = ["on_batch_begin", "on_after_backward", "on_batch_end"]
    epoch = ["on_epoch_begin"] + batch * 3 + ["on_epoch_end", "on_valid_end"]
    assert trace == ["on_begin"] + epoch * 2 + ["on_end"]


def test_training_is_deterministic():
    def run():
        l = _mlp(epochs=3)
        l.train(_classif())
        return l.marshal().model.payload

    assert run() == run()


def test_epoch_log_lines(caplog):
    l = _mlp(epochs=3, measures_train=["classif.ce"])
    with caplog.at_level(logging.INFO, logger="gradpipe"):
        l.train(_classif())
    lines = [r.getMessage() for r in caplog.records if "epoch=" in r.getMessage()]
    assert len(lines) == 3 and lines[0].split()[1] == "epoch=1" and "train.classif.ce=" in lines[0]


def test_required_hyperparameters_and_feature_types():
    with pytest.raises(ValueError, match="epochs"):
        lrn("classif.mlp", batch_size=4).train(_classif())
    with_factor = Task("f", "classif", {"f": FactorColumn.from_values(["a", "b"] * 5),
                                        "y": FactorColumn.from_values(["u", "v"] * 5)}, "y")
    with pytest.raises(TypeError):
        _mlp().train(with_factor)


def test_fallback_engages_only_when_configured():
    bad = lrn("classif.mlp", batch_size=16)
    with pytest.raises(ValueError):
        bad.train(_classif())
    bad.fallback = LearnerFeatureless("classif")
    t = _classif()
    bad.train(t)
    assert bad.fallback_used and bad.errors
    pred = bad.predict(t)
    assert len(set(pred.response.tolist())) == 1


# ---------------------------------------------------------------------------
# prediction


def test_overfit_tiny_task():
    g = np.random.default_rng(0)
    x = g.normal(size=(10, 3))
    y = FactorColumn.from_values(["a", "b", "c", "a", "b", "c", "a", "b", "c", "a"])
    t = Task("tiny", "classif", {"x1": x[:, 0], "x2": x[:, 1], "x3": x[:, 2], "y": y}, "y")
    l = _mlp(neurons=(32,), epochs=300, batch_size=10, optimizer=t_opt("adamw", lr=0.02))
    l.train(t)
    assert l.predict(t).score("classif.ce")["classif.ce"] == 0.0


def test_prob_rows_and_response_only():
    t = _classif(50, k=3)
    l = _mlp(predict_type="prob")
    l.train(t)
    p = l.predict(t)
    assert np.allclose(p.prob.sum(axis=1), 1.0, atol=1e-6)
    assert np.array_equal(p.response, p.prob.argmax(axis=1))
    l.predict_type = "response"
    assert l.predict(t).prob is None
    with pytest.raises(ValueError):
        _mlp("regr", predict_type="prob")


def test_predict_without_model_errors():
    with pytest.raises(RuntimeError):
        _mlp().predict(_classif())


# ---------------------------------------------------------------------------
# marshaling


def test_marshal_round_trip_bit_identical():
    t = _classif()
    l = _mlp(predict_type="prob", callbacks=["history"])
    l.train(t)
    before = l.predict(t)
    params = _params(l)
    l.marshal()
    assert l.marshaled
    with pytest.raises(MarshaledModelError):
        l.predict(t)
    payload = l.model.payload
    l.marshal()
    assert l.model.payload == payload
    l.unmarshal()
    after = l.predict(t)
    assert np.array_equal(before.prob, after.prob)
    for name, value in _params(l).items():
        assert np.array_equal(value, params[name])
    assert l.marshal().model.payload == payload
    assert l.unmarshal().history == [{"epoch": 1}, {"epoch": 2}]


def test_unmarshal_rejects_corruption():
    l = _mlp()
    l.train(_classif())
    l.marshal()
    good = l.model.payload
    for bad in (b"XXXX" + good[4:], good[:-5]):
        l.model.payload = bad
        with pytest.raises(ValueError):
            l.unmarshal()


# ---------------------------------------------------------------------------
# measures


def test_measure_examples():
    truth = np.array([0, 1, 1])
    perfect = Prediction("classif", [0, 1, 2], truth, truth, np.eye(2)[truth], ("a", "b"))
    assert perfect.score(["classif.ce", "classif.acc"]) == {"classif.ce": 0.0, "classif.acc": 1.0}
    reg = Prediction("regr", [0, 1], np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert msr("regr.rmse").score(reg) == 0.0
    uniform = Prediction("classif", range(5), np.arange(5), np.zeros(5, int), np.full((5, 10), 0.1),
                         tuple("abcdefghij"))
    assert msr("classif.logloss").score(uniform) == pytest.approx(math.log(10), rel=1e-12)
    with pytest.raises(ValueError):
        msr("classif.auc").score(Prediction("classif", [0, 1], [0, 1], [0, 1], None, ("a", "b")))


def _pair_count_auc(score, positive):
    pos, neg = score[positive], score[~positive]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def _binary(score, truth):
    prob = np.column_stack([score, 1 - score])
    return Prediction("classif", range(len(truth)), truth, (score < 0.5).astype(int), prob, ("pos", "neg"))


def test_auc_toy_matches_pair_count():
    score = np.array([0.9, 0.4, 0.6, 0.2])
    truth = np.array([0, 0, 1, 1])
    assert msr("classif.auc").score(_binary(score, truth)) == pytest.approx(
        _pair_count_auc(score, truth == 0)) == 0.75


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6).map(lambda v: v / 6), st.booleans()), min_size=2, max_size=25))
def test_auc_matches_pair_count_with_ties(rows):
    score = np.array([s for s, _ in rows])
    positive = np.array([b for _, b in rows])
    if positive.all() or not positive.any():
        return
    truth = np.where(positive, 0, 1)
    assert msr("classif.auc").score(_binary(score, truth)) == pytest.approx(
        _pair_count_auc(score, positive), abs=1e-12)


# ---------------------------------------------------------------------------
# callbacks


def test_history_ten_epochs():
    l = _mlp(epochs=10, callbacks=["history"])
    l.train(_classif())
    assert [r["epoch"] for r in l.history] == list(range(1, 11))


def test_clipper_records_one_norm_per_step():
    l = _mlp(epochs=3, batch_size=16, callbacks=[t_clbk("gradient_clipper", max_norm=0.5)])
    l.train(_classif(60))
    norms = l.model.callback_states["gradient_clipper"]
    assert len(norms) == 3 * 4 and all(n >= 0 for n in norms)


def test_unfreeze_schedule():
    snaps = {}

    def snap(self):
        snaps[self.ctx.epoch] = {n: p.data.copy() for n, p in self.ctx.network.named_parameters()}

    Snap = torch_callback("snap", on_epoch_end=snap)
    head = select_grep(r"^3\.")
    cb = t_clbk("unfreeze", starting_weights=head, unfreeze=[(3, select_all())])
    with_start = {}

    def start(self):
        with_start.update({n: p.data.copy() for n, p in self.ctx.network.named_parameters()})

    Start = torch_callback("start", on_begin=start)
    l = _mlp(neurons=(8,), epochs=4, callbacks=[t_clbk(Start), cb, t_clbk(Snap)])
    l.train(_classif())
    body = [n for n in with_start if not n.startswith("3.")]
    assert body
    for n in body:
        assert np.array_equal(snaps[1][n], with_start[n]) and np.array_equal(snaps[2][n], with_start[n])
        assert not np.array_equal(snaps[3][n], with_start[n])
    assert not np.array_equal(snaps[1]["3.weight"], with_start["3.weight"])


def test_unfreeze_selector_must_match():
    cb = t_clbk("unfreeze", starting_weights=select_grep("nothing"))
    with pytest.raises(ValueError):
        _mlp(callbacks=[cb]).train(_classif())


# ---------------------------------------------------------------------------
# module learners


class FFN(Module):
    def __init__(self, d_in, d_out, latent_dim, n_layers):
        super().__init__()
        self.layers = []
        width = d_in
        for i in range(n_layers):
            lin = Linear(width, latent_dim)
            self.add_module(f"hidden{i}", lin)
            self.layers.append(lin)
            width = latent_dim
        self.head = Linear(width, d_out)
        self.act = ReLU()

    def forward(self, x):
        for lin in self.layers:
            x = self.act(lin(x))
        return self.head(x)


def ffn_generator(task, latent_dim, n_layers):
    return FFN(len(task.feature_names), len(task.class_names), latent_dim, n_layers)


def _module_learner(name="x", **values):
    from gradpipe.paramset import ParamSet, p_int
    ps = ParamSet([p_int("latent_dim", 1, None), p_int("n_layers", 0, None)])
    return LearnerTorchModule(ffn_generator, {name: ingress_num()}, "classif", id="ffn", param_set=ps,
                              epochs=2, batch_size=16, **values)


def test_module_learner_trains():
    l = _module_learner(latent_dim=100, n_layers=5)
    t = _classif()
    l.train(t)
    assert len(l.predict(t)) == t.nrow
    assert len(l.model.network.layers) == 5
    assert "latent_dim" in l.param_set.ids() and "opt.lr" in l.param_set.ids()


def test_module_learner_zero_layers_is_linear_head():
    l = _module_learner(latent_dim=4, n_layers=0)
    l.train(_classif(d=3))
    names = [n for n, _ in l.model.network.named_parameters()]
    assert names == ["head.weight", "head.bias"]
    assert l.model.network.head.weight.shape == (2, 3)


def test_module_learner_name_mismatch():
    with pytest.raises(ValueError, match="forward"):
        _module_learner(name="z", latent_dim=4, n_layers=1).train(_classif())


def test_param_prefixes_partition():
    l = _mlp(callbacks=["history", t_clbk("gradient_clipper")])
    ids = l.param_set.ids()
    assert len(ids) == len(set(ids))
    assert "opt.lr" in ids and "cb.gradient_clipper.max_norm" in ids
    l.param_set.set_values({"opt.lr": 0.5, "cb.gradient_clipper.max_norm": 2.0})
    assert l.optimizer.param_set.get("lr") == 0.5 and l.callbacks[1].param_set.get("max_norm") == 2.0


def test_regression_mlp_and_featureless():
    t = synth_regression(80, 3, RngState(0))
    l = _mlp("regr", epochs=3)
    l.train(t)
    p = l.predict(t)
    assert p.task_type == "regr" and len(p) == 80
    f = LearnerFeatureless("regr")
    f.train(t)
    assert np.allclose(f.predict(t).response, t.truth().mean())
    assert isinstance(LearnerTorchMLP("classif"), LearnerTorchMLP)
