import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradpipe import pipeline as pl
from gradpipe.data import Task, synth_multimodal
from gradpipe.data.columns import FactorColumn, IntegerColumn, NumericColumn
from gradpipe.netgraph import po
from gradpipe.pipeline import (NO_OP, Channel, Graph, PipelineError, PipeOp, PipeOpNOP, branch,
                               feature_union, selector_all, selector_name, selector_type)
from gradpipe.tensor import RngState, fork_rng


class Affine(PipeOp):
    """Number in, number out: ``a * x + b`` summed over inputs."""

    kind = "affine"

    def __init__(self, id, a, b, n_inputs=1):
        self.input_channels = tuple(Channel(f"in{i}", "*", "*") for i in range(n_inputs))
        self.output_channels = (Channel("output", "*", "*"),)
        self.a, self.b, self.calls = a, b, 0
        super().__init__(id)

    def _train(self, inputs):
        self.calls += 1
        self.state = {"b": self.b}
        return [self.a * sum(inputs) + self.b]

    def _predict(self, inputs):
        return [self.a * sum(inputs) + self.state["b"]]


def _factor_task(values, y=None):
    y = np.arange(len(values), dtype=float) if y is None else y
    return Task("f", "regr", {"c": FactorColumn.from_values(values), "y": y}, "y")


# ---------------------------------------------------------------------------
# composition


def test_concat_two_ops():
    g = Affine("a", 2, 0) >> Affine("b", 1, 1)
    assert g.ids() == ["a", "b"] and len(g.edges) == 1
    assert g.train(3) == [7]


def test_fan_in_from_list_of_graphs():
    lin = Affine("lin", 1, 0)
    sq = Affine("nonlin", 3, 0)
    g = [lin, sq] >> Affine("merge", 1, 0, n_inputs=2)
    assert {(e.src_id, e.dst_id) for e in g.edges} == {("lin", "merge"), ("nonlin", "merge")}
    assert g.train(2) == [8]


def test_arity_mismatch_errors():
    with pytest.raises(ValueError):
        [Affine("x", 1, 0), Affine("y", 1, 0), Affine("z", 1, 0)] >> Affine("m", 1, 0, n_inputs=2)


def test_id_collision_gets_suffix():
    g = Affine("op", 1, 0) >> Affine("op", 1, 0) >> Affine("op", 1, 0)
    assert g.ids() == ["op", "op_1", "op_2"]


def test_type_mismatch_fails_at_construction():
    class ToModel(PipeOp):
        output_channels = (Channel("output", "ModelDescriptor", "Task"),)

    with pytest.raises(TypeError):
        ToModel("m") >> po("select")


def test_identity_chain_passthrough():
    t = _factor_task(["a", "b"])
    g = PipeOpNOP("n1") >> PipeOpNOP("n2")
    assert g.train(t)[0] is t and g.predict(t)[0] is t


def test_predict_before_train_errors():
    with pytest.raises(PipelineError):
        (PipeOpNOP() >> PipeOpNOP("n2")).predict(1)


def test_errors_carry_op_id():
    t = _factor_task(["a", "b"])
    g = po("encode")
    g = pl.as_graph(g)
    g.train(t)
    with pytest.raises(ValueError, match="'encode'"):
        g.predict(_factor_task(["c", "a"]))


def test_cycle_rejected():
    g = Affine("a", 1, 0) >> Affine("b", 1, 0, n_inputs=2)
    g.add_pipeop(Affine("c", 1, 0))
    g.add_edge("b", "c")
    with pytest.raises(ValueError):
        g.add_edge("c", "b", dst_channel="in1")


def test_describe_is_deterministic():
    a = (Affine("a", 1, 0) >> Affine("b", 1, 0)).describe()
    assert a == (Affine("a", 1, 0) >> Affine("b", 1, 0)).describe()
    assert "a.output -> b.in0" in a


# ---------------------------------------------------------------------------
# random DAGs: evaluation does not depend on construction order


@st.composite
def dags(draw):
    n = draw(st.integers(2, 8))
    parents = {0: []}
    for i in range(1, n):
        parents[i] = sorted(set(draw(st.lists(st.integers(0, i - 1), min_size=1, max_size=2))))
    coefs = [(draw(st.integers(-3, 3)), draw(st.integers(-5, 5))) for _ in range(n)]
    order = draw(st.permutations(range(n)))
    return parents, coefs, order


def _build(parents, coefs, order):
    g = Graph()
    for i in order:
        g.add_pipeop(Affine(f"n{i}", *coefs[i], n_inputs=max(1, len(parents[i]))))
    edges = [(p, i, k) for i in parents for k, p in enumerate(parents[i])]
    for p, i, k in sorted(edges, key=lambda e: order.index(e[1])):
        g.add_edge(f"n{p}", f"n{i}", dst_channel=f"in{k}")
    return g


@settings(max_examples=60, deadline=None)
@given(dags())
def test_evaluation_invariant_to_insertion_order(dag):
    parents, coefs, order = dag
    g1 = _build(parents, coefs, list(range(len(parents))))
    g2 = _build(parents, coefs, list(order))

    def run(g, phase):
        outs = g.train(1) if phase == "train" else g.predict(2)
        return {i: v for (i, _), v in zip(g.output, outs)}

    assert run(g1, "train") == run(g2, "train")
    assert run(g1, "predict") == run(g2, "predict")


# ---------------------------------------------------------------------------
# parameters


def test_graph_params_are_prefixed_and_unique():
    g = po("select") >> po("encode") >> po("classbalancing")
    names = g.param_set.ids()
    for op_id, op in g.pipeops.items():
        for p in op.param_set.ids():
            assert names.count(f"{op_id}.{p}") == 1
    assert len(names) == sum(len(op.param_set.ids()) for op in g.pipeops.values())
    g.param_set.set_values({"encode.method": "treatment"})
    assert g.pipeops["encode"].param_set.get("method") == "treatment"


# ---------------------------------------------------------------------------
# select / encode / impute / balance / union


def test_select_examples():
    t = synth_multimodal(30, (1, 4, 4), RngState(0))
    num = po("select", selector=selector_type("numeric")).train([t])[0]
    assert set(num.feature_types.values()) <= {"numeric"}
    assert "image" not in num.feature_names and num.target == t.target
    img = po("select", selector=selector_name("image")).train([t])[0]
    assert img.feature_names == ("image",)
    same = po("select", selector=selector_all()).train([t])[0]
    assert same.feature_names == t.feature_names


def test_encode_examples():
    t = _factor_task(["a", "b", "a"])
    out = po("encode").train([t])[0]
    assert out.feature_names == ("c.a", "c.b")
    assert out.columns["c.a"].values.tolist() == [1, 0, 1] and out.columns["c.b"].values.tolist() == [0, 1, 0]
    plain = Task("p", "regr", {"x": [1.0, 2.0], "y": [0.0, 1.0]}, "y")
    assert po("encode").train([plain])[0].equals(plain)
    op = po("encode")
    op.train([_factor_task(["a", "b"])])
    with pytest.raises(ValueError):
        op.predict([_factor_task(["c"])])


def test_select_then_encode_composes():
    t = Task("m", "regr", {"c": FactorColumn.from_values(["u", "v", "u"]), "x": [1.0, 2.0, 3.0],
                           "y": [0.0, 1.0, 2.0]}, "y")
    g = po("select", selector=selector_type("factor")) >> po("encode")
    out = g.train(t)[0]
    direct = po("encode").train([po("select", selector=selector_type("factor")).train([t])[0]])[0]
    assert out.equals(direct) and out.feature_names == ("c.u", "c.v")


def _missing_task(n_missing=6000):
    vals = np.concatenate([[1.0, 1.0, 3.0], np.full(n_missing, np.nan)])
    return Task("m", "regr", {"x": NumericColumn(vals), "y": np.zeros(len(vals))}, "y")


def test_impute_hist_frequency():
    with fork_rng(5):
        out = po("imputehist").train([_missing_task()])[0]
    draws = out.columns["x"].values[3:]
    assert set(np.unique(draws)) <= {1.0, 3.0}
    assert abs((draws == 1.0).mean() - 2 / 3) < 0.02


def test_impute_hist_identity_and_state_rule():
    full = Task("f", "regr", {"x": [1.0, 2.0], "y": [0.0, 0.0]}, "y")
    op = po("imputehist")
    assert op.train([full])[0].equals(full)
    pred = Task("p", "regr", {"x": [np.nan, 50.0, np.nan], "y": [0.0, 0.0, 0.0]}, "y")
    filled = op.predict([pred])[0].columns["x"].values
    assert set(filled[[0, 2]]) <= {1.0, 2.0}
    ints = Task("i", "regr", {"k": IntegerColumn([1, 0], [False, True]), "y": [0.0, 0.0]}, "y")
    assert po("imputehist").train([ints])[0].missings()["k"] == 0


def test_impute_hist_all_missing_errors():
    with pytest.raises(ValueError):
        po("imputehist").train([Task("e", "regr", {"x": [np.nan, np.nan], "y": [0.0, 0.0]}, "y")])


def _imbalanced(minor=10, major=100):
    y = FactorColumn.from_values(["pos"] * minor + ["neg"] * major)
    return Task("b", "classif", {"x": np.arange(minor + major, dtype=float), "y": y}, "y")


def test_class_balancing_examples():
    t = _imbalanced()
    out = po("classbalancing", ratio=4, reference="minor", adjust="minor").train([t])[0]
    counts = np.bincount(out.truth(), minlength=2)
    assert counts.tolist() == [40, 100]
    assert len(set(out.row_ids.tolist())) == out.nrow
    one = po("classbalancing", ratio=1).train([t])[0]
    assert one.equals(t)
    op = po("classbalancing", ratio=4)
    op.train([t])
    assert op.predict([t])[0] is t
    with pytest.raises(ValueError):
        po("classbalancing", ratio=0.5, adjust="minor").train([t])


def test_branch_examples():
    g = branch({"double": Affine("double", 2, 0), "inc": Affine("inc", 1, 1)}, selection="double")
    assert g.train(5) == [10]
    assert g.pipeops["inc"].calls == 0
    g.param_set.set_values({"branch.selection": "inc"})
    assert g.train(5) == [6] and g.predict(5) == [6]
    single = branch({"only": PipeOpNOP("only")})
    assert single.train(3) == [3]
    with pytest.raises(ValueError):
        branch({"relu": Affine("r", 1, 0), "sigmoid": Affine("s", 1, 0)}, selection="tanh")


def test_feature_union_examples():
    t = Task("u", "regr", {"a": [1.0, 2.0], "b": [3.0, 4.0], "y": [0.0, 1.0]}, "y")
    assert feature_union([t, t]).equals(t)
    left, right = t.select(["a"]), t.select(["b"])
    merged = feature_union([left, right])
    assert sorted(merged.feature_names) == ["a", "b"]
    clash = t.with_columns({"a": NumericColumn([9.0, 9.0])})
    with pytest.raises(ValueError):
        feature_union([t, clash])
    g = [po("select", id="s1", selector=selector_name("a")),
         po("select", id="s2", selector=selector_name("b"))] >> po("featureunion")
    assert sorted(g.train(t)[0].feature_names) == ["a", "b"]


def test_augmentation_predict_is_identity():
    t = synth_multimodal(8, (1, 4, 4), RngState(0)).select(["image"])
    for key in ("augment_random_horizontal_flip", "augment_random_vertical_flip"):
        op = po(key, p=1.0)
        op.train([t])
        assert op.predict([t])[0] is t
    crop = po("augment_random_crop", size=(2, 2))
    trained = crop.train([t])[0]
    assert trained.columns["image"].declared_shape == (1, 2, 2)
    assert crop.predict([t])[0] is t


def test_preprocessing_predict_is_deterministic():
    t = synth_multimodal(40, (1, 4, 4), RngState(3))
    g = po("select", selector=selector_type(["integer", "factor"])) >> po("imputehist") >> po("encode")
    with fork_rng(1):
        g.train(t)
    a, b = g.predict(t)[0], g.predict(t)[0]
    assert a.equals(b)


def test_clone_is_independent():
    g = pl.as_graph(Affine("a", 1, 0))
    h = g.clone()
    g.train(1)
    assert not h.is_trained
    assert NO_OP is pl.NO_OP
