import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradpipe.data import (Flip, IndexedDataset, LazyTensorColumn, RandomCrop, Reshape, Resize, Task, batch_iter,
                           flip, load_csv, materialize, mtcars, random_crop, read_csv_columns, resize_bilinear,
                           synth_multimodal, synth_regression, write_csv)
from gradpipe.data.columns import FactorColumn, IntegerColumn, NumericColumn
from gradpipe.tensor import RngState

from conftest import GOLDEN


def _images(n=6, shape=(1, 28, 28)):
    arr = np.random.default_rng(0).normal(size=(n, *shape)).astype(np.float32)
    return IndexedDataset.from_arrays(image=arr), arr


def _task(n=5):
    return Task("toy", "regr", {"a": np.arange(n, dtype=float), "y": np.arange(n, dtype=float) * 2}, "y")


# ---------------------------------------------------------------------------
# lazy column


def test_laziness_counts():
    ds, _ = _images(10)
    col = LazyTensorColumn(ds, "image")
    sub = col.take(np.array([1, 3, 5, 7]))
    sub = sub.append(Flip("horizontal", 0.5)).append(RandomCrop((20, 20))).append(Reshape((-1, 400)))
    assert ds.call_counter == 0
    sub.materialize([0, 2, 3], phase="train", rng=RngState(0))
    assert ds.call_counter == 3


def test_materialize_plain_and_reshaped():
    ds, arr = _images(4)
    col = LazyTensorColumn(ds, "image")
    assert np.array_equal(np.stack(materialize(col)), arr)
    flat = col.append(Reshape((-1, 784)))
    assert flat.declared_shape == (784,)
    out = flat.materialize([2], stack=True)
    assert out.shape == (1, 784) and np.array_equal(out[0], arr[2].reshape(-1))


def test_train_only_transform_skipped_at_predict():
    ds, arr = _images(3, (1, 4, 4))
    col = LazyTensorColumn(ds, "image").append(Flip("vertical", 1.0))
    assert np.array_equal(np.stack(col.materialize(phase="predict")), arr)
    assert np.array_equal(np.stack(col.materialize(phase="train")), arr[:, :, ::-1, :])


def test_materialize_shape_mismatch_raises():
    ds = IndexedDataset(lambda i: {"v": np.zeros(3 + i)}, 2, {"v": (3,)})
    col = LazyTensorColumn(ds, "v")
    col.materialize([0])
    with pytest.raises(ValueError):
        col.materialize([1])


def test_varying_shapes_declared_unknown():
    ds = IndexedDataset(lambda i: {"v": np.zeros((1, 2 + i, 3))}, 3)
    col = LazyTensorColumn(ds, "v")
    assert col.declared_shape is None
    resized = col.append(Resize((4, 4)))
    assert resized.declared_shape == (None, 4, 4)
    assert resized.materialize(stack=True).shape == (3, 1, 4, 4)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=10, unique=True), st.integers(0, 1000))
def test_predict_phase_is_pure_and_commutes_with_filtering(rows, seed):
    ds, _ = _images(10, (1, 3, 3))
    col = LazyTensorColumn(ds, "image").append(Flip("horizontal", 0.5)).append(Resize((2, 2)))
    full = col.materialize(phase="predict", stack=True)
    a = col.take(np.array(rows)).materialize(phase="predict", stack=True)
    b = col.materialize(rows, phase="predict", stack=True)
    assert np.array_equal(a, full[rows]) and np.array_equal(a, b)


# ---------------------------------------------------------------------------
# transforms


def test_resize_examples():
    img = np.random.default_rng(1).normal(size=(2, 3, 5))
    assert np.allclose(resize_bilinear(img, (3, 5)), img, atol=1e-6)
    two = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert resize_bilinear(two, (1, 1))[0, 0, 0] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        resize_bilinear(two, (0, 1))


def _bilinear_pixel(img, y, x, h2, w2):
    _, h, w = img.shape
    sy = max((y + 0.5) * h / h2 - 0.5, 0)
    sx = max((x + 0.5) * w / w2 - 0.5, 0)
    y0, x0 = min(int(sy), h - 1), min(int(sx), w - 1)
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    dy, dx = sy - y0, sx - x0
    return ((1 - dy) * (1 - dx) * img[:, y0, x0] + (1 - dy) * dx * img[:, y0, x1]
            + dy * (1 - dx) * img[:, y1, x0] + dy * dx * img[:, y1, x1])


def test_resize_matches_per_pixel_oracle():
    img = np.random.default_rng(2).normal(size=(3, 4, 4))
    got = resize_bilinear(img, (2, 2))
    for y in range(2):
        for x in range(2):
            assert np.allclose(got[:, y, x], _bilinear_pixel(img, y, x, 2, 2), rtol=1e-12)
    up = resize_bilinear(img, (7, 5))
    assert np.allclose(up[:, 3, 2], _bilinear_pixel(img, 3, 2, 7, 5), rtol=1e-12)


def test_flip_examples():
    img = np.arange(12.0).reshape(1, 3, 4)
    gen = np.random.default_rng(0)
    assert np.array_equal(flip(img, "horizontal", 0.0, gen), img)
    assert np.array_equal(flip(flip(img, "vertical", 1.0, gen), "vertical", 1.0, gen), img)
    hits = sum(not np.array_equal(flip(img, "horizontal", 0.3, gen), img) for _ in range(10_000))
    assert abs(hits / 10_000 - 0.3) < 0.02


def test_crop_examples():
    img = np.arange(4.0).reshape(1, 2, 2)
    gen = np.random.default_rng(3)
    assert np.array_equal(random_crop(img, (2, 2), False, gen), img)
    counts = np.zeros(4)
    for _ in range(4000):
        counts[int(random_crop(img, (1, 1), False, gen)[0, 0, 0])] += 1
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)
    padded = random_crop(np.ones((1, 1, 1)), (3, 3), True, gen)
    assert padded.shape == (1, 3, 3) and padded.sum() == 1.0
    with pytest.raises(ValueError):
        random_crop(img, (3, 3), False, gen)


# ---------------------------------------------------------------------------
# batching


def test_batch_sizes_and_order():
    batches = list(batch_iter(_task(5), 2))
    assert [len(b) for b in batches] == [2, 2, 1]
    assert np.concatenate([b.index for b in batches]).tolist() == [0, 1, 2, 3, 4]
    b = batches[0]
    assert b.x["x"].shape == (2, 1) and b.y.shape[0] == 2
    with pytest.raises(ValueError):
        list(batch_iter(_task(5), 0))


def test_shuffle_matches_golden_permutation():
    golden = json.loads((GOLDEN / "permutation_seed42.json").read_text())
    batches = list(batch_iter(_task(10), 3, shuffle=True, rng=RngState(golden["seed"])))
    assert np.concatenate([b.index for b in batches]).tolist() == golden["permutation"]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 10_000))
def test_epoch_covers_rows_once(n, bs, seed):
    idx = np.concatenate([b.index for b in batch_iter(_task(n), bs, shuffle=True, rng=RngState(seed))])
    assert sorted(idx.tolist()) == list(range(n))


# ---------------------------------------------------------------------------
# tasks and CSV


def test_task_invariants():
    with pytest.raises(ValueError):
        Task("t", "classif", {"a": [1.0], "y": [1.0]}, "y")
    with pytest.raises(ValueError):
        Task("t", "regr", {"a": [1.0], "y": [1.0]}, "y", features=["a", "y"])
    t = _task(6)
    f = t.filter([4, 1, 3])
    assert f.row_ids.tolist() == [1, 3, 4]


def test_csv_levels_first_appearance(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("x,color,y\n1,red,1.5\n2,blue,2.5\n3,red,\n")
    cols = read_csv_columns(p)
    assert cols["color"].levels == ("red", "blue")
    assert isinstance(cols["x"], IntegerColumn)
    assert np.isnan(cols["y"].values[2])


def test_csv_errors(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(ValueError):
        read_csv_columns(empty)
    bad = tmp_path / "b.csv"
    bad.write_text("a,y\nx,1\n")
    with pytest.raises(ValueError, match="line 2"):
        load_csv(bad, "y", schema={"a": "numeric"})
    with pytest.raises(ValueError):
        load_csv(bad, "missing")


def test_mtcars_fixture():
    t = mtcars()
    assert t.task_type == "regr" and t.nrow == 32 and t.n_features == 10 and t.target == "mpg"
    assert set(t.feature_types.values()) == {"numeric"}


def test_csv_round_trip(tmp_path):
    t = Task("rt", "classif", {
        "n": NumericColumn([1.5, np.nan, -2.0]),
        "i": IntegerColumn([1, 0, 7], [False, True, False]),
        "f": FactorColumn.from_values(["b", None, "a"]),
        "y": FactorColumn.from_values(["yes", "no", "yes"]),
    }, "y")
    p = tmp_path / "rt.csv"
    write_csv(t, p)
    back = load_csv(p, "y", schema={"n": "numeric", "i": "integer", "f": "factor", "y": "factor"}, id="rt")
    assert back.equals(t)
    assert back.columns["f"].levels == ("b", "a")


# ---------------------------------------------------------------------------
# synthetic generators


def test_synth_regression_shape():
    t = synth_regression(2000, 1000, RngState(0))
    assert (t.nrow, t.n_features + 1) == (2000, 1001)


def test_synth_multimodal_structure():
    t = synth_multimodal(200, (3, 16, 16), RngState(1))
    assert t.missings(["age"])["age"] > 0
    assert t.group_column == "patient_id"
    assert t.columns["image"].materialize([0], stack=True).shape == (1, 3, 16, 16)
    assert t.class_names == ("malignant", "benign")


def test_synth_multimodal_imbalance():
    t = synth_multimodal(5000, (1, 2, 2), RngState(2), positive_ratio=0.02)
    share = (t.truth() == 0).mean()
    assert 0.01 < share < 0.03
