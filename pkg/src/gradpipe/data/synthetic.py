"""Synthetic task generators and the bundled mtcars fixture."""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..tensor import RngState, default_rng
from .columns import FactorColumn, IntegerColumn, NumericColumn
from .csvio import load_csv
from .lazy import IndexedDataset, LazyTensorColumn
from .task import Task


def synth_regression(n: int, d: int, rng: RngState | None = None, noise: float = 0.1) -> Task:
    """Standard-normal features ``x1..xd`` and ``y = x @ beta + noise``."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    gen = (rng or default_rng()).generator()
    x = gen.standard_normal((n, d))
    beta = gen.standard_normal(d) / np.sqrt(d)
    y = x @ beta + noise * gen.standard_normal(n)
    cols = {f"x{j + 1}": NumericColumn(x[:, j]) for j in range(d)}
    cols["y"] = NumericColumn(y)
    return Task("synth_regr", "regr", cols, "y")


def synth_multimodal(n: int, image_shape=(3, 16, 16), rng: RngState | None = None,
                     positive_ratio: float = 0.1, missing_rate: float = 0.05,
                     n_groups: int | None = None) -> Task:
    """Tabular + image binary classification task with a patient-like group column.

    Features: ``age`` (integer with missing cells), ``site`` and ``sex``
    (factors) and a lazy ``image`` column.  The positive class
    ``malignant`` is the first level; its images carry a brighter blob so the
    task is learnable.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < positive_ratio < 1:
        raise ValueError("positive_ratio must lie in (0, 1)")
    gen = (rng or default_rng()).generator()
    n_groups = n_groups or max(1, n // 4)
    group = gen.integers(0, n_groups, n)
    positive = gen.random(n) < positive_ratio
    age = np.clip(np.round(gen.normal(50, 15, n) + 8 * positive), 5, 95).astype(np.int64)
    age_missing = gen.random(n) < missing_rate
    if not age_missing.any():
        age_missing[gen.integers(n)] = True
    sites = np.array(["torso", "lower extremity", "upper extremity", "head/neck"])
    site = sites[gen.integers(0, len(sites), n)]
    sex = np.where(gen.random(n) < 0.5, "male", "female")
    c, h, w = image_shape
    seeds = gen.integers(0, 2**63 - 1, n)
    flags = positive.copy()

    def getter(i):
        g = np.random.Generator(np.random.Philox(key=int(seeds[i])))
        img = g.normal(0.0, 0.3, (c, h, w))
        if flags[i]:
            cy, cx = g.integers(h // 4, h - h // 4), g.integers(w // 4, w - w // 4)
            yy, xx = np.mgrid[0:h, 0:w]
            img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (max(h, w) / 8) ** 2))
        return {"image": img.astype(np.float32)}

    ds = IndexedDataset(getter, n, {"image": tuple(image_shape)})
    cols = {
        "age": IntegerColumn(age, age_missing),
        "site": FactorColumn.from_values(site.tolist()),
        "sex": FactorColumn.from_values(sex.tolist()),
        "image": LazyTensorColumn(ds, "image"),
        "patient_id": IntegerColumn(group),
        "outcome": FactorColumn(np.where(positive, 0, 1), ("malignant", "benign")),
    }
    return Task("synth_multimodal", "classif", cols, "outcome",
                features=("age", "site", "sex", "image"), group="patient_id")


def synth_classif(n: int, d: int, k: int = 2, rng: RngState | None = None) -> Task:
    """Gaussian blobs around random class centers; numeric features only."""
    if n < 1 or d < 1 or k < 2:
        raise ValueError("need n >= 1, d >= 1 and k >= 2")
    gen = (rng or default_rng()).generator()
    centers = gen.standard_normal((k, d)) * 2
    y = np.arange(n) % k
    gen.shuffle(y)
    x = centers[y] + gen.standard_normal((n, d))
    cols = {f"x{j + 1}": NumericColumn(x[:, j]) for j in range(d)}
    cols["y"] = FactorColumn(y, [f"c{i}" for i in range(k)])
    return Task("synth_classif", "classif", cols, "y")


def synth_images(n: int, image_shape=(1, 28, 28), k: int = 10, rng: RngState | None = None) -> Task:
    """Class-dependent image prototypes plus noise in a lazy ``image`` column."""
    gen = (rng or default_rng()).generator()
    protos = gen.random((k, *image_shape)).astype(np.float32)
    labels = gen.integers(0, k, n)
    noise = (0.2 * gen.standard_normal((n, *image_shape))).astype(np.float32)
    images = protos[labels] + noise
    ds = IndexedDataset.from_arrays(image=images)
    cols = {"image": LazyTensorColumn(ds, "image"),
            "label": FactorColumn(labels, [str(i) for i in range(k)])}
    return Task("synth_images", "classif", cols, "label")


def mtcars() -> Task:
    """The 32-row motor trend cars data; regression on ``mpg`` with 10 numeric features."""
    path = resources.files("gradpipe.datasets").joinpath("mtcars.csv")
    with resources.as_file(path) as p:
        schema = {n: "numeric" for n in ("mpg", "cyl", "disp", "hp", "drat", "wt", "qsec",
                                          "vs", "am", "gear", "carb")}
        task = load_csv(p, "mpg", "regr", schema=schema, id="mtcars")
    return task.select(sorted(task.feature_names))
