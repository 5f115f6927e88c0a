import copy
import csv

import numpy as np
import pytest
import yaml

from gradpipe import bench
from gradpipe.cli import main
from gradpipe.config import MULTIMODAL_EXPERIMENT, REGR_EXPERIMENT, ConfigError, ExperimentConfig, load_config, parse_config
from gradpipe.measures import Prediction
from gradpipe.measures import roc_points
from gradpipe.tune import AGGREGATE_HEADER, ROC_HEADER, SCORE_HEADER

MTCARS_PIPELINE = {
    "seed": 3,
    "data": {"builtin": "mtcars"},
    "pipeline": [
        {"op": "torch_ingress_num"},
        {"op": "nn_block", "id": "block", "n_blocks": 2, "block": [
            {"op": "nn_linear", "id": "linear", "out_features": 16},
            {"branch": {"relu": [{"op": "nn_relu", "id": "relu"}],
                        "sigmoid": [{"op": "nn_sigmoid", "id": "sigmoid"}]}},
            {"op": "nn_dropout", "id": "dropout", "p": 0.2},
        ]},
        {"op": "nn_head", "id": "head"},
        {"op": "torch_loss", "loss": "mse"},
        {"op": "torch_optimizer", "optimizer": {"kind": "adamw", "lr": 0.01}},
        {"op": "torch_model_regr", "epochs": 5, "batch_size": 8, "measures_valid": ["regr.mse"]},
    ],
    "learner": {"id": "custom_nn", "validate": "test"},
    "resampling": {"kind": "holdout"},
    "measures": ["regr.rmse", "regr.mse"],
}


def _write(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return p


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------------------
# configs


def test_config_round_trip(tmp_path):
    cfg = load_config(_write(tmp_path, MTCARS_PIPELINE))
    again = parse_config(cfg.dump())
    assert again.to_dict() == cfg.to_dict() == MTCARS_PIPELINE
    regr = ExperimentConfig.from_dict(copy.deepcopy(REGR_EXPERIMENT))
    assert parse_config(regr.dump()).to_dict() == REGR_EXPERIMENT


def test_yaml_error_reports_position():
    with pytest.raises(ConfigError, match=r"line 3, column 1"):
        parse_config("data:\n  synth: [regr\n")
    with pytest.raises(ConfigError):
        parse_config("bogus: 1\ndata: {builtin: mtcars}\n")


def test_bad_op_kind_names_the_op(tmp_path, capsys):
    cfg = copy.deepcopy(MTCARS_PIPELINE)
    cfg["pipeline"][1]["block"][0] = {"op": "nn_linaer", "id": "my_linear"}
    rc = main(["train", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o"), "-q"])
    assert rc == 2
    assert "my_linear" in capsys.readouterr().err


def test_bad_hyperparameter_names_the_op(tmp_path, capsys):
    cfg = copy.deepcopy(MTCARS_PIPELINE)
    cfg["pipeline"][1]["block"][2]["p"] = 3.0
    rc = main(["train", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o"), "-q"])
    assert rc == 2 and "dropout" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train


def test_train_is_deterministic(tmp_path):
    p = _write(tmp_path, MTCARS_PIPELINE)
    for run in ("a", "b"):
        assert main(["train", str(p), "--out", str(tmp_path / run), "-q"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "model.bin").read_bytes() == (b / "model.bin").read_bytes()
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    metrics = _rows(a / "metrics.csv")
    assert metrics[0] == ["measure", "score"]
    assert [r[0] for r in metrics[1:]] == ["regr.rmse", "regr.mse", "internal_valid.regr.mse"]
    log = (a / "train.log").read_text()
    assert log.count("epoch=") == 5
    assert main(["train", str(p), "--out", str(tmp_path / "c"), "--seed", "9", "-q"]) == 0
    assert (tmp_path / "c" / "model.bin").read_bytes() != (a / "model.bin").read_bytes()


def test_missing_config_is_usage_error(tmp_path):
    assert main(["train", "--out", str(tmp_path), "-q"]) == 2
    assert main(["train", str(tmp_path / "nope.yaml"), "--out", str(tmp_path), "-q"]) == 2


# ---------------------------------------------------------------------------
# tune


def test_tune_archive_and_best_file(tmp_path):
    cfg = copy.deepcopy(MTCARS_PIPELINE)
    cfg["pipeline"][-1]["patience"] = 2
    cfg["tuning"] = {
        "term_evals": 5,
        "measure": {"id": "internal_valid_score", "minimize": True},
        "search_space": {
            "block.n_blocks": {"lower": 1, "upper": 3},
            "block.branch.selection": {"levels": ["relu", "sigmoid"]},
            "torch_optimizer.lr": {"lower": 1e-3, "upper": 0.1, "logscale": True},
            "torch_model_regr.epochs": {"internal": True, "upper": 8},
        },
    }
    out = tmp_path / "t"
    assert main(["tune", str(_write(tmp_path, cfg)), "--out", str(out), "-q"]) == 0
    rows = _rows(out / "archive.csv")
    header, body = rows[0], rows[1:]
    assert len(body) == 5
    assert header[:1] == ["eval"] and "internal.torch_model_regr.epochs" in header
    assert header[-3:] == ["internal_valid_score", "errors", "runtime_s"]
    recs = [dict(zip(header, r)) for r in body]
    assert all(r["internal.torch_model_regr.epochs"] for r in recs)
    best = min(recs, key=lambda r: float(r["internal_valid_score"]))
    lines = dict(l[2:].split(" = ", 1) for l in (out / "best.txt").read_text().splitlines() if l.startswith("* "))
    for name in ("block.n_blocks", "block.branch.selection", "torch_optimizer.lr"):
        assert lines[name] == best[name]
    assert lines["torch_model_regr.epochs"] == best["internal.torch_model_regr.epochs"]
    assert 1 <= int(lines["block.n_blocks"]) <= 3


def test_tune_without_tuning_block_errors(tmp_path):
    assert main(["tune", str(_write(tmp_path, MTCARS_PIPELINE)), "--out", str(tmp_path / "o"), "-q"]) == 2


# ---------------------------------------------------------------------------
# resample and ROC


def test_resample_multimodal_emits_scores_and_roc(tmp_path):
    cfg = copy.deepcopy(MULTIMODAL_EXPERIMENT)
    cfg["data"]["n"] = 120
    cfg["data"]["image_shape"] = [3, 8, 8]
    for step in cfg["pipeline"]:
        if step.get("op") == "augment_random_crop":
            step["size"] = [8, 8]
        if step.get("op") == "torch_model_classif":
            step["epochs"] = 1
        for path in step.get("parallel", []):
            for s in path:
                if s.get("op") == "torch_ingress_ltnsr":
                    s["shape"] = [None, 3, 8, 8]
    out = tmp_path / "r"
    assert main(["resample", str(_write(tmp_path, cfg)), "--out", str(out), "-q"]) == 0
    assert _rows(out / "aggregate.csv")[0] == AGGREGATE_HEADER
    assert len(_rows(out / "aggregate.csv")) == 1 + 2
    assert _rows(out / "scores.csv")[0] == SCORE_HEADER
    roc = np.array(_rows(out / "roc.csv")[1:], dtype=float)
    assert _rows(out / "roc.csv")[0] == ROC_HEADER
    assert np.all(np.diff(roc[:, 0]) <= 0)
    assert np.all(np.diff(roc[:, 1]) >= 0) and np.all(np.diff(roc[:, 2]) >= 0)


def test_roc_perfect_separator_hits_corner():
    truth = np.array([0, 0, 1, 1, 0, 1])
    score = np.array([0.9, 0.8, 0.1, 0.3, 0.7, 0.2])
    prob = np.column_stack([score, 1 - score])
    pred = Prediction("classif", np.arange(6), truth, (score < 0.5).astype(int), prob, ("pos", "neg"))
    pts = roc_points(pred)
    assert any(fpr == 0.0 and tpr == 1.0 for _, fpr, tpr in pts)
    assert pts[0, 1:].tolist() == [0.0, 0.0] and pts[-1, 1:].tolist() == [1.0, 1.0]


# ---------------------------------------------------------------------------
# bench


def test_bench_small_grid(tmp_path):
    cfg = {"layers": [0, 4], "latent": [100], "optimizers": ["sgd"], "epochs": 2, "warmup": 1,
           "repetitions": 3, "n": 64, "d": 20, "batch_size": 32}
    out = tmp_path / "b"
    assert main(["bench", str(_write(tmp_path, {"bench": cfg})), "--out", str(out), "-q"]) == 0
    rows = _rows(out / "bench.csv")
    assert rows[0] == bench.HEADER and len(rows) == 5
    recs = [dict(zip(rows[0], r)) for r in rows[1:]]
    assert {(r["layers"], r["implementation"]) for r in recs} == {(l, i) for l in ("0", "4")
                                                                   for i in ("raw", "framework")}
    for r in recs:
        assert float(r["q10_ms"]) <= float(r["median_ms"]) <= float(r["q90_ms"])
    ratios = _rows(out / "ratios.csv")
    assert ratios[0] == ["optimizer", "latent", "layers", "ratio"] and len(ratios) == 3
    assert all(np.isfinite(float(r[3])) and float(r[3]) > 0 for r in ratios[1:])


def test_bench_warmup_excluded():
    cfg = bench.BenchConfig(epochs=3, warmup=2, n=64, d=8, batch_size=32)
    net = bench.make_network(cfg.d, 0, 4)
    x = np.zeros((64, 8), np.float32)
    y = np.zeros((64, 1), np.float32)
    from gradpipe.tensor import RngState

    ts = bench.time_raw_loop(x, y, net, "sgd", cfg, RngState(0))
    assert np.isfinite(ts) and ts > 0


def test_bench_config_errors(tmp_path):
    with pytest.raises(ValueError):
        bench.BenchConfig.from_dict({"optimizers": ["rmsprop"]})
    with pytest.raises(ValueError):
        bench.BenchConfig.from_dict({"layers": []})
    assert main(["bench", str(_write(tmp_path, {"latent": []})), "--out", str(tmp_path), "-q"]) == 2


def test_oversized_cells_are_skipped(monkeypatch):
    monkeypatch.setattr(bench, "MAX_PARAM_BYTES", 10)
    rows = bench.run_bench(bench.BenchConfig(layers=(0,), latent=(4,), optimizers=("sgd",), n=8, d=4, epochs=1,
                                             warmup=0, repetitions=1))
    assert [r["status"] for r in rows] == ["skipped", "skipped"]
