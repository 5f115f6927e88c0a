"""Command line entry point: ``gradpipe train|tune|resample|bench [config]``."""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import yaml
from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from .config import (ConfigError, ExperimentConfig, apply_search_space, build_learner, build_resampling,
                     build_task, default_config, load_config)
from .measures import as_measures, msr
from .tensor import derive_seed, fork_rng
from .tune import (AGGREGATE_HEADER, SCORE_HEADER, archive_header, benchmark, tune_random_search, write_roc,
                   write_rows)

log = logging.getLogger("gradpipe.cli")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradpipe", description="Train, resample, tune and time network pipelines.")
    p.add_argument("command", choices=["train", "tune", "resample", "bench"])
    p.add_argument("config", nargs="?", help="YAML experiment (or bench) config")
    p.add_argument("--synth", choices=["regr", "multimodal"], help="run a bundled synthetic experiment")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--threads", type=int, help="BLAS thread limit")
    p.add_argument("--out", default=None, help="output directory (default: ./out)")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


@contextlib.contextmanager
def _file_log(path: Path):
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("gradpipe")
    old = root.level
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        yield
    finally:
        root.removeHandler(handler)
        root.setLevel(old)
        handler.close()


def _experiment(args) -> ExperimentConfig:
    if args.config and args.synth:
        raise ConfigError("give either a config file or --synth, not both")
    if args.synth:
        return default_config(args.synth)
    if not args.config:
        raise ConfigError("a config file or --synth is required")
    return load_config(args.config)


def _measures(cfg: ExperimentConfig, task):
    if cfg.measures:
        return as_measures(cfg.measures)
    return as_measures(["classif.ce"] if task.task_type == "classif" else ["regr.mse"])


def cmd_train(cfg: ExperimentConfig, seed: int, out: Path) -> int:
    with fork_rng(derive_seed(seed, 0)):
        task = build_task(cfg.data)
    learner = build_learner(cfg)
    resampling = build_resampling(cfg.resampling)
    with fork_rng(derive_seed(seed, 1)):
        resampling.instantiate(task)
    train_ids, test_ids = resampling.train_set(0), resampling.test_set(0)
    valid = test_ids if learner.validate == "test" else None
    with _file_log(out / "train.log"), fork_rng(derive_seed(seed, 2)):
        learner.train(task, train_ids, valid_row_ids=valid)
        pred = learner.predict(task, test_ids)
    rows = [{"measure": m.id, "score": m.score(pred)} for m in _measures(cfg, task)]
    for k, v in learner.internal_valid_scores.items():
        rows.append({"measure": f"internal_valid.{k}", "score": v})
    write_rows(out / "metrics.csv", rows, ["measure", "score"])
    payloads = _payloads(learner)
    if payloads:
        if len(payloads) == 1:
            (out / "model.bin").write_bytes(next(iter(payloads.values())))
        else:
            for name, buf in payloads.items():
                (out / f"model.{name}.bin").write_bytes(buf)
    for r in rows:
        log.info("%s = %.6g", r["measure"], r["score"])
    return 0 if not learner.fallback_used else 1


def _payloads(learner) -> dict:
    if hasattr(learner, "marshal"):
        learner.marshal()
    model = learner.model
    if isinstance(model, dict):
        return {k: l.model.payload for k, l in model.items() if l.model is not None and l.model.payload}
    payload = getattr(model, "payload", None)
    return {learner.id: payload} if payload else {}


def cmd_resample(cfg: ExperimentConfig, seed: int, out: Path) -> int:
    with fork_rng(derive_seed(seed, 0)):
        task = build_task(cfg.data)
    learner = build_learner(cfg)
    measures = _measures(cfg, task)
    with _file_log(out / "train.log"):
        res = benchmark([task], [learner], [build_resampling(cfg.resampling)], measures, seed=seed)
    write_rows(out / "scores.csv", res.score_rows(), SCORE_HEADER)
    write_rows(out / "aggregate.csv", res.aggregate(), AGGREGATE_HEADER)
    rr = res.results[0]
    preds = [p for p in rr.predictions if p is not None]
    if task.task_type == "classif" and preds and preds[0].prob is not None and preds[0].prob.shape[1] == 2:
        write_roc(out / "roc.csv", rr.prediction())
    for row in res.aggregate():
        log.info("%s %s = %s", row["learner_id"], row["measure"], row["score"])
    for i, err in rr.errors:
        log.error("iteration %d failed: %s", i, err)
    return 0 if res.n_errors == 0 else 1


def cmd_tune(cfg: ExperimentConfig, seed: int, out: Path) -> int:
    if not cfg.tuning:
        raise ConfigError("the tuning section is missing")
    with fork_rng(derive_seed(seed, 0)):
        task = build_task(cfg.data)
    learner = build_learner(cfg)
    apply_search_space(learner, cfg.tuning.get("search_space", {}))
    mspec = cfg.tuning.get("measure") or _measures(cfg, task)[0].id
    measure = msr(mspec["id"], mspec.get("minimize")) if isinstance(mspec, dict) else msr(mspec)
    with _file_log(out / "train.log"):
        result = tune_random_search(learner, task, build_resampling(cfg.resampling), measure,
                                    int(cfg.tuning["term_evals"]), seed=seed)
    write_rows(out / "archive.csv", result.archive, archive_header(result))
    (out / "best.txt").write_text(result.summary() + "\n", encoding="utf-8")
    log.info("best %s = %s\n%s", measure.id, result.best_score, result.summary())
    return 0 if all(r["errors"] == 0 for r in result.archive) else 1


def cmd_bench(config_path, seed, threads, out: Path) -> int:
    raw = {}
    if config_path:
        raw = yaml.safe_load(Path(config_path).read_text(encoding="utf-8")) or {}
        raw = raw.get("bench", raw)
    if seed is not None:
        raw["seed"] = seed
    if threads is not None:
        raw["threads"] = threads
    cfg = bench_mod.BenchConfig.from_dict(raw)
    rows = bench_mod.run_bench(cfg, progress=log.info)
    write_rows(out / "bench.csv", rows, bench_mod.HEADER)
    ratios = [{"optimizer": o, "latent": lat, "layers": lay, "ratio": r}
              for (o, lat, lay), r in bench_mod.overhead_ratios(rows).items()]
    write_rows(out / "ratios.csv", ratios, ["optimizer", "latent", "layers", "ratio"])
    (out / "bench_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    return 0 if all(r["status"] in ("ok", "skipped") for r in rows) else 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING if args.quiet else logging.INFO)
    console.setFormatter(logging.Formatter("%(message)s"))
    logging.getLogger("gradpipe").addHandler(console)
    logging.getLogger("gradpipe").setLevel(logging.INFO)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _run(args, out)
    except (ConfigError, ValueError, KeyError, OSError) as err:
        print(f"gradpipe: error: {err}", file=sys.stderr)
        return 2
    finally:
        logging.getLogger("gradpipe").removeHandler(console)


def _run(args, out: Path) -> int:
    if args.command == "bench":
        return cmd_bench(args.config, args.seed, args.threads, out)
    cfg = _experiment(args)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg.seed is not None else 0)
    cfg.seed = seed
    (out / "config.yaml").write_text(cfg.dump(), encoding="utf-8")
    run = {"train": cmd_train, "tune": cmd_tune, "resample": cmd_resample}[args.command]
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    with limits:
        return run(cfg, seed, out)


if __name__ == "__main__":
    sys.exit(main())
