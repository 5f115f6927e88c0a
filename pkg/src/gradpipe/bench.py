"""Per-batch training time: a hand-written loop against the full learner path.

Both implementations train the same MLP (input -> latent with ReLU, then
``layers`` latent -> latent blocks with ReLU, then a linear output) on a
synthetic regression task.  The first ``warmup`` epochs of every run are
excluded from the timing.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .callbacks import Callback
from .data.synthetic import synth_regression
from .learner import LearnerTorchModule, ingress_num
from .nn import Linear, ReLU, Sequential, mse_loss
from .optim import make_optimizer
from .paramset import ParamSet, p_int
from .tensor import RngState, Tensor, default_rng, derive_seed, fork_rng, get_default_dtype
from .torchconf import TorchCallback, t_opt

HEADER = ["optimizer", "latent", "layers", "implementation", "median_ms", "q10_ms", "q90_ms",
          "repetitions", "status"]

# cells whose parameters alone would exceed this many bytes are skipped
MAX_PARAM_BYTES = 2 * 1024**3


@dataclass
class BenchConfig:
    layers: tuple = (0, 4)
    latent: tuple = (100, 1000)
    optimizers: tuple = ("sgd", "adamw")
    epochs: int = 20
    warmup: int = 4
    repetitions: int = 10
    batch_size: int = 32
    n: int = 2000
    d: int = 1000
    threads: int = 1
    lr: float = 1e-3
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown bench settings {sorted(unknown)}")
        vals = dict(d)
        for k in ("layers", "latent", "optimizers"):
            if k in vals:
                v = vals[k]
                vals[k] = tuple(v) if isinstance(v, (list, tuple)) else (v,)
        cfg = cls(**vals)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("layers", "latent", "optimizers"):
            out[k] = list(out[k])
        return out

    def validate(self):
        if not self.layers or not self.latent or not self.optimizers:
            raise ValueError("bench grid is empty")
        for o in self.optimizers:
            if o not in ("sgd", "adamw"):
                raise ValueError(f"unknown optimizer {o!r}")
        if self.epochs < 1 or self.warmup < 0 or self.repetitions < 1 or self.batch_size < 1:
            raise ValueError("epochs, repetitions and batch_size must be positive; warmup non-negative")


def make_network(d: int, layers: int, latent: int) -> Sequential:
    mods = [Linear(d, latent), ReLU()]
    for _ in range(layers):
        mods += [Linear(latent, latent), ReLU()]
    mods.append(Linear(latent, 1))
    return Sequential(*mods)


def n_parameters(d: int, layers: int, latent: int) -> int:
    return d * latent + latent + layers * (latent * latent + latent) + latent + 1


def time_raw_loop(x: np.ndarray, y: np.ndarray, net: Sequential, optimizer: str, cfg: BenchConfig,
                  rng: RngState) -> float:
    """Seconds per batch over the timed epochs of a plain epoch/batch loop."""
    opt = make_optimizer(optimizer, list(net.named_parameters()), lr=cfg.lr)
    params = net.parameters()
    n = len(x)
    gen = rng.generator()
    batches = 0
    start = None
    for epoch in range(cfg.warmup + cfg.epochs):
        if epoch == cfg.warmup:
            start = time.perf_counter()
        order = gen.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            for p in params:
                p.grad = None
            loss = mse_loss(net(Tensor(x[idx])), y[idx])
            loss.backward()
            opt.step()
            if epoch >= cfg.warmup:
                batches += 1
    return (time.perf_counter() - start) / batches


class _EpochTimer(Callback):
    id = "bench_timer"

    def __init__(self, warmup: int = 0):
        super().__init__()
        self.warmup = warmup
        self.start = None
        self.stop = None

    def on_epoch_begin(self):
        if self.ctx.epoch == self.warmup + 1:
            self.start = time.perf_counter()
            self.steps_before = self.ctx.step

    def on_end(self):
        self.stop = time.perf_counter()
        self.steps = self.ctx.step - self.steps_before

    def state_dict(self):
        return {"seconds": self.stop - self.start, "steps": self.steps}


def time_framework(task, net_factory: Callable[[], Sequential], optimizer: str, cfg: BenchConfig) -> float:
    """Seconds per batch over the timed epochs when training through a learner."""
    timer = TorchCallback("bench_timer", _EpochTimer, ParamSet([p_int("warmup", 0, None)], warmup=cfg.warmup))
    learner = LearnerTorchModule(lambda t: net_factory(), {"x": ingress_num()}, "regr", id="bench",
                                 loss="mse", optimizer=t_opt(optimizer, lr=cfg.lr), callbacks=[timer],
                                 epochs=cfg.warmup + cfg.epochs, batch_size=cfg.batch_size, shuffle=True)
    learner.train(task)
    state = learner.model.callback_states["bench_timer"]
    return state["seconds"] / state["steps"]


def _quantiles(ts) -> tuple[float, float, float]:
    a = np.asarray(ts) * 1e3
    return float(np.median(a)), float(np.quantile(a, 0.1)), float(np.quantile(a, 0.9))


def run_bench(cfg: BenchConfig, progress: Callable[[str], None] | None = None) -> list[dict]:
    """One row per grid cell and implementation (``raw`` / ``framework``)."""
    cfg.validate()
    rows = []
    with fork_rng(cfg.seed):
        task = synth_regression(cfg.n, cfg.d, default_rng())
    x = np.stack([task.columns[f].values for f in task.feature_names], axis=1).astype(get_default_dtype())
    y = task.columns[task.target].values.reshape(-1, 1).astype(get_default_dtype())
    with threadpool_limits(cfg.threads):
        for oi, opt in enumerate(cfg.optimizers):
            for li, latent in enumerate(cfg.latent):
                for ki, layers in enumerate(cfg.layers):
                    cell = dict(optimizer=opt, latent=latent, layers=layers)
                    if n_parameters(cfg.d, layers, latent) * 4 * 4 > MAX_PARAM_BYTES:
                        for impl in ("raw", "framework"):
                            rows.append({**cell, "implementation": impl, "median_ms": "", "q10_ms": "",
                                         "q90_ms": "", "repetitions": 0, "status": "skipped"})
                        continue
                    raw, fw = [], []
                    for rep in range(cfg.repetitions):
                        s = derive_seed(cfg.seed, oi, li, ki, rep)
                        with fork_rng(s):
                            net = make_network(cfg.d, layers, latent)
                        raw.append(time_raw_loop(x, y, net, opt, cfg, RngState(s, 1)))
                        with fork_rng(s):
                            fw.append(time_framework(task, lambda: make_network(cfg.d, layers, latent), opt, cfg))
                    for impl, ts in (("raw", raw), ("framework", fw)):
                        med, q10, q90 = _quantiles(ts)
                        rows.append({**cell, "implementation": impl, "median_ms": med, "q10_ms": q10,
                                     "q90_ms": q90, "repetitions": len(ts), "status": "ok"})
                    if progress is not None:
                        progress(f"{opt} latent={latent} layers={layers}: raw {_quantiles(raw)[0]:.3f} ms, "
                                 f"framework {_quantiles(fw)[0]:.3f} ms per batch")
    return rows


def overhead_ratios(rows: list[dict]) -> dict:
    """framework median / raw median per (optimizer, latent, layers) cell."""
    med = {}
    for r in rows:
        if r["status"] == "ok":
            med[(r["optimizer"], r["latent"], r["layers"], r["implementation"])] = r["median_ms"]
    out = {}
    for (o, lat, lay, impl), v in med.items():
        if impl == "framework" and (o, lat, lay, "raw") in med:
            out[(o, lat, lay)] = v / med[(o, lat, lay, "raw")]
    return out
