"""Tabular and image features fused in one network, evaluated by a grouped holdout.

Writes roc.csv (threshold, fpr, tpr) next to this script's working directory.
"""

import gradpipe as gp
from gradpipe.config import MULTIMODAL_EXPERIMENT, build_learner, build_task
from gradpipe.config import ExperimentConfig
from gradpipe.tune import write_roc

cfg = ExperimentConfig.from_dict(MULTIMODAL_EXPERIMENT)
with gp.fork_rng(7):
    task = build_task(cfg.data)
print(task)
print("groups:", len(set(task.groups())), "  class counts:", dict(zip(task.class_names,
                                                                     [int((task.truth() == i).sum())
                                                                      for i in range(2)])))

learner = build_learner(cfg)
rr = gp.resample(task, learner, gp.rsmp("holdout"), seed=7, store_models=True)
for m in ("classif.auc", "classif.acc"):
    print(f"{m}: {rr.aggregate(m):.3f}")

roc = write_roc("roc.csv", rr.prediction())
print(f"roc.csv: {len(roc)} points, first {roc[0].tolist()}, last {roc[-1].tolist()}")

# the fitted network inside the graph, one line per layer with its output shape
(model_learner,) = rr.iterations[0].learner.model.values()
print(model_learner.model.network)
