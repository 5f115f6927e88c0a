"""Reverse-mode tensors, network layers and composable learning pipelines on numpy."""

from . import functional, nn, optim
from .callbacks import Callback, TrainContext
from .data import LazyTensorColumn, Task, load_csv, mtcars
from .learner import (GraphLearner, Learner, LearnerFeatureless, LearnerTorch, LearnerTorchMLP,
                      LearnerTorchModel, LearnerTorchModule, as_learner, ingress_categ, ingress_ltnsr,
                      ingress_num, lrn, set_validate)
from .measures import Prediction, msr
from .netgraph import UNKNOWN, ModelDescriptor, NetworkModule, collapse, nn_graph, po, ppl
from .netgraph import nn as nn_op
from .paramset import ParamSet, to_tune
from .pipeline import NO_OP, Graph, PipeOp, as_graph, selector_all, selector_name, selector_type
from .serialization import pack_state, unpack_state
from .tensor import (RngState, Tensor, default_rng, derive_seed, fork_rng, get_default_dtype, manual_seed,
                     no_grad, set_default_dtype)
from .torchconf import t_clbk, t_loss, t_opt
from .tune import benchmark, partition, resample, rsmp, tune_random_search

__version__ = "0.1.0"
