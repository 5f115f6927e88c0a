from .columns import Column, FactorColumn, IntegerColumn, NumericColumn, as_column
from .csvio import load_csv, read_csv_columns, schema_of, write_csv
from .lazy import IndexedDataset, LazyTensorColumn, materialize
from .loading import Batch, BatchSource, assemble, batch_iter, factor_features, lazy_features, numeric_features, targets
from .synthetic import mtcars, synth_classif, synth_images, synth_multimodal, synth_regression
from .task import Task
from .transforms import ALWAYS, TRAIN_ONLY, Flip, Normalize, RandomCrop, Reshape, Resize, Transform, flip, random_crop, resize_bilinear
