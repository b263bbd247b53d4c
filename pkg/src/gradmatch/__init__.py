"""Gradient-matching subset selection for data-efficient training."""
from .bank import GradientBank, build_per_batch, build_per_class, build_per_sample
from .data import Dataset, SplitSpec, make_gaussian_blobs, split
from .matching import eval_E_lambda, eval_F_lambda, solve_nnls_ridge
from .models import ModelState, init_model
from .selectors import Selection, SelectorConfig, Strategy, select
from .trainer import RunRecord, TrainConfig, train

__all__ = [
    "Dataset", "SplitSpec", "make_gaussian_blobs", "split",
    "ModelState", "init_model",
    "GradientBank", "build_per_sample", "build_per_batch", "build_per_class",
    "eval_E_lambda", "eval_F_lambda", "solve_nnls_ridge",
    "Selection", "SelectorConfig", "Strategy", "select",
    "RunRecord", "TrainConfig", "train",
]
__version__ = "0.1.0"
