"""Kernel SVM training with least-squares-type DC losses."""

from .data import Dataset, Metrics, evaluate, flip_labels, gen_checkerboard, gen_sinc, parse_libsvm, read_libsvm, split
from .errors import CapacityError, InputError, NumericalError, ParseError, UniSVMError
from .kernels import KernelSpec, LowRankFactor, gram_cross, gram_full, kernel_eval, pivoted_cholesky
from .losses import LossSpec, dpsi, lsdc_bound, m_abc, make_loss, parse_loss, psi
from .modelio import load_model, save_model
from .solver import Model, TrainConfig, TrainReport, predict, train

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "Dataset", "InputError", "KernelSpec", "LossSpec", "LowRankFactor", "Metrics",
    "Model", "NumericalError", "ParseError", "TrainConfig", "TrainReport", "UniSVMError",
    "dpsi", "evaluate", "flip_labels", "gen_checkerboard", "gen_sinc", "gram_cross", "gram_full",
    "kernel_eval", "load_model", "lsdc_bound", "m_abc", "make_loss", "parse_libsvm", "parse_loss",
    "pivoted_cholesky", "predict", "psi", "read_libsvm", "save_model", "split", "train",
]
