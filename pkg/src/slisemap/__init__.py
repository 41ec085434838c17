"""Joint low-dimensional embeddings and per-point interpretable local models.

The main entry points are :func:`slisemap.solver.fit` for fitting,
:func:`slisemap.solver.add_new` for out-of-sample extension,
:mod:`slisemap.metrics` for evaluation, :mod:`slisemap.data` for the
synthetic benchmark and CSV ingestion, and the ``slisemap`` CLI for the
whole pipeline.
"""

from .data import Dataset, Normalization, RsynthSpec, generate_rsynth, \
    load_csv, normalize, subsample
from .errors import DataError, NumericError, ShapeError, SlisemapError
from .metrics import MetricReport, cluster_purity, compute_report, coverage, \
    fidelity, fit_global_model, loss_threshold
from .model import TaskKind
from .objective import Hyperparams, LossState, loss_gradients, loss_state, \
    total_loss
from .solver import Solution, SolverConfig, add_new, escape, fit

__all__ = [
    "Dataset", "Normalization", "RsynthSpec", "generate_rsynth", "load_csv",
    "normalize", "subsample", "DataError", "NumericError", "ShapeError",
    "SlisemapError", "MetricReport", "cluster_purity", "compute_report",
    "coverage", "fidelity", "fit_global_model", "loss_threshold", "TaskKind",
    "Hyperparams", "LossState", "loss_gradients", "loss_state", "total_loss",
    "Solution", "SolverConfig", "add_new", "escape", "fit",
]

__version__ = "0.1.0"
