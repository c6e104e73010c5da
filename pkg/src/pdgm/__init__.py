"""Path-dependent Deep Galerkin Method: an LSTM/feed-forward solver for
path-dependent PDEs, with closed-form and Monte Carlo oracles."""

from .kernels import BACKEND
from .nn import AdamState, PdgmParams, init_params, load_params, pdgm_forward, save_params
from .paths import DiscretePath, PathBatch, PathState
from .problems import PpdeProblem, build_problem
from .simulation import SimSpec, simulate
from .trainer import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AdamState", "DiscretePath", "PathBatch", "PathState", "PdgmParams",
    "PpdeProblem", "SimSpec", "TrainConfig", "TrainReport", "build_problem", "init_params",
    "load_params", "pdgm_forward", "save_params", "simulate", "train",
]
