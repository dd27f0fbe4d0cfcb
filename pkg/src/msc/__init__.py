"""Multi-slice clustering (MSC) of 3rd-order tensors, sequential and distributed."""

from .core import (ClusterSet, DegenerateInputError, ModeResult, build_eigen_matrix,
                   check_epsilon_hypothesis, default_eps, marginals, max_gap_init, msc,
                   msc_mode, msc_modes, normalize, refine, similarity, theorem_threshold)
from .evaluate import QualityReport, quality, recovery_rate, wishart_diagnostic
from .parallel import parallel_msc, run_parallel, split_groups
from .spectral import ConvergenceError, EigenPair, covariance, top_eigenpair
from .synth import GroundTruth, generate, indicator_vector, synthetic
from .tensor import Tensor3, block_range, load_tensor, mode_slice, save_tensor

__version__ = "0.1.0"
