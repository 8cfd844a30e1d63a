"""Process-tensor MPO simulation of non-Markovian open quantum systems.

The package builds process tensors (MPOs over the time axis) for
environments given as explicit modes, discretized continua or Gaussian
spectral densities, compresses them with truncated-SVD sweeps, stores
and recombines them, and propagates reduced system density matrices
under time-dependent Hamiltonians, Lindblad terms and mid-run operator
insertions.  Console entry points: ``ACE``, ``PTB_analyze``,
``readexpression``.
"""

from .config import ConfigError, ParameterMap, parse_config_file
from .expressions import (ExpressionError, HBAR, KB, matrix_from_expression,
                          scalar_from_expression)
from .methods import (BathSpec, CompressionParams, InfluenceKernel,
                      SingleModeSpec, ace_sequential, ace_tree,
                      bath_correlation, discretize_continuum, gaussian_dnc,
                      gaussian_jp, gaussian_kernels, gaussian_periodic,
                      gaussian_pt, pt_from_single_mode, qd_phonon_J)
from .process_tensor import (ProcessTensor, expand_outer, load_pt,
                             preselect_combine, save_pt, stack)
from .propagate import Event, Output, PropagationResult, TimeGrid, propagate
from .system import GaussPulse, SystemLiouvillian, read_pulse_file

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ParameterMap", "parse_config_file",
    "ExpressionError", "HBAR", "KB",
    "matrix_from_expression", "scalar_from_expression",
    "BathSpec", "CompressionParams", "InfluenceKernel", "SingleModeSpec",
    "ace_sequential", "ace_tree", "bath_correlation", "discretize_continuum",
    "gaussian_dnc", "gaussian_jp", "gaussian_kernels", "gaussian_periodic",
    "gaussian_pt", "pt_from_single_mode", "qd_phonon_J",
    "ProcessTensor", "expand_outer", "load_pt", "preselect_combine",
    "save_pt", "stack",
    "Event", "Output", "PropagationResult", "TimeGrid", "propagate",
    "GaussPulse", "SystemLiouvillian", "read_pulse_file",
    "__version__",
]
