"""Monotonic regression with Gaussian-process-parameterized SDE flows.

Noisy 1-D data are fit under a hard monotonicity constraint by learning a
sparse-GP flow field whose coherent SDE solutions are monotone in their
initial conditions; sampled trajectories carry calibrated uncertainty.
"""

from .data import Dataset, DatasetMeta
from .errors import NumericalError, TrainingError
from .exact_gp import ExactGPModel, exact_gp_fit, exact_gp_predict
from .flow import (FlowModel, FlowPrediction, FlowSample, ParticleState,
                   euler_maruyama_step, flow_field, ordering_violations,
                   predict, replay_flow, sample_flow, streamlines)
from .kernels import (KERNEL_VARIANTS, MATERN32, SQUARED_EXPONENTIAL,
                      KernelParams, kernel_matrix)
from .linalg import CholFactor, cholesky, gaussian_kl, mvn_sample
from .train import OptimizerConfig, TraceRecord, elbo, elbo_grad, fit, init_model

__version__ = "0.1.0"

__all__ = [
    "CholFactor", "Dataset", "DatasetMeta", "ExactGPModel", "FlowModel",
    "FlowPrediction", "FlowSample", "KERNEL_VARIANTS", "KernelParams",
    "MATERN32", "NumericalError", "OptimizerConfig", "ParticleState",
    "SQUARED_EXPONENTIAL", "TraceRecord", "TrainingError", "cholesky",
    "elbo", "elbo_grad", "euler_maruyama_step", "exact_gp_fit",
    "exact_gp_predict", "fit", "flow_field", "gaussian_kl", "init_model",
    "kernel_matrix", "mvn_sample", "ordering_violations", "predict",
    "replay_flow", "sample_flow", "streamlines",
]
