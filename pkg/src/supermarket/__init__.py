"""Simulator, mean-field ODE solver and statistical verification harness for
the n-server join-shortest-of-d ("supermarket") queueing model."""

from .model import EmpiricalLaw, ModelParams, TailVector, new_params, tail_profile, queue_counts

__all__ = [
    "EmpiricalLaw",
    "ModelParams",
    "TailVector",
    "new_params",
    "tail_profile",
    "queue_counts",
]

__version__ = "0.1.0"
