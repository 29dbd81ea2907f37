"""Evaluation protocol, experiment pipeline, containers and configuration."""

from .config import ExperimentConfig, load, loads
from .containers import ModelContainer, read_dataset, read_model, write_dataset, write_model
from .evaluation import EvalReport, evaluate_method
from .experiment import Pipeline

__all__ = ["ExperimentConfig", "load", "loads", "ModelContainer", "read_dataset", "read_model",
           "write_dataset", "write_model", "EvalReport", "evaluate_method", "Pipeline"]
