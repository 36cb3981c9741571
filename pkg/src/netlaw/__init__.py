"""Discovery of node-wise governing equations of network dynamics.

Trajectories on a graph are differentiated, a set of small networks
separates each node's derivative into self and pairwise interaction parts,
and symbolic regression turns each part into a closed-form expression.
"""
from .config import ConfigError, PipelineConfig, load_config
from .pipeline import StageError, emit_report, run_pipeline

__version__ = "0.1.0"

__all__ = ["ConfigError", "PipelineConfig", "StageError", "emit_report", "load_config", "run_pipeline"]
