"""Hybrid Eulerian-Lagrangian solver for 2D incompressible flow."""

from .cases import CaseConfig, load_config, resolve_config, run_case

__version__ = "0.1.0"

__all__ = ["CaseConfig", "load_config", "resolve_config", "run_case",
           "__version__"]
