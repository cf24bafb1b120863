"""Fluctuation fields of multi-species zero range processes with long jumps."""
from __future__ import annotations

__version__ = "0.1.0"

from .model import (Configuration, JumpKernel, ModelError, RateModel, build_rate_model, check_compatibility,
                    constant_rate, custom_rates, independent, linear_rates, potential_coupled)
from .gibbs import (DensityPoint, EnsembleError, FrameConditionError, GrandCanonicalEnsemble,
                    expectation_local, find_frame_density, invert_density, sample_configuration)
from .kmc import ComponentSet, SimulationError, Trajectory, simulate
from .operators import TestFunction, discrete_symbol, symbol_table
from .fields import FieldFrame, FieldSample, build_components, fluctuation_field
from .ou import BlowUpError, OUSpec, burgers_spec, ou_autocorrelation, ou_spec

__all__ = [
    "BlowUpError", "ComponentSet", "Configuration", "DensityPoint", "EnsembleError", "FieldFrame",
    "FieldSample", "FrameConditionError", "GrandCanonicalEnsemble", "JumpKernel", "ModelError", "OUSpec",
    "RateModel", "SimulationError", "TestFunction", "Trajectory", "build_components", "build_rate_model",
    "burgers_spec", "check_compatibility", "constant_rate", "custom_rates", "discrete_symbol",
    "expectation_local", "find_frame_density", "fluctuation_field", "independent", "invert_density",
    "linear_rates", "ou_autocorrelation", "ou_spec", "potential_coupled", "sample_configuration",
    "simulate", "symbol_table",
]
