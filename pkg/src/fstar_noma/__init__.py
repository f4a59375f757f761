"""Joint beamforming, STAR coefficient and element position optimisation for a
fluid STAR surface serving a NOMA downlink."""

from .ao import AoState, BaselineKind, greedy_discrete_placement, oma_rate, run_ao
from .bench import ConfigError, SweepSpec, default_scenario, load_scenario, run_sweep, write_report, write_scenario
from .channels import NlosDraws, PathLossModel, Scenario, assemble_channels, draw_nlos
from .metrics import Beamformers, sinr_all, sum_rate
from .surface import ElementLayout, SurfaceCoeffs, default_coeffs, uniform_grid_layout, validate_coeffs, validate_layout

__version__ = "0.1.0"

__all__ = [
    "AoState", "BaselineKind", "greedy_discrete_placement", "oma_rate", "run_ao",
    "ConfigError", "SweepSpec", "default_scenario", "load_scenario", "run_sweep", "write_report", "write_scenario",
    "NlosDraws", "PathLossModel", "Scenario", "assemble_channels", "draw_nlos",
    "Beamformers", "sinr_all", "sum_rate",
    "ElementLayout", "SurfaceCoeffs", "default_coeffs", "uniform_grid_layout", "validate_coeffs", "validate_layout",
]
