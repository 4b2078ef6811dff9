"""Cooperative RSS localization: channel models, formation geometry, EKF tracking."""

from .channel import Ieee802154, LogDistance, LogDistanceClamped, fit_log_model, predict_rss, sample_rss
from .ekf import FilterState, MeasurementModel, discretize, ekf_step
from .geometry import Attitude, FormationSpec, formation_positions
from .sim import Scenario, builtin_scenario, error_distance, run_monte_carlo, run_trial

__version__ = "0.1.0"
