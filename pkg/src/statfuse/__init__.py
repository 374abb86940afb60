"""Statistical matching of two weighted samples by optimal transport.

Typical flow: load two :class:`SampleFrame` objects, harmonize their weights
with :func:`harmonize_pair`, build a :func:`cost_matrix`, solve the matching
with :func:`solve_transport` and compute joint estimates from any of the
fused representations (:func:`fuse`).
"""

__version__ = "0.1.0"

from .balance import build_design, select_balanced
from .distance import cost_matrix, pooled_covariance
from .errors import (
    CalibrationError,
    ConfigurationError,
    DataError,
    DomainError,
    InfeasibleError,
    NumericalError,
    StatfuseError,
)
from .estimate import contingency, covariance_yz, fuse, mean_estimate, predict, renssen_covariance
from .frame import SampleFrame, detect_overlap, load_frame, write_frame
from .harmonize import alpha_star, harmonize_pair, kl_calibrate
from .transport import TransportPlan, load_plan, save_plan, solve_transport, verify_plan

__all__ = [
    "CalibrationError", "ConfigurationError", "DataError", "DomainError", "InfeasibleError",
    "NumericalError", "SampleFrame", "StatfuseError", "TransportPlan", "alpha_star",
    "build_design", "contingency", "cost_matrix", "covariance_yz", "detect_overlap", "fuse",
    "harmonize_pair", "kl_calibrate", "load_frame", "load_plan", "mean_estimate",
    "pooled_covariance", "predict", "renssen_covariance", "save_plan", "select_balanced",
    "solve_transport", "verify_plan", "write_frame",
]
