"""Threshold-policy index computation and verification for two-action discounted projects."""

from .engine import compute_index, compute_metrics, horizon_for_tolerance
from .model import DiscountedProject, ExtendedThreshold, FiniteSupportKernel, QuadratureKernel, ThresholdPolicy
from .models import ChannelParams, StoppingSpec, channel_project, stopping_project

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "DiscountedProject",
    "ExtendedThreshold",
    "FiniteSupportKernel",
    "QuadratureKernel",
    "StoppingSpec",
    "ThresholdPolicy",
    "channel_project",
    "compute_index",
    "compute_metrics",
    "horizon_for_tolerance",
    "stopping_project",
]
