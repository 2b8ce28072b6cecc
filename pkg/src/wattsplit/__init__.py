"""wattsplit: nonintrusive load monitoring for production machines.

Simulates machine-scale aggregate electrical waveforms with exact per-load
ground truth, disaggregates aggregates into constituent load power series
(switching events, bridge-rectifier peak cutting, harmonic correlation),
labels the loads and scores estimates against ground truth.
"""

from .core import (
    CURRENT,
    VOLTAGE,
    PeriodFeatures,
    SensorModel,
    Waveform,
    apply_sensor_model,
    compute_period_features,
    segment_periods,
)

__version__ = "0.1.0"

__all__ = [
    "CURRENT",
    "VOLTAGE",
    "Waveform",
    "SensorModel",
    "PeriodFeatures",
    "segment_periods",
    "compute_period_features",
    "apply_sensor_model",
    "__version__",
]
