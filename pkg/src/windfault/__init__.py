"""Fault detection lab for a 5-MW offshore wind turbine.

Simulates the turbine under seven fault scenarios, windows the sensor traces,
trains three deep classifiers (simple CNN, multi-headed CNN and CASU2Net) and
scores them with cross-validation and Monte Carlo dropout.
"""

__version__ = "0.1.0"
