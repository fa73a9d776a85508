"""Merge-coordination simulator for connected automated vehicles.

Centralized barrier-constrained velocity control against a FIFO benchmark,
with paired Monte Carlo experiments and powertrain-agnostic energy metrics.
"""

__version__ = "0.1.0"
